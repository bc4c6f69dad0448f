#include "sae/survey_tools.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <boost/math/distributions/normal.hpp>

#include "sae/error.hpp"

namespace sae {

SrsDraw srs_sample(Index N, Index n, Engine& rng) {
  if (n < 1) throw InputError("srs_sample: n must be >= 1");
  if (n > N) throw InputError("srs_sample: n exceeds the population size");
  std::vector<Index> all(static_cast<std::size_t>(N));
  std::iota(all.begin(), all.end(), Index{0});
  SrsDraw d;
  d.positions.reserve(static_cast<std::size_t>(n));
  std::sample(all.begin(), all.end(), std::back_inserter(d.positions), n, rng);
  d.pi1 = static_cast<double>(n) / static_cast<double>(N);
  d.design = srs_design(n, static_cast<double>(N));
  return d;
}

std::vector<std::string> srs_sample(std::span<const std::string> unit_ids, Index n, Engine& rng) {
  const SrsDraw d = srs_sample(static_cast<Index>(unit_ids.size()), n, rng);
  std::vector<std::string> out;
  out.reserve(d.positions.size());
  for (Index i : d.positions) out.push_back(unit_ids[static_cast<std::size_t>(i)]);
  return out;
}

SampleSizeResult required_sample_size(double N_d, double cv, double eps0, double alpha) {
  if (!(eps0 > 0.0)) throw InputError("required_sample_size: eps0 must be > 0");
  if (!(alpha > 0.0 && alpha < 1.0)) throw InputError("required_sample_size: alpha must lie in (0,1)");
  if (!(cv >= 0.0) || !std::isfinite(cv)) throw InputError("required_sample_size: cv must be >= 0");
  if (!(N_d >= 1.0)) throw InputError("required_sample_size: N_d must be >= 1");
  const double z = boost::math::quantile(boost::math::complement(boost::math::normal_distribution<double>(), alpha / 2));
  SampleSizeResult r;
  r.k = z * z * cv * cv / (eps0 * eps0);
  r.n_star = r.k * N_d / (N_d + r.k);
  r.n_star_ceil = static_cast<Index>(std::ceil(r.n_star));
  return r;
}

CvEstimate estimate_cv(const Eigen::Ref<const Eigen::VectorXd>& eb_units, double seb_point) {
  if (eb_units.size() < 2) throw InputError("estimate_cv: need at least 2 units");
  CvEstimate c;
  const double mean = eb_units.mean();
  c.sd = std::sqrt((eb_units.array() - mean).square().sum() / static_cast<double>(eb_units.size() - 1));
  if (std::abs(seb_point) < 1e-12) {
    c.undefined = true;
    return c;
  }
  c.cv = c.sd / std::abs(seb_point);
  return c;
}

double design_effect_adjust(double n_star, double deff) {
  if (!(deff > 0.0)) throw InputError("design_effect_adjust: deff must be > 0");
  return n_star * deff;
}

Eigen::VectorXd calibrate_weights(const Eigen::Ref<const Eigen::VectorXd>& w, double target) {
  if (!(target > 0.0)) throw InputError("calibrate_weights: target total must be > 0");
  const double total = w.sum();
  if (!(total > 0.0)) throw InputError("calibrate_weights: base weights add up to zero");
  return w * (target / total);
}

SurveyDataset calibrate_weights(const SurveyDataset& data, const std::map<std::string, double>& totals) {
  std::vector<Eigen::VectorXd> ws;
  ws.reserve(data.area_count());
  for (const auto& a : data.areas()) {
    auto it = totals.find(a.id);
    ws.push_back(it == totals.end() ? a.w : calibrate_weights(a.w, it->second));
  }
  return data.with_weights(std::move(ws));
}

}  // namespace sae
