#include "sae/ner_fit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <boost/math/tools/minima.hpp>
#include <boost/random/normal_distribution.hpp>

#include "sae/error.hpp"

namespace sae {

void NerParams::validate_allow_degenerate() const {
  if (beta.size() == 0 || !beta.allFinite()) throw InputError("NerParams: beta must be finite and non-empty");
  if (!std::isfinite(sigma2_u) || sigma2_u < 0.0) throw InputError("NerParams: sigma2_u must be >= 0");
  if (!std::isfinite(sigma2_e) || sigma2_e < 0.0) throw InputError("NerParams: sigma2_e must be >= 0");
}

void NerParams::validate() const {
  validate_allow_degenerate();
  if (!(sigma2_e > 0.0)) throw InputError("NerParams: sigma2_e must be > 0");
}

// -------------------------------------------------------------------------
// Sufficient statistics and the profiled REML criterion
// -------------------------------------------------------------------------

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

struct AreaStats {
  double n = 0.0;
  Eigen::MatrixXd sxx;
  Eigen::VectorXd sxy;
  Eigen::VectorXd xsum;
  double syy = 0.0;
  double ysum = 0.0;
};

struct Stats {
  std::vector<AreaStats> areas;
  double n = 0.0;
  Index p = 0;
  double y_offset = 0.0;  // subtracted from y when column 0 is an intercept
  bool has_intercept = false;
};

Stats collect(const SurveyDataset& s) {
  Stats st;
  st.p = s.covariate_dim();
  st.n = static_cast<double>(s.total_size());
  st.has_intercept = true;
  double ysum = 0.0;
  for (const auto& a : s.areas()) {
    if (!a.has_y()) throw InputError("fit_ner_reml: area '" + a.id + "' has no responses");
    st.has_intercept = st.has_intercept && (a.x.col(0).array() == 1.0).all();
    ysum += a.y.sum();
  }
  if (st.has_intercept) st.y_offset = ysum / st.n;
  st.areas.reserve(s.area_count());
  for (const auto& a : s.areas()) {
    const Eigen::VectorXd y = a.y.array() - st.y_offset;
    AreaStats as;
    as.n = static_cast<double>(a.size());
    as.sxx = a.x.transpose() * a.x;
    as.sxy = a.x.transpose() * y;
    as.xsum = a.x.colwise().sum().transpose();
    as.syy = y.squaredNorm();
    as.ysum = y.sum();
    st.areas.push_back(std::move(as));
  }
  return st;
}

struct Profile {
  double loglik = -std::numeric_limits<double>::infinity();
  double sigma2_e = 0.0;
  Eigen::VectorXd beta;  // for the offset-adjusted response
  bool ok = false;
};

// Profiled REML at ratio rho = sigma2_u / sigma2_e.
Profile profile_at(const Stats& st, double rho) {
  const Index p = st.p;
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(p, p);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(p);
  double c = 0.0;
  double logdet_v = 0.0;
  for (const auto& a : st.areas) {
    const double k = rho / (1.0 + a.n * rho);  // gamma_d / n_d
    A += a.sxx - k * a.xsum * a.xsum.transpose();
    b += a.sxy - k * a.xsum * a.ysum;
    c += a.syy - k * a.ysum * a.ysum;
    logdet_v += std::log1p(a.n * rho);
  }
  Profile out;
  Eigen::LLT<Eigen::MatrixXd> llt(A);
  if (llt.info() != Eigen::Success) return out;
  out.beta = llt.solve(b);
  const double q = c - b.dot(out.beta);
  const double dof = st.n - static_cast<double>(p);
  if (!(q > 0.0) || !std::isfinite(q)) return out;
  double logdet_a = 0.0;
  for (Index j = 0; j < p; ++j) logdet_a += 2.0 * std::log(llt.matrixL()(j, j));
  out.sigma2_e = q / dof;
  out.loglik = -0.5 * (dof * (kLog2Pi + 1.0 + std::log(out.sigma2_e)) + logdet_v + logdet_a);
  out.ok = std::isfinite(out.loglik);
  return out;
}

void check_design(const SurveyDataset& s) {
  if (s.area_count() < 2) throw InputError("fit_ner_reml: at least 2 areas required");
  const Index p = s.covariate_dim();
  if (s.total_size() <= p + 1)
    throw InputError("fit_ner_reml: need n > p + 1 (n=" + std::to_string(s.total_size()) +
                     ", p=" + std::to_string(p) + ")");
  Eigen::MatrixXd xtx = Eigen::MatrixXd::Zero(p, p);
  for (const auto& a : s.areas()) xtx += a.x.transpose() * a.x;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(xtx);
  qr.setThreshold(1e-12);
  if (qr.rank() < p) throw NumericalError("fit_ner_reml: singular design matrix");
}

}  // namespace

double reml_loglik(const SurveyDataset& s, double sigma2_u, double sigma2_e) {
  const Stats st = collect(s);
  const Index p = st.p;
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(p, p);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(p);
  double c = 0.0;
  double logdet_v = 0.0;
  for (const auto& a : st.areas) {
    const double k = sigma2_u / (sigma2_e * (sigma2_e + a.n * sigma2_u));
    A += a.sxx / sigma2_e - k * a.xsum * a.xsum.transpose();
    b += a.sxy / sigma2_e - k * a.xsum * a.ysum;
    c += a.syy / sigma2_e - k * a.ysum * a.ysum;
    logdet_v += (a.n - 1.0) * std::log(sigma2_e) + std::log(sigma2_e + a.n * sigma2_u);
  }
  Eigen::LLT<Eigen::MatrixXd> llt(A);
  if (llt.info() != Eigen::Success) throw NumericalError("reml_loglik: singular design matrix");
  const double q = c - b.dot(llt.solve(b));
  double logdet_a = 0.0;
  for (Index j = 0; j < p; ++j) logdet_a += 2.0 * std::log(llt.matrixL()(j, j));
  return -0.5 * ((st.n - static_cast<double>(p)) * kLog2Pi + logdet_v + logdet_a + q);
}

// -------------------------------------------------------------------------
// Fit
// -------------------------------------------------------------------------

NerFit fit_ner_reml(const SurveyDataset& s, const RemlOptions& options) {
  check_design(s);
  const Stats st = collect(s);

  NerFit fit;
  double best = -std::numeric_limits<double>::infinity();
  auto objective = [&](double t) {
    const Profile pr = profile_at(st, std::exp(t));
    const double v = pr.ok ? pr.loglik : -std::numeric_limits<double>::infinity();
    if (v > best) best = v;
    fit.objective_trace.push_back(best);
    return -v;
  };

  // Coarse bracket on t = log(rho), then Brent inside the best cell.
  constexpr double t_lo = -28.0;
  constexpr double t_hi = 12.0;
  constexpr int grid = 81;
  const double step = (t_hi - t_lo) / (grid - 1);
  int best_k = -1;
  double best_val = std::numeric_limits<double>::infinity();
  for (int k = 0; k < grid; ++k) {
    const double v = objective(t_lo + step * k);
    if (v < best_val) {
      best_val = v;
      best_k = k;
    }
  }
  if (best_k < 0 || !std::isfinite(best_val))
    throw NumericalError("fit_ner_reml: REML criterion not finite anywhere (degenerate responses?)");

  const double a = t_lo + step * std::max(best_k - 1, 0);
  const double b = t_lo + step * std::min(best_k + 1, grid - 1);
  // Brent's location accuracy is bounded by sqrt(eps); ask for the requested parameter tolerance.
  const int bits = std::min(std::numeric_limits<double>::digits / 2 + 1,
                            static_cast<int>(std::ceil(-std::log2(options.param_tol))));
  std::uintmax_t iters = static_cast<std::uintmax_t>(options.max_iterations);
  auto [t_hat, neg_ll] = boost::math::tools::brent_find_minima(objective, a, b, bits, iters);
  fit.iterations = static_cast<int>(iters);
  fit.converged = fit.iterations < options.max_iterations;
  if (!fit.converged) throw NumericalError("fit_ner_reml: no convergence after max iterations");

  // Newton polish on central differences. Brent stops near sqrt(eps) in t;
  // the score root is located far more tightly.
  constexpr double h = 1e-4;
  for (int it = 0; it < 8 && t_hat > a + h && t_hat < b - h; ++it) {
    const double fm = objective(t_hat - h), f0 = objective(t_hat), fp = objective(t_hat + h);
    const double g = (fp - fm) / (2.0 * h);
    const double curv = (fp - 2.0 * f0 + fm) / (h * h);
    if (!(curv > 0.0) || !std::isfinite(g)) break;
    const double delta = std::clamp(-g / curv, -h, h);
    const double f_new = objective(t_hat + delta);
    if (!(f_new <= f0 + 1e-12 * std::abs(f0))) break;
    t_hat += delta;
    neg_ll = f_new;
    ++fit.iterations;
    if (std::abs(delta) < 1e-13) break;
  }

  const Profile pr = profile_at(st, std::exp(t_hat));
  if (!pr.ok) throw NumericalError("fit_ner_reml: REML criterion not finite at optimum");
  if (pr.sigma2_e < options.sigma2_e_floor)
    throw NumericalError("fit_ner_reml: degenerate fit, sigma2_e below floor");

  fit.theta.sigma2_e = pr.sigma2_e;
  fit.theta.sigma2_u = std::exp(t_hat) * pr.sigma2_e;
  if (fit.theta.sigma2_u < kSigma2uFloor || t_hat <= t_lo + step * 1e-3) {
    fit.theta.sigma2_u = kSigma2uFloor;
    fit.boundary = true;
  }
  fit.theta.beta = pr.beta;
  if (st.has_intercept) fit.theta.beta(0) += st.y_offset;
  fit.log_reml = -neg_ll;

  for (const auto& area : s.areas()) {
    const AreaPosterior post = area_posterior(fit.theta, area);
    fit.effects.push_back({area.id, post.mu_u, post.gamma, area.size()});
    const Eigen::VectorXd r = area.y - area.x * fit.theta.beta;
    for (Index i = 0; i < area.size(); ++i)
      fit.residuals.push_back({area.id, area.unit_ids[static_cast<std::size_t>(i)], r(i) - post.mu_u});
  }
  return fit;
}

// -------------------------------------------------------------------------
// Posteriors and conditional draws
// -------------------------------------------------------------------------

double shrinkage_factor(double sigma2_u, double sigma2_e, double n) {
  if (sigma2_u <= kSigma2uFloor || n <= 0.0) return 0.0;
  if (sigma2_e == 0.0) return 1.0;
  return sigma2_u / (sigma2_u + sigma2_e / n);
}

AreaPosterior prior_posterior(const NerParams& theta, std::string area_id) {
  AreaPosterior post;
  post.area_id = std::move(area_id);
  post.var_u = theta.sigma2_u <= kSigma2uFloor ? 0.0 : theta.sigma2_u;
  return post;
}

AreaPosterior area_posterior(const NerParams& theta, const AreaSample& area) {
  if (!area.has_y()) return prior_posterior(theta, area.id);
  AreaPosterior post;
  post.area_id = area.id;
  post.n = area.size();
  post.sampled = true;
  const double n = static_cast<double>(post.n);
  post.gamma = shrinkage_factor(theta.sigma2_u, theta.sigma2_e, n);
  if (post.gamma > 0.0) {
    const double ybar = area.y.mean();
    const double xbar_beta = (area.x * theta.beta).mean();
    post.mu_u = post.gamma * (ybar - xbar_beta);
    post.var_u = theta.sigma2_u * (1.0 - post.gamma);
  }
  return post;
}

std::vector<AreaPosterior> area_posteriors(const NerParams& theta, const SurveyDataset& s,
                                           std::span<const std::string> area_ids) {
  theta.validate_allow_degenerate();
  std::vector<AreaPosterior> out;
  out.reserve(area_ids.size());
  for (const auto& id : area_ids) {
    const AreaSample* a = s.find(id);
    out.push_back(a ? area_posterior(theta, *a) : prior_posterior(theta, id));
  }
  return out;
}

Eigen::MatrixXd draw_conditional_responses(const AreaPosterior& post, const NerParams& theta,
                                           const Eigen::Ref<const Eigen::MatrixXd>& x_targets, int L_mc,
                                           Engine& rng) {
  if (L_mc < 1) throw InputError("draw_conditional_responses: L_mc must be >= 1");
  const Eigen::VectorXd mean = x_targets * theta.beta;
  const double sd_u = std::sqrt(post.var_u);
  const double sd_e = std::sqrt(theta.sigma2_e);
  boost::random::normal_distribution<double> normal;
  Eigen::MatrixXd draws(L_mc, x_targets.rows());
  for (int l = 0; l < L_mc; ++l) {
    const double u = post.mu_u + sd_u * normal(rng);
    for (Index i = 0; i < x_targets.rows(); ++i) draws(l, i) = mean(i) + u + sd_e * normal(rng);
  }
  return draws;
}

}  // namespace sae
