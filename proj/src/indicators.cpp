#include "sae/indicators.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "sae/error.hpp"

namespace sae {

double Transform::forward(double z) const {
  return kind == Kind::identity ? z : std::log(z + shift);
}

double Transform::inverse(double y) const {
  return kind == Kind::identity ? y : std::exp(y) - shift;
}

void IndicatorSpec::validate() const {
  if (!(alpha >= 0.0)) throw InputError("FGT order alpha must be >= 0");
  if (kind == IndicatorKind::fgt && !(z > 0.0)) throw InputError("poverty line z must be > 0");
  if (transform.kind == Transform::Kind::log_shift && !std::isfinite(transform.shift))
    throw InputError("log_shift constant must be finite");
}

std::string IndicatorSpec::label() const {
  switch (kind) {
    case IndicatorKind::mean: return "mean";
    case IndicatorKind::transformed_mean: return "tmean";
    case IndicatorKind::fgt: {
      if (alpha == std::floor(alpha) && alpha < 10) return "F" + std::to_string(static_cast<int>(alpha));
      char buf[32];
      std::snprintf(buf, sizeof buf, "F%g", alpha);
      return buf;
    }
  }
  return "?";
}

double h_eval(const IndicatorSpec& spec, double y, double z_line) {
  switch (spec.kind) {
    case IndicatorKind::mean:
      return y;
    case IndicatorKind::transformed_mean:
      return spec.transform.inverse(y);
    case IndicatorKind::fgt: {
      const double welfare = std::max(spec.transform.inverse(y), 0.0);
      if (!(welfare < z_line)) return 0.0;
      if (spec.alpha == 0.0) return 1.0;
      const double gap = (z_line - welfare) / z_line;
      return spec.alpha == 1.0 ? gap : std::pow(gap, spec.alpha);
    }
  }
  return 0.0;
}

Eigen::VectorXd unit_values(const IndicatorSpec& spec, const Eigen::Ref<const Eigen::VectorXd>& y,
                            const Eigen::Ref<const Eigen::VectorXd>& z_lines) {
  const bool own_lines = z_lines.size() > 0;
  if (own_lines && z_lines.size() != y.size()) throw InputError("z_line length mismatch");
  Eigen::VectorXd out(y.size());
  for (Eigen::Index i = 0; i < y.size(); ++i) out(i) = h_eval(spec, y(i), own_lines ? z_lines(i) : spec.z);
  return out;
}

IndicatorValue population_indicator(const IndicatorSpec& spec, const Eigen::Ref<const Eigen::VectorXd>& y,
                                    const Eigen::Ref<const Eigen::VectorXd>& z_lines, std::string area_id) {
  if (y.size() == 0) throw InputError("population_indicator: empty area");
  return {std::move(area_id), unit_values(spec, y, z_lines).mean()};
}

IndicatorValue weighted_indicator(const IndicatorSpec& spec, const Eigen::Ref<const Eigen::VectorXd>& y,
                                  const Eigen::Ref<const Eigen::VectorXd>& w,
                                  const Eigen::Ref<const Eigen::VectorXd>& z_lines, std::string area_id) {
  if (w.size() != y.size()) throw InputError("weighted_indicator: weight length mismatch");
  const double total = w.sum();
  if (!(total > 0.0)) throw InputError("weighted_indicator: zero total weight");
  return {std::move(area_id), w.dot(unit_values(spec, y, z_lines)) / total};
}

}  // namespace sae
