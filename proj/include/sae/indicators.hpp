#pragma once

#include <span>
#include <string>

#include <Eigen/Dense>

namespace sae {

/// Monotone map between raw welfare z and the model scale y = g(z).
struct Transform {
  enum class Kind { identity, log_shift };
  Kind kind = Kind::identity;
  double shift = 0.0;  // k in y = log(z + k)

  static Transform identity() { return {}; }
  static Transform log_shift(double k) { return {Kind::log_shift, k}; }

  [[nodiscard]] double forward(double z) const;  // g
  [[nodiscard]] double inverse(double y) const;  // g^-1
};

enum class IndicatorKind { mean, transformed_mean, fgt };

/// Defines the unit-level value delta = h(y) of an additive indicator.
struct IndicatorSpec {
  IndicatorKind kind = IndicatorKind::mean;
  double alpha = 0.0;  // FGT order
  double z = 1.0;      // default poverty line, raw welfare scale
  Transform transform;

  static IndicatorSpec mean() { return {}; }
  static IndicatorSpec transformed_mean(Transform t) { return {IndicatorKind::transformed_mean, 0.0, 1.0, t}; }
  static IndicatorSpec fgt(double alpha, double z, Transform t = Transform::identity()) {
    return {IndicatorKind::fgt, alpha, z, t};
  }

  /// Throws InputError when alpha < 0 or z <= 0.
  void validate() const;
  /// Short tag such as "mean", "tmean" or "F1".
  [[nodiscard]] std::string label() const;
};

struct IndicatorValue {
  std::string area_id;
  double value = 0.0;
};

/// h(y) with an explicit poverty line. For FGT the welfare value is clamped
/// at 0 so the normalized gap stays in [0,1]; the line itself counts as
/// nonpoor.
double h_eval(const IndicatorSpec& spec, double y, double z_line);
inline double h_eval(const IndicatorSpec& spec, double y) { return h_eval(spec, y, spec.z); }

/// Unweighted area mean of h over all units. Empty z_lines -> spec.z.
IndicatorValue population_indicator(const IndicatorSpec& spec, const Eigen::Ref<const Eigen::VectorXd>& y,
                                    const Eigen::Ref<const Eigen::VectorXd>& z_lines = Eigen::VectorXd(),
                                    std::string area_id = {});

/// Hajek-weighted mean of h.
IndicatorValue weighted_indicator(const IndicatorSpec& spec, const Eigen::Ref<const Eigen::VectorXd>& y,
                                  const Eigen::Ref<const Eigen::VectorXd>& w,
                                  const Eigen::Ref<const Eigen::VectorXd>& z_lines = Eigen::VectorXd(),
                                  std::string area_id = {});

/// h applied unit by unit.
Eigen::VectorXd unit_values(const IndicatorSpec& spec, const Eigen::Ref<const Eigen::VectorXd>& y,
                            const Eigen::Ref<const Eigen::VectorXd>& z_lines = Eigen::VectorXd());

}  // namespace sae
