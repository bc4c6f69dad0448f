#pragma once

#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sae/data_model.hpp"
#include "sae/rng.hpp"

namespace sae {

/// Below this value the area-effect variance is treated as exactly zero.
inline constexpr double kSigma2uFloor = 1e-12;

/// Parameters of the nested-error model y = x'beta + u_d + e_di.
struct NerParams {
  Eigen::VectorXd beta;
  double sigma2_u = 0.0;
  double sigma2_e = 1.0;

  /// Throws InputError unless sigma2_e > 0, sigma2_u >= 0, all finite.
  void validate() const;
  /// Same as validate() but admits sigma2_e == 0 (degenerate simulation laws).
  void validate_allow_degenerate() const;
};

struct RemlOptions {
  int max_iterations = 500;
  double rel_objective_tol = 1e-10;
  double param_tol = 1e-8;
  double sigma2_e_floor = 1e-10;
};

struct AreaEffect {
  std::string area_id;
  double u_hat = 0.0;
  double gamma = 0.0;
  Index n = 0;
};

struct UnitResidual {
  std::string area_id;
  std::string unit_id;
  double residual = 0.0;  // y - x'beta - u_hat
};

struct NerFit {
  NerParams theta;
  double log_reml = 0.0;
  int iterations = 0;
  bool converged = false;
  bool boundary = false;  // sigma2_u clamped at kSigma2uFloor
  /// Best REML value after each accepted optimizer step.
  std::vector<double> objective_trace;
  std::vector<AreaEffect> effects;
  std::vector<UnitResidual> residuals;
};

/// REML fit of the nested-error model to a small survey.
///
/// beta is profiled out by GLS and sigma2_e in closed form, leaving a
/// one-dimensional search over log(sigma2_u / sigma2_e): a coarse grid
/// bracket followed by Brent's method. Throws InputError when fewer than two
/// areas or n <= p + 1, NumericalError for a singular design, a degenerate
/// sigma2_e or non-convergence.
NerFit fit_ner_reml(const SurveyDataset& s, const RemlOptions& options = {});

/// Restricted log-likelihood at given variance components (beta profiled).
double reml_loglik(const SurveyDataset& s, double sigma2_u, double sigma2_e);

/// Conditional law of u_d given the sample responses of the area.
struct AreaPosterior {
  std::string area_id;
  double mu_u = 0.0;
  double var_u = 0.0;
  double gamma = 0.0;
  Index n = 0;
  bool sampled = false;
};

/// gamma_d = sigma2_u / (sigma2_u + sigma2_e / n_d); 0 when sigma2_u is at the floor.
double shrinkage_factor(double sigma2_u, double sigma2_e, double n);

AreaPosterior area_posterior(const NerParams& theta, const AreaSample& area);
AreaPosterior prior_posterior(const NerParams& theta, std::string area_id);

/// One posterior per requested id; areas absent from s get the prior.
std::vector<AreaPosterior> area_posteriors(const NerParams& theta, const SurveyDataset& s,
                                           std::span<const std::string> area_ids);

/// L_mc x n_targets draws from the conditional law: per replicate one
/// u ~ N(mu_u, var_u) shared by the area, then independent unit errors.
Eigen::MatrixXd draw_conditional_responses(const AreaPosterior& post, const NerParams& theta,
                                           const Eigen::Ref<const Eigen::MatrixXd>& x_targets, int L_mc,
                                           Engine& rng);

}  // namespace sae
