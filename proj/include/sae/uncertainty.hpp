#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sae/data_model.hpp"
#include "sae/indicators.hpp"
#include "sae/ner_fit.hpp"
#include "sae/predictors.hpp"
#include "sae/rng.hpp"

namespace sae {

// -------------------------------------------------------------------------
// Analytic results for the mean under the nested-error model
// -------------------------------------------------------------------------

struct Prop1Result {
  double bias = 0.0;     // of the outdated-census CB mean predictor
  double mse_cbo = 0.0;  // its model MSE
  double mse_cb = 0.0;   // model MSE with the correct census
};

/// bbar is the mean change X_bar - X_bar_outdated of the area.
Prop1Result prop1_bias_mse(const NerParams& theta, const Eigen::Ref<const Eigen::VectorXd>& bbar, double n_d,
                           double N_d);

/// mse_cb + beta' M beta, with M = E[(Xtilde - Xbar)(Xtilde - Xbar)'] over the
/// design of s'. Throws InputError unless M is symmetric positive semidefinite.
double prop2_total_mse_sb(const NerParams& theta, double mse_cb, const Eigen::Ref<const Eigen::MatrixXd>& M);

// -------------------------------------------------------------------------
// Horvitz-Thompson variance and covariance
// -------------------------------------------------------------------------

/// First and second order inclusion probabilities of one sampled area.
struct DesignInfo {
  Eigen::VectorXd pi1;
  /// pi_ij for i != j. Unused when srs is set.
  std::function<double(Index, Index)> pi2;
  bool srs = false;
  double srs_pi2 = 0.0;
  /// Normalizer of the double sum (w'_d. ; N_d for self-weighting designs).
  double weight_total = 0.0;
};

/// SRS without replacement of n out of N.
DesignInfo srs_design(Index n, double N);

/// Design of one area of s'. pi1 comes from the pi1 column or 1/w. The srs
/// rule needs constant pi1 and a known population size; rule none treats
/// distinct units as independently selected (pi_ij = pi_i pi_j).
DesignInfo design_of(const AreaSample& area, SecondOrderRule rule);

/// W^-2 sum_i sum_j (pi_ij - pi_i pi_j) / pi_ij * d_i d_j / (pi_i pi_j), pi_ii = pi_i.
double ht_variance(const Eigen::Ref<const Eigen::VectorXd>& delta, const DesignInfo& design);

/// Same double sum with the kernel eb_i * d_j.
double ht_covariance(const Eigen::Ref<const Eigen::VectorXd>& delta_eb,
                     const Eigen::Ref<const Eigen::VectorXd>& delta, const DesignInfo& design);

// -------------------------------------------------------------------------
// Parametric bootstrap for the total MSE of SEB
// -------------------------------------------------------------------------

struct MseBundle {
  std::string area_id;
  double mse_naive = 0.0;
  double mse_corrected = 0.0;
  double mse_corrected_pos = 0.0;
  double cov_term = 0.0;  // mean of 2 Cov* - V*
  int B = 0;
  bool fallback_used = false;
};

struct BootstrapOptions {
  int B = 100;
  int L_mc = 100;
  StreamKey stream{0};
  unsigned threads = 1;
  RemlOptions reml;
};

/// Bootstrap responses of one replicate.
struct BootstrapDraw {
  std::vector<SebTarget> targets;
  Eigen::VectorXd u_star;               // aligned with targets
  std::vector<Eigen::VectorXd> y_prime;  // on each target sample
  SurveyDataset s_star;                  // s with bootstrap responses
};

/// Steps 2 and 3 of replicate b: one u*_d per area shared by the responses
/// generated on s' and on s.
BootstrapDraw bootstrap_draw(const SurveyDataset& s, const SurveyDataset& s_prime, const NerParams& theta_hat,
                             const StreamKey& replicate_stream);

struct BootstrapResult {
  std::vector<std::vector<MseBundle>> bundles;  // [indicator][target area]
  int B_effective = 0;
  int dropped = 0;
  std::vector<std::string> log;  // one line per dropped replicate
};

/// Parametric bootstrap of the naive, corrected and corrected-positive total
/// MSE estimators. Replicates whose refit fails are dropped and logged;
/// fewer than two surviving replicates is a NumericalError.
BootstrapResult bootstrap_total_mse(const SurveyDataset& s, const SurveyDataset& s_prime,
                                    const NerParams& theta_hat, std::span<const IndicatorSpec> specs,
                                    const BootstrapOptions& options);

}  // namespace sae
