#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sae/data_model.hpp"
#include "sae/indicators.hpp"
#include "sae/ner_fit.hpp"
#include "sae/rng.hpp"

namespace sae {

/// Gamma(shape, scale) covariate with shape = shape_base + shape_slope * d / D.
struct GammaLaw {
  double shape_base = 1.0;
  double shape_slope = 0.0;
  double scale = 1.0;
};

enum class PrimeRule {
  multiplier,  // n'_d = prime_multiplier * n_d (capped at N_d)
  equal_to_s,  // s' = s
  census,      // s' = full census with unit weights
};

std::string to_string(PrimeRule r);
PrimeRule parse_prime_rule(const std::string& s);

struct ExperimentConfig {
  int D = 80;
  std::vector<int> N_d;  // empty: N for every area
  int N = 2500;
  std::vector<GammaLaw> covariates{{1.0, 5.0, 2.0}, {2.0, 0.0, 3.0}};
  NerParams theta_true{Eigen::Vector3d(3.0, 0.03, -0.04), 0.15 * 0.15, 0.5 * 0.5};
  double z = 12.0;
  std::vector<double> alphas{0.0, 1.0};  // FGT orders, welfare = exp(y)
  std::vector<int> n_d;                  // empty: default schedule
  PrimeRule prime_rule = PrimeRule::multiplier;
  double prime_multiplier = 10.0;
  std::vector<double> lambdas{0.0, 0.1, 0.2, 0.3};
  std::vector<int> pattern;  // -1 shrinks, +1 inflates; empty: default
  int L = 200;
  int B = 100;
  int L_mc = 100;
  int L_true = 2000;  // bootstrap study, phase 1
  bool include_fh = true;
  std::uint64_t seed = 20240607;
  unsigned threads = 0;

  static ExperimentConfig desk();
  static ExperimentConfig full();
  static ExperimentConfig preset(const std::string& name);

  /// Throws InputError on an invalid configuration.
  void validate() const;
  [[nodiscard]] std::vector<int> population_sizes() const;
  [[nodiscard]] std::vector<int> sample_sizes() const;
  [[nodiscard]] std::vector<int> prime_sizes() const;
  [[nodiscard]] std::vector<int> outdating_pattern() const;
  [[nodiscard]] std::vector<IndicatorSpec> indicators() const;
};

/// n_d = 25, 50, 75 over the first 3/8, next 3/8 and last 1/4 of the areas.
std::vector<int> default_sample_sizes(int D);
/// Shrink areas 1-15, 31-45, 75-80 and inflate the rest, scaled to D areas.
std::vector<int> default_outdating_pattern(int D);

// -------------------------------------------------------------------------
// Population
// -------------------------------------------------------------------------

struct Population {
  std::vector<std::string> area_ids;  // "1".."D"
  std::vector<Eigen::MatrixXd> x;     // N_d x p, intercept first
  [[nodiscard]] SurveyDataset census() const;
};

/// Covariates are drawn once per study from the stream; responses are
/// redrawn per replicate with draw_population_responses.
Population generate_population(const ExperimentConfig& cfg, const StreamKey& stream);

std::vector<Eigen::VectorXd> draw_population_responses(const Population& pop, const NerParams& theta,
                                                       const StreamKey& stream);

/// Scales the non-intercept covariates of area d by 1 + pattern[d] * lambda.
SurveyDataset outdate_census(const SurveyDataset& census, double lambda, std::span<const int> pattern);

// -------------------------------------------------------------------------
// Experiment
// -------------------------------------------------------------------------

struct EstimatorColumn {
  std::string estimator;  // DIR, FH, EB, SEB
  int lambda_index = -1;  // -1 for estimators that never read the census
  int indicator = 0;
};

struct ReplicateLog {
  std::vector<std::string> area_ids;
  std::vector<int> n, n_prime;
  std::vector<std::string> indicators;
  std::vector<double> lambdas;
  std::vector<EstimatorColumn> columns;
  std::vector<Eigen::MatrixXd> truth;      // per kept replicate: indicators x D
  std::vector<Eigen::MatrixXd> estimates;  // per kept replicate: columns x D
  int dropped = 0;
  std::vector<std::string> messages;
};

struct AreaMetrics {
  std::string area_id;
  std::string estimator;
  std::string indicator;
  double lambda = 0.0;
  double rb = 0.0;
  double rrmse = 0.0;
  bool undefined = false;  // mean true value is zero
};

struct SummaryRow {
  std::string indicator;
  double lambda = 0.0;
  std::string estimator;
  double arb_bar = 0.0;
  double rrmse_bar = 0.0;
};

struct ExperimentResult {
  ReplicateLog log;
  std::vector<AreaMetrics> areas;
  std::vector<SummaryRow> summary;
};

struct MetricsResult {
  std::vector<AreaMetrics> areas;
  std::vector<SummaryRow> summary;  // per indicator x lambda x {DIR, FH, EB, SEB}
};

/// RB = mean error / mean truth and RRMSE = root mean squared error / mean
/// truth per area; ARB and RRMSE averages over areas with a defined metric.
MetricsResult metrics(const ReplicateLog& log);

ExperimentResult run_experiment(const ExperimentConfig& cfg);

// -------------------------------------------------------------------------
// Bootstrap study
// -------------------------------------------------------------------------

struct BootstrapStudyRow {
  std::string area_id;
  std::string indicator;
  int n = 0;
  int n_prime = 0;
  double mse_true = 0.0;
  double mse_naive = 0.0;
  double mse_corrected = 0.0;
  double mse_corrected_pos = 0.0;
  double fallback_rate = 0.0;
};

struct BootstrapStudyResult {
  std::vector<BootstrapStudyRow> rows;
  int L_true_effective = 0;
  int L_effective = 0;
  int dropped_bootstrap_replicates = 0;
  std::vector<std::string> messages;
};

/// Phase 1 approximates the total MSE of SEB with cfg.L_true replicates;
/// phase 2 averages the bootstrap estimators (cfg.B each) over cfg.L
/// replicates, for every configured indicator.
BootstrapStudyResult run_bootstrap_study(const ExperimentConfig& cfg);

}  // namespace sae
