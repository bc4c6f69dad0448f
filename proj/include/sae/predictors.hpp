#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sae/data_model.hpp"
#include "sae/indicators.hpp"
#include "sae/ner_fit.hpp"
#include "sae/rng.hpp"

namespace sae {

enum class Estimator { DIR, FH, EB_CENSUS, CEB, SEB };

std::string to_string(Estimator e);
Estimator parse_estimator(const std::string& s);

struct AreaPrediction {
  std::string area_id;
  Estimator estimator = Estimator::DIR;
  std::string indicator;
  double point = 0.0;
  std::optional<double> mse_naive;
  std::optional<double> mse_corrected;
  std::optional<double> mse_corrected_pos;
  Index n = 0;        // n_d in s
  Index n_prime = 0;  // units the prediction averages over (s'_d or census)
  bool undersized = false;
  bool prior_only = false;  // no sample in s: prior posterior used
};

enum class EbMethod {
  automatic,    // closed form for the mean indicator, Monte Carlo otherwise
  monte_carlo,  // always simulate
};

struct EbOptions {
  int L_mc = 100;
  StreamKey stream{0};
  EbMethod method = EbMethod::automatic;
  unsigned threads = 1;  // areas predicted in parallel
};

/// Monte Carlo EB unit predictions for one area: row i, column k holds the
/// average over L_mc conditional draws of h_k(y_i). Draws are shared by all
/// indicators. z_lines may be empty.
Eigen::MatrixXd eb_unit_predictions(const AreaPosterior& post, const NerParams& theta,
                                    const Eigen::Ref<const Eigen::MatrixXd>& x_targets,
                                    const Eigen::Ref<const Eigen::VectorXd>& z_lines,
                                    std::span<const IndicatorSpec> specs, const EbOptions& options);

struct UnitPredictions {
  std::string area_id;
  Eigen::MatrixXd values;  // units x indicators
  bool prior_only = false;
};

/// EB unit predictions for every area of `targets`. Each area draws from its
/// own stream, options.stream.child(area_id), so results do not depend on
/// area order or on which other areas are present.
std::vector<UnitPredictions> eb_unit_predictions(const NerParams& theta, const SurveyDataset& s,
                                                 const SurveyDataset& targets,
                                                 std::span<const IndicatorSpec> specs, const EbOptions& options);

/// Hajek mean of h(y) over s_d. Result is indexed [indicator][area].
std::vector<std::vector<AreaPrediction>> direct(const SurveyDataset& s, std::span<const IndicatorSpec> specs);
std::vector<AreaPrediction> direct(const SurveyDataset& s, const IndicatorSpec& spec);

/// Census EB: unweighted mean of EB unit predictions over each census area.
/// Passing an outdated census yields the outdated-census predictor.
std::vector<std::vector<AreaPrediction>> ceb(const NerParams& theta, const SurveyDataset& s,
                                             const SurveyDataset& census, std::span<const IndicatorSpec> specs,
                                             const EbOptions& options = {});
std::vector<AreaPrediction> ceb(const NerParams& theta, const SurveyDataset& s, const SurveyDataset& census,
                                const IndicatorSpec& spec, const EbOptions& options = {});

/// CEB for several censuses that share area ids and sizes (e.g. one census
/// outdated by several lambdas). Draws are shared across censuses, so each
/// result equals a separate ceb() call with the same options.
/// Indexed [census][indicator][area].
std::vector<std::vector<std::vector<AreaPrediction>>> ceb_sweep(const NerParams& theta, const SurveyDataset& s,
                                                                std::span<const SurveyDataset> censuses,
                                                                std::span<const IndicatorSpec> specs,
                                                                const EbOptions& options = {});

/// EB with known sample membership: census units whose unit id appears in
/// s_d contribute their observed h(y); the rest their EB prediction.
std::vector<std::vector<AreaPrediction>> eb_census(const NerParams& theta, const SurveyDataset& s,
                                                   const SurveyDataset& census,
                                                   std::span<const IndicatorSpec> specs,
                                                   const EbOptions& options = {});

/// Auxiliary sample actually used for one area by the survey EB predictor.
struct SebTarget {
  std::string area_id;
  const AreaSample* sample = nullptr;  // s'_d, or s_d when substituted
  bool substituted = false;
  Index n = 0;
  Index n_prime = 0;  // observed n'_d before substitution
};

/// s' areas in order, then s-only areas; areas with n'_d < n_d use s_d.
std::vector<SebTarget> resolve_seb_targets(const SurveyDataset& s, const SurveyDataset& s_prime);

struct SebResult {
  std::vector<std::vector<AreaPrediction>> predictions;  // [indicator][area]
  std::vector<SebTarget> targets;
  std::vector<UnitPredictions> units;  // aligned with targets
};

/// Survey EB: w'-weighted Hajek mean of EB unit predictions over s'_d.
SebResult seb_detailed(const NerParams& theta, const SurveyDataset& s, const SurveyDataset& s_prime,
                       std::span<const IndicatorSpec> specs, const EbOptions& options = {});
std::vector<std::vector<AreaPrediction>> seb(const NerParams& theta, const SurveyDataset& s,
                                             const SurveyDataset& s_prime, std::span<const IndicatorSpec> specs,
                                             const EbOptions& options = {});
std::vector<AreaPrediction> seb(const NerParams& theta, const SurveyDataset& s, const SurveyDataset& s_prime,
                                const IndicatorSpec& spec, const EbOptions& options = {});

/// Xbar_d'beta + gamma_d (ybar_d - xbar_d'beta) for each entry of xbar
/// (area id -> population covariate means). Unsampled areas get Xbar_d'beta.
std::map<std::string, double> cb_mean_closed_form(const NerParams& theta, const SurveyDataset& s,
                                                  const std::map<std::string, Eigen::VectorXd>& xbar);

/// Covariate means of every area (Hajek when weights differ).
std::map<std::string, Eigen::VectorXd> area_covariate_means(const SurveyDataset& data);

// -------------------------------------------------------------------------
// Fay-Herriot area-level model
// -------------------------------------------------------------------------

struct FhOptions {
  int max_iterations = 100;
  double tol = 1e-8;
  double variance_floor = 1e-10;
};

struct FhResult {
  Eigen::VectorXd eblup;
  Eigen::VectorXd gamma;
  Eigen::VectorXd beta;
  double sigma2_v = 0.0;
  int iterations = 0;
};

/// REML (Fisher scoring) fit of direct_d = X_d'beta + v_d + e_d with known
/// sampling variances, followed by the composite EBLUP. Throws InputError
/// with fewer than p + 2 areas or when all variances are zero,
/// NumericalError on non-convergence.
FhResult fh_eblup(const Eigen::Ref<const Eigen::VectorXd>& direct_estimates,
                  const Eigen::Ref<const Eigen::VectorXd>& sampling_variances,
                  const Eigen::Ref<const Eigen::MatrixXd>& area_means, const FhOptions& options = {});

struct DirectWithVariance {
  Eigen::VectorXd estimate;  // per area of s
  Eigen::VectorXd variance;  // with-replacement design variance
};

/// Direct estimates and their variance estimates. Areas with n_d = 1 get
/// the pooled average variance.
DirectWithVariance direct_with_variance(const SurveyDataset& s, const IndicatorSpec& spec);

/// FH EBLUP for the areas of s using population covariate means per area
/// id. Areas of s without a mean are an InputError.
std::vector<AreaPrediction> fh(const SurveyDataset& s, const IndicatorSpec& spec,
                               const std::map<std::string, Eigen::VectorXd>& xbar,
                               const FhOptions& options = {});

}  // namespace sae
