#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sae/data_model.hpp"
#include "sae/rng.hpp"
#include "sae/uncertainty.hpp"

namespace sae {

struct SrsDraw {
  std::vector<Index> positions;  // sorted positions within the area
  double pi1 = 0.0;              // n / N
  DesignInfo design;
};

/// Simple random sample without replacement of n out of N positions.
SrsDraw srs_sample(Index N, Index n, Engine& rng);

/// Same, selecting unit ids.
std::vector<std::string> srs_sample(std::span<const std::string> unit_ids, Index n, Engine& rng);

struct SampleSizeResult {
  double k = 0.0;       // z^2 cv^2 / eps0^2
  double n_star = 0.0;  // real-valued minimum size
  Index n_star_ceil = 0;
};

/// Minimum SRS size for a relative error below eps0 with probability 1 - alpha.
SampleSizeResult required_sample_size(double N_d, double cv, double eps0, double alpha);

struct CvEstimate {
  double cv = 0.0;
  double sd = 0.0;
  bool undefined = false;  // |seb| below 1e-12
};

/// Sample SD (n - 1 divisor) of the EB unit predictions over |seb|.
CvEstimate estimate_cv(const Eigen::Ref<const Eigen::VectorXd>& eb_units, double seb_point);

/// n_star * deff.
double design_effect_adjust(double n_star, double deff);

/// Ratio adjustment so the weights add up to `target`.
Eigen::VectorXd calibrate_weights(const Eigen::Ref<const Eigen::VectorXd>& w, double target);

/// Per-area calibration of a dataset to known totals (area id -> total).
/// Areas without a total keep their weights.
SurveyDataset calibrate_weights(const SurveyDataset& data, const std::map<std::string, double>& totals);

}  // namespace sae
