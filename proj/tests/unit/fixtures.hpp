#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sae/data_model.hpp"
#include "sae/ner_fit.hpp"
#include "sae/rng.hpp"

namespace sae::test {

/// Area with covariate rows x (intercept prepended), optional responses
/// and unit weights w.
inline AreaSample make_area(std::string id, const Eigen::MatrixXd& x_raw, Eigen::VectorXd y = {},
                            Eigen::VectorXd w = {}) {
  AreaSample a;
  a.id = std::move(id);
  const Index n = x_raw.rows();
  a.x.resize(n, x_raw.cols() + 1);
  a.x.col(0).setOnes();
  a.x.rightCols(x_raw.cols()) = x_raw;
  a.y = std::move(y);
  a.w = w.size() ? std::move(w) : Eigen::VectorXd::Ones(n);
  for (Index i = 0; i < n; ++i) a.unit_ids.push_back(a.id + ":" + std::to_string(i + 1));
  return a;
}

/// Small survey drawn from the nested-error model with one Gamma-like
/// covariate; n[d] units in area d.
inline SurveyDataset simulate_survey(const NerParams& theta, const std::vector<int>& n, std::uint64_t seed) {
  Engine rng = StreamKey(seed).engine();
  std::normal_distribution<double> z(0.0, 1.0);
  std::gamma_distribution<double> g(2.0, 3.0);
  std::vector<AreaSample> areas;
  for (std::size_t d = 0; d < n.size(); ++d) {
    Eigen::MatrixXd x(n[d], theta.beta.size() - 1);
    for (Index i = 0; i < x.rows(); ++i)
      for (Index j = 0; j < x.cols(); ++j) x(i, j) = g(rng);
    const double u = std::sqrt(theta.sigma2_u) * z(rng);
    Eigen::VectorXd y(n[d]);
    for (Index i = 0; i < y.size(); ++i)
      y(i) = theta.beta(0) + x.row(i).dot(theta.beta.tail(theta.beta.size() - 1)) + u +
             std::sqrt(theta.sigma2_e) * z(rng);
    areas.push_back(make_area(std::to_string(d + 1), x, y));
  }
  return SurveyDataset(SurveyKind::small_survey, std::move(areas));
}

/// Covariate-only version of `data` with the given kind and weights 1.
inline SurveyDataset strip_responses(const SurveyDataset& data, SurveyKind kind) {
  std::vector<AreaSample> areas = data.areas();
  for (auto& a : areas) {
    a.y.resize(0);
    a.w = Eigen::VectorXd::Ones(a.size());
  }
  return SurveyDataset(kind, std::move(areas));
}

}  // namespace sae::test
