#include <doctest.h>

#include <cmath>

#include "fixtures.hpp"
#include "sae/error.hpp"
#include "sae/predictors.hpp"

using namespace sae;

namespace {

const NerParams kTheta{Eigen::Vector2d(2.0, 0.1), 0.04, 0.25};

SurveyDataset toy_survey() { return test::simulate_survey(kTheta, {6, 4, 9}, 21); }

// Census for the same three areas plus an unsampled area "4".
SurveyDataset toy_census() {
  Engine rng(5);
  std::gamma_distribution<double> g(2.0, 3.0);
  std::vector<AreaSample> areas;
  for (int d = 1; d <= 4; ++d) {
    Eigen::MatrixXd x(30, 1);
    for (Index i = 0; i < 30; ++i) x(i, 0) = g(rng);
    areas.push_back(test::make_area(std::to_string(d), x));
  }
  return SurveyDataset(SurveyKind::census, std::move(areas));
}

double unit_weight_mean(const Eigen::VectorXd& v) { return v.mean(); }

}  // namespace

TEST_CASE("estimator names") {
  for (Estimator e : {Estimator::DIR, Estimator::FH, Estimator::EB_CENSUS, Estimator::CEB, Estimator::SEB})
    CHECK(parse_estimator(to_string(e)) == e);
  CHECK_THROWS_AS(parse_estimator("XYZ"), InputError);
}

TEST_CASE("direct is the Hajek mean") {
  std::vector<AreaSample> areas{test::make_area("A", Eigen::MatrixXd::Ones(2, 1), Eigen::Vector2d(0.5, 2.0),
                                                Eigen::Vector2d(2, 1))};
  const SurveyDataset s(SurveyKind::small_survey, areas);
  const auto p = direct(s, IndicatorSpec::fgt(0, 1));
  CHECK(p[0].point == doctest::Approx(2.0 / 3.0));
  CHECK(p[0].n == 2);
}

TEST_CASE("EB mean: Monte Carlo path agrees with the closed form") {
  const SurveyDataset s = toy_survey();
  const AreaPosterior post = area_posterior(kTheta, s.area(0));
  const Eigen::MatrixXd x = toy_census().area(0).x.topRows(3);
  const IndicatorSpec spec = IndicatorSpec::mean();
  EbOptions mc;
  mc.L_mc = 100000;
  mc.method = EbMethod::monte_carlo;
  EbOptions exact = mc;
  exact.method = EbMethod::automatic;
  const Eigen::MatrixXd a = eb_unit_predictions(post, kTheta, x, Eigen::VectorXd(), {&spec, 1}, mc);
  const Eigen::MatrixXd b = eb_unit_predictions(post, kTheta, x, Eigen::VectorXd(), {&spec, 1}, exact);
  const double sd = std::sqrt(post.var_u + kTheta.sigma2_e);
  for (Index i = 0; i < 3; ++i) {
    CHECK(b(i, 0) == doctest::Approx(x.row(i).dot(kTheta.beta) + post.mu_u).epsilon(1e-14));
    CHECK(std::abs(a(i, 0) - b(i, 0)) < 4 * sd / std::sqrt(100000.0));
  }
}

TEST_CASE("EB with zero variances is h(x'beta)") {
  const NerParams theta{Eigen::Vector2d(1.0, 0.5), 0.0, 0.0};
  AreaPosterior post;
  Eigen::MatrixXd x(2, 2);
  x << 1, 1, 1, 4;
  const IndicatorSpec spec = IndicatorSpec::transformed_mean(Transform::log_shift(0));
  EbOptions o;
  o.L_mc = 1;
  const Eigen::MatrixXd p = eb_unit_predictions(post, theta, x, Eigen::VectorXd(), {&spec, 1}, o);
  CHECK(p(0, 0) == std::exp(1.5));
  CHECK(p(1, 0) == std::exp(3.0));
  o.L_mc = 7;  // averaging identical draws only adds rounding
  const Eigen::MatrixXd q = eb_unit_predictions(post, theta, x, Eigen::VectorXd(), {&spec, 1}, o);
  CHECK(q(1, 0) == doctest::Approx(std::exp(3.0)).epsilon(1e-15));
}

TEST_CASE("EB poverty rate far above the line vanishes") {
  AreaPosterior post;
  post.var_u = 0.01;
  const double sd = std::sqrt(post.var_u + kTheta.sigma2_e);
  const IndicatorSpec spec = IndicatorSpec::fgt(0, std::exp(1.0), Transform::log_shift(0));
  Eigen::MatrixXd x(1, 2);
  x << 1, (1.0 + 8.5 * sd - kTheta.beta(0)) / kTheta.beta(1);
  EbOptions o;
  o.L_mc = 1000;
  const Eigen::MatrixXd p = eb_unit_predictions(post, kTheta, x, Eigen::VectorXd(), {&spec, 1}, o);
  CHECK(p(0, 0) < 1e-10);
}

TEST_CASE("census with one unit per area gives the unit prediction") {
  const SurveyDataset s = toy_survey();
  const SurveyDataset full = toy_census();
  std::vector<AreaSample> areas;
  for (const auto& a : full.areas()) {
    AreaSample one = test::make_area(a.id, a.x.block(0, 1, 1, 1));
    areas.push_back(one);
  }
  const SurveyDataset census(SurveyKind::census, areas);
  const auto spec = IndicatorSpec::fgt(1, 9.0, Transform::log_shift(0));
  EbOptions o;
  o.L_mc = 50;
  o.stream = StreamKey(3);
  const auto c = ceb(kTheta, s, census, spec, o);
  const auto units = eb_unit_predictions(kTheta, s, census, {&spec, 1}, o);
  for (std::size_t d = 0; d < 4; ++d) CHECK(c[d].point == units[d].values(0, 0));
  CHECK(c[3].prior_only);
  CHECK_FALSE(c[0].prior_only);
}

TEST_CASE("SEB over a unit-weight census equals CEB bitwise") {
  const SurveyDataset s = toy_survey();
  const SurveyDataset census = toy_census();
  const SurveyDataset as_prime = test::strip_responses(census, SurveyKind::large_survey);
  const std::vector<IndicatorSpec> specs{IndicatorSpec::mean(), IndicatorSpec::fgt(0, 9.0, Transform::log_shift(0))};
  EbOptions o;
  o.L_mc = 40;
  o.stream = StreamKey(77);
  const auto a = ceb(kTheta, s, census, specs, o);
  const auto b = seb(kTheta, s, as_prime, specs, o);
  for (std::size_t k = 0; k < specs.size(); ++k)
    for (std::size_t d = 0; d < 4; ++d) {
      CHECK(a[k][d].area_id == b[k][d].area_id);
      CHECK(a[k][d].point == b[k][d].point);
    }
}

TEST_CASE("SEB is the weighted mean of unit predictions") {
  const NerParams theta{Eigen::Vector2d(0.0, 1.0), 0.0, 0.0};
  const SurveyDataset s(SurveyKind::small_survey,
                        {test::make_area("A", Eigen::Matrix<double, 3, 1>(0, 1, 2), Eigen::Vector3d(0, 1, 2)),
                         test::make_area("B", Eigen::Matrix<double, 3, 1>(0, 1, 2), Eigen::Vector3d(0, 1, 2))});
  const SurveyDataset sp(SurveyKind::large_survey,
                         {test::make_area("A", Eigen::Matrix<double, 4, 1>(0.2, 0.6, 0.1, 0.1),
                                          Eigen::VectorXd(), Eigen::Vector4d(3, 1, 1e-9, 1e-9)),
                          test::make_area("B", Eigen::Matrix<double, 4, 1>(0.2, 0.6, 0.6, 0.6),
                                          Eigen::VectorXd(), Eigen::Vector4d(3, 1, 1, 1))});
  const auto p = seb(theta, s, sp, IndicatorSpec::mean());
  CHECK(p[0].point == doctest::Approx(0.3).epsilon(1e-8));
  CHECK(p[1].point == doctest::Approx((3 * 0.2 + 3 * 0.6) / 6).epsilon(1e-12));
}

TEST_CASE("SEB substitutes s when s' is smaller") {
  const SurveyDataset s = toy_survey();  // sizes 6, 4, 9
  const SurveyDataset census = toy_census();
  std::vector<AreaSample> areas;
  for (const auto& a : census.areas()) areas.push_back(test::make_area(a.id, a.x.block(0, 1, 5, 1)));
  const SurveyDataset sp(SurveyKind::large_survey, areas);
  const auto t = resolve_seb_targets(s, sp);
  REQUIRE(t.size() == 4);
  CHECK(t[0].substituted);  // 5 < 6
  CHECK(t[0].sample == &s.area(0));
  CHECK_FALSE(t[1].substituted);  // 5 >= 4
  CHECK(t[1].sample == &sp.area(1));
  CHECK(t[2].substituted);  // 5 < 9
  CHECK(t[2].sample == &s.area(2));
  CHECK(t[3].n == 0);
}

TEST_CASE("CEB sweep equals separate CEB calls") {
  const SurveyDataset s = toy_survey();
  const SurveyDataset c0 = toy_census();
  std::vector<AreaSample> scaled = c0.areas();
  for (auto& a : scaled) a.x.col(1) *= 1.2;
  const std::vector<SurveyDataset> cs{c0, SurveyDataset(SurveyKind::census, scaled)};
  const std::vector<IndicatorSpec> specs{IndicatorSpec::fgt(0, 9.0, Transform::log_shift(0))};
  EbOptions o;
  o.L_mc = 30;
  o.stream = StreamKey(8);
  const auto sweep = ceb_sweep(kTheta, s, cs, specs, o);
  for (std::size_t c = 0; c < 2; ++c) {
    const auto one = ceb(kTheta, s, cs[c], specs, o);
    for (std::size_t d = 0; d < 4; ++d) CHECK(sweep[c][0][d].point == one[0][d].point);
  }
}

TEST_CASE("EB predictions do not depend on threads or area order") {
  const SurveyDataset s = toy_survey();
  const SurveyDataset census = toy_census();
  const auto spec = IndicatorSpec::fgt(0, 9.0, Transform::log_shift(0));
  EbOptions o;
  o.L_mc = 25;
  o.stream = StreamKey(1);
  EbOptions o4 = o;
  o4.threads = 4;
  const auto a = eb_unit_predictions(kTheta, s, census, {&spec, 1}, o);
  const auto b = eb_unit_predictions(kTheta, s, census, {&spec, 1}, o4);
  std::vector<AreaSample> rev(census.areas().rbegin(), census.areas().rend());
  const auto c = eb_unit_predictions(kTheta, s, SurveyDataset(SurveyKind::census, rev), {&spec, 1}, o);
  for (std::size_t d = 0; d < 4; ++d) {
    CHECK(a[d].values == b[d].values);
    CHECK(a[d].values == c[3 - d].values);
  }
}

TEST_CASE("EB census uses observed values for sampled units") {
  const NerParams theta{Eigen::Vector2d(0.0, 1.0), 0.0, 0.0};
  AreaSample sa = test::make_area("A", Eigen::Matrix<double, 2, 1>(1, 2), Eigen::Vector2d(10, 20));
  AreaSample sb = test::make_area("B", Eigen::Matrix<double, 2, 1>(1, 2), Eigen::Vector2d(1, 2));
  const SurveyDataset s(SurveyKind::small_survey, {sa, sb});
  AreaSample ca = test::make_area("A", Eigen::Matrix<double, 4, 1>(1, 2, 3, 4));
  AreaSample cb = test::make_area("B", Eigen::Matrix<double, 2, 1>(1, 2));
  const SurveyDataset census(SurveyKind::census, {ca, cb});
  const auto p = eb_census(theta, s, census, std::vector<IndicatorSpec>{IndicatorSpec::mean()});
  // A:1 and A:2 match sampled ids; A:3 and A:4 are predicted as x.
  CHECK(p[0][0].point == doctest::Approx((10 + 20 + 3 + 4) / 4.0));
  CHECK(p[0][1].point == doctest::Approx(1.5));
}

TEST_CASE("closed-form CB mean limits") {
  const SurveyDataset s = toy_survey();
  NerParams flat = kTheta;
  flat.sigma2_u = 0.0;
  const auto xbar = area_covariate_means(toy_census());
  const auto syn = cb_mean_closed_form(flat, s, xbar);
  for (const auto& [id, m] : xbar) CHECK(syn.at(id) == doctest::Approx(m.dot(kTheta.beta)));

  NerParams sharp = kTheta;
  sharp.sigma2_u = 1e8;
  const auto own = area_covariate_means(s);
  const auto lim = cb_mean_closed_form(sharp, s, own);
  for (const auto& a : s.areas()) CHECK(lim.at(a.id) == doctest::Approx(a.y.mean()).epsilon(1e-6));
}

TEST_CASE("CEB mean matches the closed form") {
  const SurveyDataset s = toy_survey();
  const SurveyDataset census = toy_census();
  const auto closed = cb_mean_closed_form(kTheta, s, area_covariate_means(census));
  const auto c = ceb(kTheta, s, census, IndicatorSpec::mean());
  for (const auto& p : c) CHECK(p.point == doctest::Approx(closed.at(p.area_id)).epsilon(1e-12));
}

TEST_CASE("FH: zero model variance gives the regression fit") {
  Eigen::MatrixXd X(6, 2);
  X << 1, 0, 1, 1, 1, 2, 1, 3, 1, 4, 1, 5;
  Eigen::VectorXd y(6);
  y << 1.0, 1.9, 3.1, 4.0, 4.9, 6.1;  // residuals well below the sampling sd
  const Eigen::VectorXd psi = Eigen::VectorXd::Constant(6, 1.0);
  const FhResult r = fh_eblup(y, psi, X);
  CHECK(r.sigma2_v == 0.0);
  const Eigen::VectorXd ols = (X.transpose() * X).ldlt().solve(X.transpose() * y);
  for (Index d = 0; d < 6; ++d) CHECK(r.eblup(d) == doctest::Approx((X * ols)(d)));
}

TEST_CASE("FH: vanishing sampling variance returns the direct estimate") {
  Eigen::MatrixXd X(6, 2);
  X << 1, 0, 1, 1, 1, 2, 1, 3, 1, 4, 1, 5;
  Eigen::VectorXd y(6);
  y << 1.0, 3.0, 2.0, 5.0, 3.5, 7.0;
  Eigen::VectorXd psi = Eigen::VectorXd::Constant(6, 0.5);
  psi(2) = 0.0;
  const FhResult r = fh_eblup(y, psi, X);
  CHECK(r.sigma2_v > 0.0);
  CHECK(r.eblup(2) == doctest::Approx(2.0).epsilon(1e-8));
}

TEST_CASE("FH: REML score vanishes at an interior solution") {
  Eigen::MatrixXd X(8, 2);
  Eigen::VectorXd y(8), psi(8);
  for (int d = 0; d < 8; ++d) {
    X.row(d) << 1, d;
    y(d) = 1 + 0.5 * d + (d % 3 - 1) * 1.5;
    psi(d) = 0.2 + 0.05 * d;
  }
  const FhResult r = fh_eblup(y, psi, X);
  REQUIRE(r.sigma2_v > 0.0);
  // Independent check: restricted likelihood along sigma2_v is maximal there.
  auto reml = [&](double s2) {
    const Eigen::VectorXd v = psi.array() + s2;
    const Eigen::MatrixXd Vi = v.cwiseInverse().asDiagonal();
    const Eigen::MatrixXd A = X.transpose() * Vi * X;
    const Eigen::VectorXd b = A.ldlt().solve(X.transpose() * Vi * y);
    const Eigen::VectorXd e = y - X * b;
    return -0.5 * (v.array().log().sum() + std::log(A.determinant()) + e.dot(Vi * e));
  };
  CHECK(reml(r.sigma2_v) >= reml(r.sigma2_v * 1.01));
  CHECK(reml(r.sigma2_v) >= reml(r.sigma2_v * 0.99));
  for (Index d = 0; d < 8; ++d) CHECK(r.gamma(d) == doctest::Approx(r.sigma2_v / (r.sigma2_v + psi(d))));
}

TEST_CASE("FH preconditions") {
  Eigen::MatrixXd X = Eigen::MatrixXd::Ones(3, 2);
  CHECK_THROWS_AS((void)fh_eblup(Eigen::Vector3d::Zero(), Eigen::Vector3d::Ones(), X), InputError);
  Eigen::MatrixXd X4(4, 1);
  X4.setOnes();
  CHECK_THROWS_AS((void)fh_eblup(Eigen::Vector4d::Zero(), Eigen::Vector4d::Zero(), X4), InputError);
}

TEST_CASE("FH over a survey") {
  const SurveyDataset s = test::simulate_survey(kTheta, {6, 4, 9, 5, 7}, 31);
  std::map<std::string, Eigen::VectorXd> xbar = area_covariate_means(s);
  const auto p = fh(s, IndicatorSpec::mean(), xbar);
  CHECK(p.size() == 5);
  xbar.erase("3");
  CHECK_THROWS_AS((void)fh(s, IndicatorSpec::mean(), xbar), InputError);
  const auto dv = direct_with_variance(s, IndicatorSpec::mean());
  CHECK(dv.estimate(0) == doctest::Approx(unit_weight_mean(s.area(0).y)));
  CHECK(dv.variance(0) > 0.0);
}
