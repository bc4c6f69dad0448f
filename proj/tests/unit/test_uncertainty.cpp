#include <doctest.h>

#include <cmath>
#include <functional>

#include "fixtures.hpp"
#include "sae/error.hpp"
#include "sae/uncertainty.hpp"

using namespace sae;

namespace {

// Calls f(sample positions) for every n-subset of {0..N-1}.
void for_each_subset(int N, int n, const std::function<void(const std::vector<Index>&)>& f) {
  std::vector<Index> idx(n);
  for (int i = 0; i < n; ++i) idx[i] = i;
  for (;;) {
    f(idx);
    int i = n - 1;
    while (i >= 0 && idx[i] == N - n + i) --i;
    if (i < 0) return;
    ++idx[i];
    for (int j = i + 1; j < n; ++j) idx[j] = idx[j - 1] + 1;
  }
}

}  // namespace

TEST_CASE("prop1: correct census has no bias") {
  const NerParams theta{Eigen::Vector3d(3, 0.03, -0.04), 0.0225, 0.25};
  const Prop1Result r = prop1_bias_mse(theta, Eigen::Vector3d::Zero(), 25, 2500);
  CHECK(r.bias == 0.0);
  CHECK(r.mse_cbo == r.mse_cb);
  CHECK(r.mse_cb == doctest::Approx(0.006884615384615385).epsilon(1e-13));
}

TEST_CASE("prop1: bias is minus the mean change times beta") {
  const NerParams theta{Eigen::Vector3d(3, 0.03, -0.04), 0.0225, 0.25};
  const Prop1Result r = prop1_bias_mse(theta, Eigen::Vector3d(0, 2, 1), 25, 2500);
  CHECK(r.bias == doctest::Approx(-(0.06 - 0.04)));
  CHECK(r.mse_cbo == doctest::Approx(r.mse_cb + 0.02 * 0.02));
}

TEST_CASE("prop2: census auxiliary sample adds nothing") {
  const NerParams theta{Eigen::Vector2d(1, 2), 0.1, 0.2};
  CHECK(prop2_total_mse_sb(theta, 0.05, Eigen::Matrix2d::Zero()) == 0.05);
  Eigen::Matrix2d M;
  M << 0, 0, 0, 0.5;
  CHECK(prop2_total_mse_sb(theta, 0.05, M) == doctest::Approx(0.05 + 4 * 0.5));
  M << 0, 1, 0, 0;
  CHECK_THROWS_AS((void)prop2_total_mse_sb(theta, 0.05, M), InputError);
  M << -1, 0, 0, 0;
  CHECK_THROWS_AS((void)prop2_total_mse_sb(theta, 0.05, M), InputError);
}

TEST_CASE("HT variance and covariance are unbiased under SRS enumeration") {
  const Eigen::VectorXd pop = (Eigen::VectorXd(7) << 3, 0, 5, 1, 1, 8, 2).finished();
  const Eigen::VectorXd pop_eb = (Eigen::VectorXd(7) << 2, 1, 4, 1, 3, 6, 2).finished();
  for (int n : {2, 3, 5}) {
    const DesignInfo design = srs_design(n, 7);
    double sum_v = 0, sum_c = 0, sum_t = 0, sum_t2 = 0, sum_teb = 0, sum_cross = 0;
    int count = 0;
    for_each_subset(7, n, [&](const std::vector<Index>& idx) {
      Eigen::VectorXd d(n), e(n);
      for (int i = 0; i < n; ++i) {
        d(i) = pop(idx[i]);
        e(i) = pop_eb(idx[i]);
      }
      sum_v += ht_variance(d, design);
      sum_c += ht_covariance(e, d, design);
      const double t = d.sum() / (n / 7.0) / 7.0, teb = e.sum() / (n / 7.0) / 7.0;
      sum_t += t;
      sum_t2 += t * t;
      sum_teb += teb;
      sum_cross += t * teb;
      ++count;
    });
    const double mean_t = sum_t / count, mean_teb = sum_teb / count;
    CHECK(std::abs(sum_v / count - (sum_t2 / count - mean_t * mean_t)) < 1e-10);
    CHECK(std::abs(sum_c / count - (sum_cross / count - mean_t * mean_teb)) < 1e-10);
  }
}

TEST_CASE("HT with a general second-order rule matches the SRS fast path") {
  const DesignInfo srs = srs_design(4, 9);
  DesignInfo general = srs;
  general.srs = false;
  general.pi2 = [](Index, Index) { return 4.0 * 3.0 / (9.0 * 8.0); };
  const Eigen::Vector4d d(1, 4, 2, 7), e(0.5, 3, 2, 1);
  CHECK(ht_variance(d, general) == doctest::Approx(ht_variance(d, srs)).epsilon(1e-13));
  CHECK(ht_covariance(e, d, general) == doctest::Approx(ht_covariance(e, d, srs)).epsilon(1e-13));
}

TEST_CASE("HT reductions") {
  const DesignInfo census = srs_design(5, 5);
  const Eigen::VectorXd d = (Eigen::VectorXd(5) << 1, 2, 3, 4, 5).finished();
  CHECK(ht_variance(d, census) == 0.0);
  CHECK(ht_covariance(d.reverse(), d, census) == 0.0);
  const DesignInfo s = srs_design(3, 10);
  const Eigen::Vector3d v(1, 5, 2);
  CHECK(ht_covariance(v, v, s) == doctest::Approx(ht_variance(v, s)));
}

TEST_CASE("design of an area from its columns") {
  AreaSample a = test::make_area("A", Eigen::MatrixXd::Ones(3, 1), Eigen::VectorXd(), Eigen::Vector3d(4, 4, 4));
  a.population_size = 12;
  const DesignInfo srs = design_of(a, SecondOrderRule::srs);
  CHECK(srs.srs);
  CHECK(srs.pi1(0) == doctest::Approx(0.25));
  CHECK(srs.srs_pi2 == doctest::Approx(3.0 * 2.0 / (12.0 * 11.0)));
  a.w = Eigen::Vector3d(2, 4, 4);
  CHECK_THROWS_AS((void)design_of(a, SecondOrderRule::srs), InputError);
  const DesignInfo none = design_of(a, SecondOrderRule::none);
  CHECK(none.pi2(0, 1) == doctest::Approx(0.5 * 0.25));
  CHECK(none.weight_total == doctest::Approx(10.0));
}

namespace {

struct BootFixture {
  NerParams theta{Eigen::Vector2d(1.0, 0.2), 0.05, 0.3};
  SurveyDataset s = test::simulate_survey(theta, {5, 8, 6, 7}, 12);
  SurveyDataset sp;
  BootFixture() {
    std::vector<AreaSample> areas;
    Engine rng(3);
    std::uniform_real_distribution<double> u(0, 5);
    for (int d = 1; d <= 4; ++d) {
      Eigen::MatrixXd x(10, 1);
      for (Index i = 0; i < 10; ++i) x(i, 0) = u(rng);
      AreaSample a = test::make_area(std::to_string(d), x, Eigen::VectorXd(), Eigen::VectorXd::Constant(10, 10.0));
      a.population_size = 100;
      areas.push_back(a);
    }
    sp = SurveyDataset(SurveyKind::large_survey, areas, SecondOrderRule::srs);
  }
};

}  // namespace

TEST_CASE("bootstrap: same seed gives identical bundles, across threads too") {
  BootFixture f;
  const std::vector<IndicatorSpec> specs{IndicatorSpec::mean(), IndicatorSpec::fgt(0, 2.0)};
  BootstrapOptions o;
  o.B = 6;
  o.L_mc = 20;
  o.stream = StreamKey(4);
  BootstrapOptions o3 = o;
  o3.threads = 3;
  const auto a = bootstrap_total_mse(f.s, f.sp, f.theta, specs, o);
  const auto b = bootstrap_total_mse(f.s, f.sp, f.theta, specs, o3);
  REQUIRE(a.bundles.size() == 2);
  for (std::size_t k = 0; k < 2; ++k)
    for (std::size_t d = 0; d < 4; ++d) {
      CHECK(a.bundles[k][d].mse_naive == b.bundles[k][d].mse_naive);
      CHECK(a.bundles[k][d].mse_corrected == b.bundles[k][d].mse_corrected);
      CHECK(a.bundles[k][d].mse_corrected_pos >= 0.0);
      const auto& m = a.bundles[k][d];
      CHECK(m.mse_corrected == doctest::Approx(m.mse_naive + m.cov_term));
      CHECK(m.mse_corrected_pos == (m.mse_corrected < 0 ? m.mse_naive : m.mse_corrected));
    }
  CHECK(a.B_effective == 6);
}

TEST_CASE("bootstrap: degenerate parameters give zero naive MSE") {
  BootFixture f;
  const NerParams degenerate{f.theta.beta, 0.0, 0.0};
  BootstrapOptions o;
  o.B = 3;
  o.L_mc = 5;
  const auto r = bootstrap_total_mse(f.s, f.sp, degenerate, std::vector<IndicatorSpec>{IndicatorSpec::mean()}, o);
  for (const auto& m : r.bundles[0]) CHECK(m.mse_naive == 0.0);
}

TEST_CASE("bootstrap: one area effect drives both surveys in a replicate") {
  BootFixture f;
  const NerParams tight{f.theta.beta, 0.5, 1e-24};
  const BootstrapDraw d = bootstrap_draw(f.s, f.sp, tight, StreamKey(9).child(0));
  REQUIRE(d.targets.size() == 4);
  for (std::size_t t = 0; t < 4; ++t) {
    const AreaSample& target = *d.targets[t].sample;
    const AreaSample* small = d.s_star.find(d.targets[t].area_id);
    REQUIRE(small != nullptr);
    const double u = d.u_star(static_cast<Index>(t));
    CHECK(u != 0.0);
    CHECK(d.y_prime[t](0) - target.x.row(0).dot(tight.beta) == doctest::Approx(u).epsilon(1e-9));
    CHECK(small->y(0) - small->x.row(0).dot(tight.beta) == doctest::Approx(u).epsilon(1e-9));
  }
  const BootstrapDraw again = bootstrap_draw(f.s, f.sp, tight, StreamKey(9).child(0));
  CHECK(again.u_star == d.u_star);
  const BootstrapDraw other = bootstrap_draw(f.s, f.sp, tight, StreamKey(9).child(1));
  CHECK(other.u_star != d.u_star);
}

TEST_CASE("bootstrap needs two replicates") {
  BootFixture f;
  BootstrapOptions o;
  o.B = 1;
  CHECK_THROWS((void)bootstrap_total_mse(f.s, f.sp, f.theta, std::vector<IndicatorSpec>{IndicatorSpec::mean()}, o));
}
