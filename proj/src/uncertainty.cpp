#include "sae/uncertainty.hpp"

#include <algorithm>
#include <cmath>

#include <boost/random/normal_distribution.hpp>

#include "sae/error.hpp"
#include "sae/parallel.hpp"

namespace sae {

// -------------------------------------------------------------------------
// Analytic results
// -------------------------------------------------------------------------

Prop1Result prop1_bias_mse(const NerParams& theta, const Eigen::Ref<const Eigen::VectorXd>& bbar, double n_d,
                           double N_d) {
  theta.validate();
  if (bbar.size() != theta.beta.size()) throw InputError("prop1_bias_mse: bbar length mismatch");
  if (!(n_d >= 1.0) || !(N_d >= n_d)) throw InputError("prop1_bias_mse: need N_d >= n_d >= 1");
  const double g = shrinkage_factor(theta.sigma2_u, theta.sigma2_e, n_d);
  Prop1Result r;
  const double shift = bbar.dot(theta.beta);
  r.bias = -shift;
  r.mse_cb = g * theta.sigma2_e / n_d + (1.0 - 2.0 * g) * theta.sigma2_e / N_d;
  r.mse_cbo = r.mse_cb + shift * shift;
  return r;
}

double prop2_total_mse_sb(const NerParams& theta, double mse_cb, const Eigen::Ref<const Eigen::MatrixXd>& M) {
  const Index p = theta.beta.size();
  if (M.rows() != p || M.cols() != p) throw InputError("prop2_total_mse_sb: M must be p x p");
  const double scale = std::max(M.cwiseAbs().maxCoeff(), 1.0);
  if (!(M - M.transpose()).isZero(1e-12 * scale)) throw InputError("prop2_total_mse_sb: M is not symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(M, Eigen::EigenvaluesOnly);
  if (eig.eigenvalues().minCoeff() < -1e-12 * scale)
    throw InputError("prop2_total_mse_sb: M is not positive semidefinite");
  return mse_cb + theta.beta.dot(M * theta.beta);
}

// -------------------------------------------------------------------------
// Horvitz-Thompson
// -------------------------------------------------------------------------

DesignInfo srs_design(Index n, double N) {
  if (n < 1 || !(N >= static_cast<double>(n))) throw InputError("srs_design: need 1 <= n <= N");
  DesignInfo d;
  const double nd = static_cast<double>(n);
  d.pi1 = Eigen::VectorXd::Constant(n, nd / N);
  d.srs = true;
  d.srs_pi2 = N > 1.0 ? nd * (nd - 1.0) / (N * (N - 1.0)) : 1.0;
  d.weight_total = N;
  return d;
}

DesignInfo design_of(const AreaSample& area, SecondOrderRule rule) {
  DesignInfo d;
  d.pi1 = area.pi1.size() ? area.pi1 : area.w.cwiseInverse().eval();
  d.weight_total = area.weight_total();
  if (rule == SecondOrderRule::srs) {
    if (!(d.pi1.array() == d.pi1(0)).all())
      throw InputError("design_of: srs rule needs equal inclusion probabilities in area '" + area.id + "'");
    const double N = area.population_size > 0.0 ? area.population_size : std::round(area.size() / d.pi1(0));
    const double n = static_cast<double>(area.size());
    d.srs = true;
    d.srs_pi2 = N > 1.0 ? n * (n - 1.0) / (N * (N - 1.0)) : 1.0;
    return d;
  }
  const Eigen::VectorXd pi = d.pi1;
  d.pi2 = [pi](Index i, Index j) { return pi(i) * pi(j); };
  return d;
}

namespace {

double ht_double_sum(const Eigen::Ref<const Eigen::VectorXd>& a, const Eigen::Ref<const Eigen::VectorXd>& b,
                     const DesignInfo& design) {
  const Index n = a.size();
  if (b.size() != n || design.pi1.size() != n) throw InputError("ht: length mismatch with design");
  if (!(design.weight_total > 0.0)) throw InputError("ht: weight total must be positive");
  if ((design.pi1.array() <= 0.0).any() || (design.pi1.array() > 1.0).any())
    throw InputError("ht: first-order inclusion probabilities must lie in (0,1]");
  const Eigen::VectorXd ea = a.cwiseQuotient(design.pi1);
  const Eigen::VectorXd eb = b.cwiseQuotient(design.pi1);
  double diag = 0.0;
  for (Index i = 0; i < n; ++i) diag += (1.0 - design.pi1(i)) * ea(i) * eb(i);
  double off = 0.0;
  if (n > 1) {
    if (design.srs) {
      const double pij = design.srs_pi2;
      if (!(pij > 0.0)) throw InputError("ht: zero joint inclusion probability");
      const double pi = design.pi1(0);
      // Constant pair weight: the off-diagonal sum is (sum a)(sum b) - sum a_i b_i.
      off = (pij - pi * pi) / pij * (ea.sum() * eb.sum() - ea.dot(eb));
    } else {
      if (!design.pi2) throw InputError("ht: no second-order inclusion probabilities");
      for (Index i = 0; i < n; ++i) {
        for (Index j = 0; j < n; ++j) {
          if (i == j) continue;
          const double pij = design.pi2(i, j);
          if (!(pij > 0.0)) throw InputError("ht: zero joint inclusion probability");
          off += (pij - design.pi1(i) * design.pi1(j)) / pij * ea(i) * eb(j);
        }
      }
    }
  }
  return (diag + off) / (design.weight_total * design.weight_total);
}

}  // namespace

double ht_variance(const Eigen::Ref<const Eigen::VectorXd>& delta, const DesignInfo& design) {
  return ht_double_sum(delta, delta, design);
}

double ht_covariance(const Eigen::Ref<const Eigen::VectorXd>& delta_eb,
                     const Eigen::Ref<const Eigen::VectorXd>& delta, const DesignInfo& design) {
  return ht_double_sum(delta_eb, delta, design);
}

// -------------------------------------------------------------------------
// Parametric bootstrap
// -------------------------------------------------------------------------

BootstrapDraw bootstrap_draw(const SurveyDataset& s, const SurveyDataset& s_prime, const NerParams& theta_hat,
                             const StreamKey& replicate_stream) {
  theta_hat.validate_allow_degenerate();
  BootstrapDraw draw;
  draw.targets = resolve_seb_targets(s, s_prime);
  const std::size_t D = draw.targets.size();
  const double sd_u = theta_hat.sigma2_u <= kSigma2uFloor ? 0.0 : std::sqrt(theta_hat.sigma2_u);
  const double sd_e = std::sqrt(theta_hat.sigma2_e);
  boost::random::normal_distribution<double> normal;

  draw.u_star.resize(static_cast<Index>(D));
  std::map<std::string, double> u_by_area;
  for (std::size_t d = 0; d < D; ++d) {
    Engine rng = replicate_stream.child("u").child(draw.targets[d].area_id).engine();
    draw.u_star(static_cast<Index>(d)) = sd_u * normal(rng);
    u_by_area[draw.targets[d].area_id] = draw.u_star(static_cast<Index>(d));
  }

  auto generate = [&](const AreaSample& a, double u, Engine& rng) {
    Eigen::VectorXd y = a.x * theta_hat.beta;
    for (Index i = 0; i < y.size(); ++i) y(i) += u + sd_e * normal(rng);
    return y;
  };

  draw.y_prime.resize(D);
  for (std::size_t d = 0; d < D; ++d) {
    Engine rng = replicate_stream.child("y_prime").child(draw.targets[d].area_id).engine();
    draw.y_prime[d] = generate(*draw.targets[d].sample, draw.u_star(static_cast<Index>(d)), rng);
  }

  std::vector<Eigen::VectorXd> ys;
  ys.reserve(s.area_count());
  for (const auto& a : s.areas()) {
    Engine rng = replicate_stream.child("y").child(a.id).engine();
    ys.push_back(generate(a, u_by_area.at(a.id), rng));
  }
  draw.s_star = s.with_responses(std::move(ys));
  return draw;
}

namespace {

struct ReplicateOutcome {
  bool ok = false;
  std::string message;
  std::vector<std::vector<double>> sq_error;  // [indicator][area]
  std::vector<std::vector<double>> cov_term;
};

ReplicateOutcome run_replicate(const SurveyDataset& s, const SurveyDataset& s_prime, const NerParams& theta_hat,
                               std::span<const IndicatorSpec> specs, const BootstrapOptions& options,
                               const std::vector<DesignInfo>& designs, int b) {
  ReplicateOutcome out;
  const StreamKey stream = options.stream.child(static_cast<std::uint64_t>(b));
  const BootstrapDraw draw = bootstrap_draw(s, s_prime, theta_hat, stream);

  // A degenerate law has no variance left to estimate; the fitted
  // parameters are reused as the bootstrap estimate.
  NerParams theta_star = theta_hat;
  if (theta_hat.sigma2_e > 0.0) {
    try {
      theta_star = fit_ner_reml(draw.s_star, options.reml).theta;
    } catch (const NumericalError& e) {
      out.message = "replicate " + std::to_string(b) + " dropped: " + e.what();
      return out;
    }
  }

  EbOptions eb;
  eb.L_mc = options.L_mc;
  eb.stream = stream.child("eb");
  const SebResult seb_star = seb_detailed(theta_star, draw.s_star, s_prime, specs, eb);

  const std::size_t D = draw.targets.size();
  out.sq_error.assign(specs.size(), std::vector<double>(D));
  out.cov_term.assign(specs.size(), std::vector<double>(D));
  for (std::size_t k = 0; k < specs.size(); ++k) {
    for (std::size_t d = 0; d < D; ++d) {
      const AreaSample& target = *draw.targets[d].sample;
      const Eigen::VectorXd delta = unit_values(specs[k], draw.y_prime[d], target.z_line);
      const double delta_prime = target.w.dot(delta) / target.w.sum();
      const Eigen::VectorXd eb_units = seb_star.units[d].values.col(static_cast<Index>(k));
      const double err = seb_star.predictions[k][d].point - delta_prime;
      out.sq_error[k][d] = err * err;
      out.cov_term[k][d] = 2.0 * ht_covariance(eb_units, delta, designs[d]) - ht_variance(delta, designs[d]);
    }
  }
  out.ok = true;
  return out;
}

}  // namespace

BootstrapResult bootstrap_total_mse(const SurveyDataset& s, const SurveyDataset& s_prime,
                                    const NerParams& theta_hat, std::span<const IndicatorSpec> specs,
                                    const BootstrapOptions& options) {
  if (options.B < 2) throw InputError("bootstrap_total_mse: B must be >= 2");
  if (options.L_mc < 1) throw InputError("bootstrap_total_mse: L_mc must be >= 1");
  if (specs.empty()) throw InputError("bootstrap_total_mse: no indicators requested");
  for (const auto& spec : specs) spec.validate();
  theta_hat.validate_allow_degenerate();

  const auto targets = resolve_seb_targets(s, s_prime);
  std::vector<DesignInfo> designs;
  designs.reserve(targets.size());
  for (const auto& t : targets)
    designs.push_back(design_of(*t.sample, t.substituted ? s.second_order() : s_prime.second_order()));

  std::vector<ReplicateOutcome> reps(static_cast<std::size_t>(options.B));
  parallel_for(reps.size(), options.threads, [&](std::size_t b) {
    reps[b] = run_replicate(s, s_prime, theta_hat, specs, options, designs, static_cast<int>(b));
  });

  BootstrapResult r;
  std::vector<const ReplicateOutcome*> kept;
  for (const auto& rep : reps) {
    if (rep.ok)
      kept.push_back(&rep);
    else
      r.log.push_back(rep.message);
  }
  r.B_effective = static_cast<int>(kept.size());
  r.dropped = options.B - r.B_effective;
  if (r.B_effective < 2)
    throw NumericalError("bootstrap_total_mse: fewer than 2 replicates survived (" + std::to_string(r.dropped) +
                         " dropped)");

  r.bundles.assign(specs.size(), {});
  std::vector<double> a(kept.size());
  std::vector<double> c(kept.size());
  for (std::size_t k = 0; k < specs.size(); ++k) {
    for (std::size_t d = 0; d < targets.size(); ++d) {
      for (std::size_t b = 0; b < kept.size(); ++b) {
        a[b] = kept[b]->sq_error[k][d];
        c[b] = kept[b]->cov_term[k][d];
      }
      MseBundle m;
      m.area_id = targets[d].area_id;
      m.B = r.B_effective;
      m.mse_naive = pairwise_mean(a);
      m.cov_term = pairwise_mean(c);
      m.mse_corrected = m.mse_naive + m.cov_term;
      m.fallback_used = m.mse_corrected < 0.0;
      m.mse_corrected_pos = m.fallback_used ? m.mse_naive : m.mse_corrected;
      r.bundles[k].push_back(std::move(m));
    }
  }
  return r;
}

}  // namespace sae
