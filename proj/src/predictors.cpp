#include "sae/predictors.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <unordered_map>

#include <boost/random/normal_distribution.hpp>

#include "sae/error.hpp"
#include "sae/parallel.hpp"

namespace sae {

std::string to_string(Estimator e) {
  switch (e) {
    case Estimator::DIR: return "DIR";
    case Estimator::FH: return "FH";
    case Estimator::EB_CENSUS: return "EB_CENSUS";
    case Estimator::CEB: return "CEB";
    case Estimator::SEB: return "SEB";
  }
  return "?";
}

Estimator parse_estimator(const std::string& s) {
  if (s == "DIR") return Estimator::DIR;
  if (s == "FH") return Estimator::FH;
  if (s == "EB_CENSUS") return Estimator::EB_CENSUS;
  if (s == "CEB" || s == "EB") return Estimator::CEB;
  if (s == "SEB") return Estimator::SEB;
  throw InputError("unknown estimator '" + s + "'");
}

// -------------------------------------------------------------------------
// EB unit predictions
// -------------------------------------------------------------------------

namespace {

// h specialised for the inner Monte Carlo loop. Poverty is tested on the
// model scale (y < g(z_line)), which is equivalent because g is increasing.
struct UnitKernel {
  const IndicatorSpec* spec = nullptr;
  double line = 0.0;       // z_line on the welfare scale
  double threshold = 0.0;  // g(z_line)

  double operator()(double y) const {
    switch (spec->kind) {
      case IndicatorKind::mean: return y;
      case IndicatorKind::transformed_mean: return spec->transform.inverse(y);
      case IndicatorKind::fgt: {
        if (!(y < threshold)) return 0.0;
        if (spec->alpha == 0.0) return 1.0;
        const double welfare = std::max(spec->transform.inverse(y), 0.0);
        const double gap = (line - welfare) / line;
        return spec->alpha == 1.0 ? gap : std::pow(gap, spec->alpha);
      }
    }
    return 0.0;
  }
};

double hajek(const Eigen::Ref<const Eigen::VectorXd>& w, const Eigen::Ref<const Eigen::VectorXd>& v) {
  return w.dot(v) / w.sum();
}

}  // namespace

namespace {

// Shared-draw EB predictions for several covariate blocks of one area with
// the same unit count: block m uses y = x_m'beta + u + e with common (u, e).
std::vector<Eigen::MatrixXd> simulate_blocks(const AreaPosterior& post, const NerParams& theta,
                                             std::span<const Eigen::MatrixXd* const> blocks,
                                             const Eigen::Ref<const Eigen::VectorXd>& z_lines,
                                             std::span<const IndicatorSpec> specs, const EbOptions& options) {
  if (options.L_mc < 1) throw InputError("eb_unit_predictions: L_mc must be >= 1");
  const std::size_t M = blocks.size();
  const Index n = blocks.front()->rows();
  const Index K = static_cast<Index>(specs.size());
  const bool own_lines = z_lines.size() > 0;
  if (own_lines && z_lines.size() != n) throw InputError("eb_unit_predictions: z_line length mismatch");
  Eigen::MatrixXd mean(n, static_cast<Index>(M));
  for (std::size_t m = 0; m < M; ++m) {
    if (blocks[m]->rows() != n) throw InputError("eb_unit_predictions: blocks differ in size");
    mean.col(static_cast<Index>(m)) = *blocks[m] * theta.beta;
  }

  std::vector<Eigen::MatrixXd> out(M, Eigen::MatrixXd::Zero(n, K));
  std::vector<Index> simulated;
  for (Index k = 0; k < K; ++k) {
    const auto& spec = specs[static_cast<std::size_t>(k)];
    if (options.method == EbMethod::automatic && spec.kind == IndicatorKind::mean) {
      for (std::size_t m = 0; m < M; ++m) out[m].col(k) = mean.col(static_cast<Index>(m)).array() + post.mu_u;
    } else {
      simulated.push_back(k);
    }
  }
  if (simulated.empty()) return out;

  const Index S = static_cast<Index>(simulated.size());
  std::vector<UnitKernel> kernels(static_cast<std::size_t>(n * S));
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < S; ++j) {
      const auto& spec = specs[static_cast<std::size_t>(simulated[static_cast<std::size_t>(j)])];
      UnitKernel& kn = kernels[static_cast<std::size_t>(i * S + j)];
      kn.spec = &spec;
      kn.line = own_lines ? z_lines(i) : spec.z;
      kn.threshold = spec.kind == IndicatorKind::fgt ? spec.transform.forward(kn.line) : 0.0;
      if (std::isnan(kn.threshold)) kn.threshold = -std::numeric_limits<double>::infinity();
    }
  }

  Engine rng = options.stream.engine();
  boost::random::normal_distribution<double> normal;
  const double sd_u = std::sqrt(post.var_u);
  const double sd_e = std::sqrt(theta.sigma2_e);
  const std::size_t stride = static_cast<std::size_t>(n * S);
  std::vector<double> acc(stride * M, 0.0);
  for (int l = 0; l < options.L_mc; ++l) {
    const double u = post.mu_u + sd_u * normal(rng);
    for (Index i = 0; i < n; ++i) {
      const double shock = u + sd_e * normal(rng);
      const std::size_t base = static_cast<std::size_t>(i * S);
      for (std::size_t m = 0; m < M; ++m) {
        const double y = mean(i, static_cast<Index>(m)) + shock;
        double* a = acc.data() + m * stride + base;
        for (Index j = 0; j < S; ++j) a[j] += kernels[base + static_cast<std::size_t>(j)](y);
      }
    }
  }
  const double inv_l = 1.0 / options.L_mc;
  for (std::size_t m = 0; m < M; ++m)
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < S; ++j)
        out[m](i, simulated[static_cast<std::size_t>(j)]) = acc[m * stride + static_cast<std::size_t>(i * S + j)] * inv_l;
  return out;
}

}  // namespace

Eigen::MatrixXd eb_unit_predictions(const AreaPosterior& post, const NerParams& theta,
                                    const Eigen::Ref<const Eigen::MatrixXd>& x_targets,
                                    const Eigen::Ref<const Eigen::VectorXd>& z_lines,
                                    std::span<const IndicatorSpec> specs, const EbOptions& options) {
  const Eigen::MatrixXd x = x_targets;
  const Eigen::MatrixXd* blocks[] = {&x};
  return std::move(simulate_blocks(post, theta, blocks, z_lines, specs, options).front());
}

namespace {

UnitPredictions predict_block(const NerParams& theta, const SurveyDataset& s, const AreaSample& block,
                              std::span<const IndicatorSpec> specs, const EbOptions& options) {
  UnitPredictions up;
  up.area_id = block.id;
  const AreaSample* sampled = s.find(block.id);
  const AreaPosterior post = sampled ? area_posterior(theta, *sampled) : prior_posterior(theta, block.id);
  up.prior_only = sampled == nullptr;
  EbOptions area_opts = options;
  area_opts.stream = options.stream.child(block.id);
  up.values = eb_unit_predictions(post, theta, block.x, block.z_line, specs, area_opts);
  return up;
}

void check_inputs(const NerParams& theta, const SurveyDataset& s, const SurveyDataset& targets,
                  std::span<const IndicatorSpec> specs) {
  theta.validate_allow_degenerate();
  if (specs.empty()) throw InputError("no indicators requested");
  for (const auto& spec : specs) spec.validate();
  if (theta.beta.size() != s.covariate_dim() || theta.beta.size() != targets.covariate_dim())
    throw InputError("covariate dimension does not match beta");
}

}  // namespace

std::vector<UnitPredictions> eb_unit_predictions(const NerParams& theta, const SurveyDataset& s,
                                                 const SurveyDataset& targets,
                                                 std::span<const IndicatorSpec> specs,
                                                 const EbOptions& options) {
  check_inputs(theta, s, targets, specs);
  std::vector<UnitPredictions> out(targets.area_count());
  parallel_for(targets.area_count(), options.threads, [&](std::size_t d) {
    out[d] = predict_block(theta, s, targets.area(d), specs, options);
  });
  return out;
}

// -------------------------------------------------------------------------
// Direct, CEB, EB, SEB
// -------------------------------------------------------------------------

std::vector<std::vector<AreaPrediction>> direct(const SurveyDataset& s, std::span<const IndicatorSpec> specs) {
  std::vector<std::vector<AreaPrediction>> out(specs.size());
  for (std::size_t k = 0; k < specs.size(); ++k) {
    specs[k].validate();
    for (const auto& a : s.areas()) {
      if (!a.has_y()) throw InputError("direct: area '" + a.id + "' has no responses");
      AreaPrediction p;
      p.area_id = a.id;
      p.estimator = Estimator::DIR;
      p.indicator = specs[k].label();
      p.point = weighted_indicator(specs[k], a.y, a.w, a.z_line).value;
      p.n = a.size();
      out[k].push_back(std::move(p));
    }
  }
  return out;
}

std::vector<AreaPrediction> direct(const SurveyDataset& s, const IndicatorSpec& spec) {
  return direct(s, std::span<const IndicatorSpec>(&spec, 1)).front();
}

std::vector<std::vector<AreaPrediction>> ceb(const NerParams& theta, const SurveyDataset& s,
                                             const SurveyDataset& census, std::span<const IndicatorSpec> specs,
                                             const EbOptions& options) {
  const auto units = eb_unit_predictions(theta, s, census, specs, options);
  std::vector<std::vector<AreaPrediction>> out(specs.size());
  for (std::size_t k = 0; k < specs.size(); ++k) {
    for (std::size_t d = 0; d < census.area_count(); ++d) {
      const auto& a = census.area(d);
      const auto* sampled = s.find(a.id);
      AreaPrediction p;
      p.area_id = a.id;
      p.estimator = Estimator::CEB;
      p.indicator = specs[k].label();
      p.point = hajek(a.w, units[d].values.col(static_cast<Index>(k)));
      p.n = sampled ? sampled->size() : 0;
      p.n_prime = a.size();
      p.prior_only = units[d].prior_only;
      out[k].push_back(std::move(p));
    }
  }
  return out;
}

std::vector<AreaPrediction> ceb(const NerParams& theta, const SurveyDataset& s, const SurveyDataset& census,
                                const IndicatorSpec& spec, const EbOptions& options) {
  return ceb(theta, s, census, std::span<const IndicatorSpec>(&spec, 1), options).front();
}

std::vector<std::vector<std::vector<AreaPrediction>>> ceb_sweep(const NerParams& theta, const SurveyDataset& s,
                                                                std::span<const SurveyDataset> censuses,
                                                                std::span<const IndicatorSpec> specs,
                                                                const EbOptions& options) {
  if (censuses.empty()) return {};
  const SurveyDataset& first = censuses.front();
  for (const auto& c : censuses) {
    check_inputs(theta, s, c, specs);
    if (c.area_count() != first.area_count()) throw InputError("ceb_sweep: censuses differ in areas");
    for (std::size_t d = 0; d < c.area_count(); ++d)
      if (c.area(d).id != first.area(d).id || c.area(d).size() != first.area(d).size())
        throw InputError("ceb_sweep: censuses differ in area '" + first.area(d).id + "'");
  }
  const std::size_t M = censuses.size();
  std::vector<std::vector<Eigen::MatrixXd>> units(first.area_count());
  std::vector<bool> prior_only(first.area_count());
  parallel_for(first.area_count(), options.threads, [&](std::size_t d) {
    const auto& a = first.area(d);
    const AreaSample* sampled = s.find(a.id);
    const AreaPosterior post = sampled ? area_posterior(theta, *sampled) : prior_posterior(theta, a.id);
    prior_only[d] = sampled == nullptr;
    std::vector<const Eigen::MatrixXd*> blocks;
    for (const auto& c : censuses) blocks.push_back(&c.area(d).x);
    EbOptions area_opts = options;
    area_opts.stream = options.stream.child(a.id);
    units[d] = simulate_blocks(post, theta, blocks, a.z_line, specs, area_opts);
  });
  std::vector<std::vector<std::vector<AreaPrediction>>> out(M, std::vector<std::vector<AreaPrediction>>(specs.size()));
  for (std::size_t m = 0; m < M; ++m) {
    for (std::size_t k = 0; k < specs.size(); ++k) {
      for (std::size_t d = 0; d < first.area_count(); ++d) {
        const auto& a = censuses[m].area(d);
        const auto* sampled = s.find(a.id);
        AreaPrediction p;
        p.area_id = a.id;
        p.estimator = Estimator::CEB;
        p.indicator = specs[k].label();
        p.point = hajek(a.w, units[d][m].col(static_cast<Index>(k)));
        p.n = sampled ? sampled->size() : 0;
        p.n_prime = a.size();
        p.prior_only = prior_only[d];
        out[m][k].push_back(std::move(p));
      }
    }
  }
  return out;
}

std::vector<std::vector<AreaPrediction>> eb_census(const NerParams& theta, const SurveyDataset& s,
                                                   const SurveyDataset& census,
                                                   std::span<const IndicatorSpec> specs,
                                                   const EbOptions& options) {
  const auto units = eb_unit_predictions(theta, s, census, specs, options);
  std::vector<std::vector<AreaPrediction>> out(specs.size());
  for (std::size_t d = 0; d < census.area_count(); ++d) {
    const auto& a = census.area(d);
    const auto* sampled = s.find(a.id);
    std::unordered_map<std::string, Index> observed;
    if (sampled)
      for (Index i = 0; i < sampled->size(); ++i) observed.emplace(sampled->unit_ids[static_cast<std::size_t>(i)], i);
    for (std::size_t k = 0; k < specs.size(); ++k) {
      Eigen::VectorXd v = units[d].values.col(static_cast<Index>(k));
      Index matched = 0;
      for (Index i = 0; i < a.size(); ++i) {
        auto it = observed.find(a.unit_ids[static_cast<std::size_t>(i)]);
        if (it == observed.end()) continue;
        const double line = sampled->z_line.size() ? sampled->z_line(it->second) : specs[k].z;
        v(i) = h_eval(specs[k], sampled->y(it->second), line);
        ++matched;
      }
      AreaPrediction p;
      p.area_id = a.id;
      p.estimator = Estimator::EB_CENSUS;
      p.indicator = specs[k].label();
      p.point = hajek(a.w, v);
      p.n = sampled ? sampled->size() : 0;
      p.n_prime = a.size();
      p.prior_only = units[d].prior_only;
      p.undersized = sampled && matched != sampled->size();
      out[k].push_back(std::move(p));
    }
  }
  return out;
}

std::vector<SebTarget> resolve_seb_targets(const SurveyDataset& s, const SurveyDataset& s_prime) {
  if (s.covariate_dim() != s_prime.covariate_dim()) throw InputError("seb: covariate dimension mismatch");
  std::vector<SebTarget> out;
  for (const auto& b : s_prime.areas()) {
    SebTarget t;
    t.area_id = b.id;
    t.n_prime = b.size();
    const auto* a = s.find(b.id);
    t.n = a ? a->size() : 0;
    t.substituted = a && b.size() < a->size();
    t.sample = t.substituted ? a : &b;
    out.push_back(t);
  }
  for (const auto& a : s.areas()) {
    if (s_prime.find(a.id)) continue;
    out.push_back({a.id, &a, true, a.size(), 0});
  }
  return out;
}

SebResult seb_detailed(const NerParams& theta, const SurveyDataset& s, const SurveyDataset& s_prime,
                       std::span<const IndicatorSpec> specs, const EbOptions& options) {
  check_inputs(theta, s, s_prime, specs);
  SebResult r;
  r.targets = resolve_seb_targets(s, s_prime);
  r.units.resize(r.targets.size());
  parallel_for(r.targets.size(), options.threads, [&](std::size_t d) {
    r.units[d] = predict_block(theta, s, *r.targets[d].sample, specs, options);
  });
  r.predictions.resize(specs.size());
  for (std::size_t k = 0; k < specs.size(); ++k) {
    for (std::size_t d = 0; d < r.targets.size(); ++d) {
      const auto& t = r.targets[d];
      AreaPrediction p;
      p.area_id = t.area_id;
      p.estimator = Estimator::SEB;
      p.indicator = specs[k].label();
      p.point = hajek(t.sample->w, r.units[d].values.col(static_cast<Index>(k)));
      p.n = t.n;
      p.n_prime = t.sample->size();
      p.prior_only = r.units[d].prior_only;
      r.predictions[k].push_back(std::move(p));
    }
  }
  return r;
}

std::vector<std::vector<AreaPrediction>> seb(const NerParams& theta, const SurveyDataset& s,
                                             const SurveyDataset& s_prime, std::span<const IndicatorSpec> specs,
                                             const EbOptions& options) {
  return seb_detailed(theta, s, s_prime, specs, options).predictions;
}

std::vector<AreaPrediction> seb(const NerParams& theta, const SurveyDataset& s, const SurveyDataset& s_prime,
                                const IndicatorSpec& spec, const EbOptions& options) {
  return seb(theta, s, s_prime, std::span<const IndicatorSpec>(&spec, 1), options).front();
}

std::map<std::string, double> cb_mean_closed_form(const NerParams& theta, const SurveyDataset& s,
                                                  const std::map<std::string, Eigen::VectorXd>& xbar) {
  theta.validate_allow_degenerate();
  std::map<std::string, double> out;
  for (const auto& [id, means] : xbar) {
    if (means.size() != theta.beta.size()) throw InputError("cb_mean_closed_form: covariate length mismatch");
    const auto* a = s.find(id);
    const AreaPosterior post = a ? area_posterior(theta, *a) : prior_posterior(theta, id);
    out[id] = means.dot(theta.beta) + post.mu_u;
  }
  return out;
}

std::map<std::string, Eigen::VectorXd> area_covariate_means(const SurveyDataset& data) {
  std::map<std::string, Eigen::VectorXd> out;
  for (const auto& a : data.areas()) out[a.id] = (a.x.transpose() * a.w) / a.w.sum();
  return out;
}

// -------------------------------------------------------------------------
// Fay-Herriot
// -------------------------------------------------------------------------

FhResult fh_eblup(const Eigen::Ref<const Eigen::VectorXd>& direct_estimates,
                  const Eigen::Ref<const Eigen::VectorXd>& sampling_variances,
                  const Eigen::Ref<const Eigen::MatrixXd>& area_means, const FhOptions& options) {
  const Index m = direct_estimates.size();
  const Index p = area_means.cols();
  if (sampling_variances.size() != m || area_means.rows() != m) throw InputError("fh_eblup: size mismatch");
  if (m < p + 2) throw InputError("fh_eblup: need at least p + 2 areas");
  if (!direct_estimates.allFinite() || !sampling_variances.allFinite())
    throw InputError("fh_eblup: non-finite direct estimate or variance");
  if ((sampling_variances.array() <= 0.0).all()) throw InputError("fh_eblup: all sampling variances are zero");
  const Eigen::VectorXd psi = sampling_variances.cwiseMax(options.variance_floor);
  const auto& X = area_means;
  const auto& y = direct_estimates;

  std::vector<double> sorted(psi.data(), psi.data() + m);
  std::nth_element(sorted.begin(), sorted.begin() + m / 2, sorted.end());
  const double scale = sorted[static_cast<std::size_t>(m / 2)];

  FhResult r;
  double sigma2 = scale;
  bool converged = false;
  for (int it = 0; it < options.max_iterations; ++it) {
    const Eigen::VectorXd vi = (psi.array() + sigma2).inverse();
    const Eigen::MatrixXd xt_vi = X.transpose() * vi.asDiagonal();
    Eigen::LDLT<Eigen::MatrixXd> ldlt(xt_vi * X);
    if (ldlt.info() != Eigen::Success) throw NumericalError("fh_eblup: singular area-level design");
    Eigen::MatrixXd P = -xt_vi.transpose() * ldlt.solve(xt_vi);
    P.diagonal() += vi;
    const Eigen::VectorXd py = P * y;
    const double score = -0.5 * P.trace() + 0.5 * py.squaredNorm();
    const double info = 0.5 * P.cwiseProduct(P.transpose()).sum();
    double next = sigma2 + score / std::max(info, std::numeric_limits<double>::min());
    if (!std::isfinite(next)) throw NumericalError("fh_eblup: Fisher scoring diverged");
    next = std::max(next, 0.0);
    const double change = std::abs(next - sigma2);
    sigma2 = next;
    r.iterations = it + 1;
    if (change <= options.tol * std::max(sigma2, scale)) {
      converged = true;
      break;
    }
  }
  if (!converged) throw NumericalError("fh_eblup: no convergence after max iterations");

  const Eigen::VectorXd vi = (psi.array() + sigma2).inverse();
  const Eigen::MatrixXd xt_vi = X.transpose() * vi.asDiagonal();
  r.beta = (xt_vi * X).ldlt().solve(xt_vi * y);
  r.sigma2_v = sigma2;
  r.gamma = (sigma2 / (psi.array() + sigma2)).matrix();
  const Eigen::VectorXd synthetic = X * r.beta;
  r.eblup = r.gamma.cwiseProduct(y) + (Eigen::VectorXd::Ones(m) - r.gamma).cwiseProduct(synthetic);
  return r;
}

DirectWithVariance direct_with_variance(const SurveyDataset& s, const IndicatorSpec& spec) {
  spec.validate();
  const Index D = static_cast<Index>(s.area_count());
  DirectWithVariance out{Eigen::VectorXd(D), Eigen::VectorXd(D)};
  std::vector<bool> single(static_cast<std::size_t>(D), false);
  double pooled = 0.0;
  int pooled_n = 0;
  for (Index d = 0; d < D; ++d) {
    const auto& a = s.area(static_cast<std::size_t>(d));
    if (!a.has_y()) throw InputError("direct: area '" + a.id + "' has no responses");
    const Eigen::VectorXd v = unit_values(spec, a.y, a.z_line);
    const double wsum = a.w.sum();
    const double est = a.w.dot(v) / wsum;
    out.estimate(d) = est;
    const double n = static_cast<double>(a.size());
    if (a.size() < 2) {
      single[static_cast<std::size_t>(d)] = true;
      continue;
    }
    const double ss = (a.w.array() * (v.array() - est)).square().sum();
    out.variance(d) = n / (n - 1.0) * ss / (wsum * wsum);
    pooled += out.variance(d);
    ++pooled_n;
  }
  if (pooled_n == 0) throw InputError("direct_with_variance: every area has a single unit");
  for (Index d = 0; d < D; ++d)
    if (single[static_cast<std::size_t>(d)]) out.variance(d) = pooled / pooled_n;
  return out;
}

std::vector<AreaPrediction> fh(const SurveyDataset& s, const IndicatorSpec& spec,
                               const std::map<std::string, Eigen::VectorXd>& xbar, const FhOptions& options) {
  const auto dv = direct_with_variance(s, spec);
  const Index D = static_cast<Index>(s.area_count());
  Eigen::MatrixXd X(D, s.covariate_dim());
  for (Index d = 0; d < D; ++d) {
    const auto& id = s.area(static_cast<std::size_t>(d)).id;
    auto it = xbar.find(id);
    if (it == xbar.end()) throw InputError("fh: no covariate means for area '" + id + "'");
    X.row(d) = it->second.transpose();
  }
  const FhResult r = fh_eblup(dv.estimate, dv.variance, X, options);
  std::vector<AreaPrediction> out;
  for (Index d = 0; d < D; ++d) {
    AreaPrediction p;
    p.area_id = s.area(static_cast<std::size_t>(d)).id;
    p.estimator = Estimator::FH;
    p.indicator = spec.label();
    p.point = r.eblup(d);
    p.n = s.area(static_cast<std::size_t>(d)).size();
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace sae
