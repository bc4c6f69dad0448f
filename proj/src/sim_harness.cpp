#include "sae/sim_harness.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>

#include <boost/random/normal_distribution.hpp>

#include "sae/error.hpp"
#include "sae/parallel.hpp"
#include "sae/predictors.hpp"
#include "sae/survey_tools.hpp"
#include "sae/uncertainty.hpp"

namespace sae {

std::string to_string(PrimeRule r) {
  switch (r) {
    case PrimeRule::multiplier: return "multiplier";
    case PrimeRule::equal_to_s: return "s";
    case PrimeRule::census: return "census";
  }
  return "?";
}

PrimeRule parse_prime_rule(const std::string& s) {
  if (s == "multiplier") return PrimeRule::multiplier;
  if (s == "s" || s == "equal_to_s" || s == "same-as-s") return PrimeRule::equal_to_s;
  if (s == "census") return PrimeRule::census;
  throw InputError("unknown s' rule '" + s + "'");
}

// -------------------------------------------------------------------------
// Configuration
// -------------------------------------------------------------------------

ExperimentConfig ExperimentConfig::desk() { return ExperimentConfig{}; }

ExperimentConfig ExperimentConfig::full() {
  ExperimentConfig c;
  c.L = 1000;
  c.B = 500;
  c.L_true = 10000;
  return c;
}

ExperimentConfig ExperimentConfig::preset(const std::string& name) {
  if (name == "desk") return desk();
  if (name == "full") return full();
  throw InputError("unknown preset '" + name + "'");
}

namespace {

int scaled(int D, int breakpoint) { return static_cast<int>(std::lround(breakpoint * D / 80.0)); }

}  // namespace

std::vector<int> default_sample_sizes(int D) {
  std::vector<int> n(static_cast<std::size_t>(D));
  for (int d = 1; d <= D; ++d) n[static_cast<std::size_t>(d - 1)] = d <= scaled(D, 30) ? 25 : d <= scaled(D, 60) ? 50 : 75;
  return n;
}

std::vector<int> default_outdating_pattern(int D) {
  std::vector<int> p(static_cast<std::size_t>(D));
  for (int d = 1; d <= D; ++d) {
    const bool shrink = d <= scaled(D, 15) || (d > scaled(D, 30) && d <= scaled(D, 45)) || d > scaled(D, 74);
    p[static_cast<std::size_t>(d - 1)] = shrink ? -1 : 1;
  }
  return p;
}

std::vector<int> ExperimentConfig::population_sizes() const {
  return N_d.empty() ? std::vector<int>(static_cast<std::size_t>(D), N) : N_d;
}

std::vector<int> ExperimentConfig::sample_sizes() const { return n_d.empty() ? default_sample_sizes(D) : n_d; }

std::vector<int> ExperimentConfig::prime_sizes() const {
  const auto n = sample_sizes();
  const auto N_all = population_sizes();
  std::vector<int> out(n.size());
  for (std::size_t d = 0; d < n.size(); ++d) {
    switch (prime_rule) {
      case PrimeRule::multiplier:
        out[d] = std::min(N_all[d], static_cast<int>(std::lround(prime_multiplier * n[d])));
        break;
      case PrimeRule::equal_to_s: out[d] = n[d]; break;
      case PrimeRule::census: out[d] = N_all[d]; break;
    }
  }
  return out;
}

std::vector<int> ExperimentConfig::outdating_pattern() const {
  return pattern.empty() ? default_outdating_pattern(D) : pattern;
}

std::vector<IndicatorSpec> ExperimentConfig::indicators() const {
  std::vector<IndicatorSpec> out;
  for (double a : alphas) out.push_back(IndicatorSpec::fgt(a, z, Transform::log_shift(0.0)));
  return out;
}

void ExperimentConfig::validate() const {
  if (D < 2) throw InputError("config: D must be >= 2");
  if (!N_d.empty() && static_cast<int>(N_d.size()) != D) throw InputError("config: N_d needs D entries");
  if (!n_d.empty() && static_cast<int>(n_d.size()) != D) throw InputError("config: n_d needs D entries");
  if (!pattern.empty() && static_cast<int>(pattern.size()) != D) throw InputError("config: pattern needs D entries");
  for (int v : outdating_pattern())
    if (v != 1 && v != -1) throw InputError("config: pattern entries must be -1 or +1");
  const auto N_all = population_sizes();
  const auto n = sample_sizes();
  for (int d = 0; d < D; ++d) {
    if (n[static_cast<std::size_t>(d)] < 1 || n[static_cast<std::size_t>(d)] > N_all[static_cast<std::size_t>(d)])
      throw InputError("config: need 1 <= n_d <= N_d in every area");
  }
  if (covariates.empty()) throw InputError("config: at least one covariate law required");
  for (const auto& g : covariates)
    if (!(g.scale > 0.0) || !(g.shape_base > 0.0) || !(g.shape_base + g.shape_slope > 0.0))
      throw InputError("config: gamma shape and scale must be positive");
  if (theta_true.beta.size() != static_cast<Index>(covariates.size()) + 1)
    throw InputError("config: beta needs one entry per covariate plus the intercept");
  theta_true.validate_allow_degenerate();
  if (!(z > 0.0)) throw InputError("config: poverty line must be > 0");
  if (alphas.empty()) throw InputError("config: no indicators");
  for (double a : alphas)
    if (!(a >= 0.0)) throw InputError("config: FGT order must be >= 0");
  if (prime_rule == PrimeRule::multiplier && !(prime_multiplier >= 1.0))
    throw InputError("config: s' multiplier must be >= 1");
  if (lambdas.empty()) throw InputError("config: at least one lambda required");
  for (double l : lambdas)
    if (!(l >= 0.0 && l <= 1.0)) throw InputError("config: lambda must lie in [0,1]");
  if (L < 1) throw InputError("config: L must be >= 1");
  if (B < 2) throw InputError("config: B must be >= 2");
  if (L_mc < 1) throw InputError("config: L_mc must be >= 1");
  if (L_true < 1) throw InputError("config: L_true must be >= 1");
}

// -------------------------------------------------------------------------
// Population and outdating
// -------------------------------------------------------------------------

SurveyDataset Population::census() const {
  std::vector<AreaSample> areas;
  areas.reserve(x.size());
  for (std::size_t d = 0; d < x.size(); ++d) {
    AreaSample a;
    a.id = area_ids[d];
    a.x = x[d];
    a.w = Eigen::VectorXd::Ones(x[d].rows());
    areas.push_back(std::move(a));
  }
  return SurveyDataset(SurveyKind::census, std::move(areas));
}

Population generate_population(const ExperimentConfig& cfg, const StreamKey& stream) {
  cfg.validate();
  const auto N_all = cfg.population_sizes();
  const Index p = static_cast<Index>(cfg.covariates.size()) + 1;
  Population pop;
  for (int d = 1; d <= cfg.D; ++d) {
    const Index N = N_all[static_cast<std::size_t>(d - 1)];
    pop.area_ids.push_back(std::to_string(d));
    Eigen::MatrixXd x(N, p);
    x.col(0).setOnes();
    Engine rng = stream.child(static_cast<std::uint64_t>(d)).engine();
    for (std::size_t q = 0; q < cfg.covariates.size(); ++q) {
      const auto& g = cfg.covariates[q];
      std::gamma_distribution<double> gamma(g.shape_base + g.shape_slope * d / cfg.D, g.scale);
      for (Index i = 0; i < N; ++i) x(i, static_cast<Index>(q) + 1) = gamma(rng);
    }
    pop.x.push_back(std::move(x));
  }
  return pop;
}

std::vector<Eigen::VectorXd> draw_population_responses(const Population& pop, const NerParams& theta,
                                                       const StreamKey& stream) {
  theta.validate_allow_degenerate();
  const double sd_u = std::sqrt(theta.sigma2_u);
  const double sd_e = std::sqrt(theta.sigma2_e);
  boost::random::normal_distribution<double> normal;
  std::vector<Eigen::VectorXd> y(pop.x.size());
  for (std::size_t d = 0; d < pop.x.size(); ++d) {
    Engine rng = stream.child(pop.area_ids[d]).engine();
    const double u = sd_u * normal(rng);
    y[d] = pop.x[d] * theta.beta;
    for (Index i = 0; i < y[d].size(); ++i) y[d](i) += u + sd_e * normal(rng);
  }
  return y;
}

SurveyDataset outdate_census(const SurveyDataset& census, double lambda, std::span<const int> pattern) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw InputError("outdate_census: lambda must lie in [0,1]");
  if (pattern.size() != census.area_count()) throw InputError("outdate_census: pattern needs one entry per area");
  std::vector<AreaSample> areas = census.areas();
  for (std::size_t d = 0; d < areas.size(); ++d) {
    auto& x = areas[d].x;
    const bool intercept = (x.col(0).array() == 1.0).all();
    const Index first = intercept ? 1 : 0;
    x.rightCols(x.cols() - first) *= 1.0 + pattern[d] * lambda;
  }
  return SurveyDataset(census.kind(), std::move(areas), census.second_order());
}

// -------------------------------------------------------------------------
// Replicates
// -------------------------------------------------------------------------

namespace {

struct StudyFrame {
  ExperimentConfig cfg;
  Population pop;
  SurveyDataset census;
  std::vector<IndicatorSpec> specs;
  std::vector<int> n, n_prime;
};

StudyFrame make_frame(const ExperimentConfig& cfg) {
  cfg.validate();
  StudyFrame f;
  f.cfg = cfg;
  f.pop = generate_population(cfg, StreamKey(cfg.seed).child("population"));
  f.census = f.pop.census();
  f.specs = cfg.indicators();
  f.n = cfg.sample_sizes();
  f.n_prime = cfg.prime_sizes();
  return f;
}

AreaSample take_sample(const Population& pop, std::size_t d, const Eigen::VectorXd* y, Index n, Engine& rng) {
  const Index N = pop.x[d].rows();
  const SrsDraw draw = srs_sample(N, n, rng);
  AreaSample a;
  a.id = pop.area_ids[d];
  a.x.resize(n, pop.x[d].cols());
  if (y) a.y.resize(n);
  for (Index i = 0; i < n; ++i) {
    const Index pos = draw.positions[static_cast<std::size_t>(i)];
    a.x.row(i) = pop.x[d].row(pos);
    if (y) a.y(i) = (*y)(pos);
    a.unit_ids.push_back(a.id + ":" + std::to_string(pos + 1));
  }
  a.w = Eigen::VectorXd::Constant(n, static_cast<double>(N) / static_cast<double>(n));
  a.pi1 = Eigen::VectorXd::Constant(n, draw.pi1);
  a.population_size = static_cast<double>(N);
  return a;
}

struct ReplicateData {
  Eigen::MatrixXd truth;  // indicators x D
  SurveyDataset s;
  SurveyDataset s_prime;
};

// Population responses, true indicators and both samples of one replicate.
ReplicateData draw_replicate(const StudyFrame& f, const StreamKey& stream) {
  const auto y = draw_population_responses(f.pop, f.cfg.theta_true, stream.child("y"));
  const std::size_t D = f.pop.x.size();
  ReplicateData r;
  r.truth.resize(static_cast<Index>(f.specs.size()), static_cast<Index>(D));
  for (std::size_t k = 0; k < f.specs.size(); ++k)
    for (std::size_t d = 0; d < D; ++d)
      r.truth(static_cast<Index>(k), static_cast<Index>(d)) = population_indicator(f.specs[k], y[d]).value;

  std::vector<AreaSample> s_areas, p_areas;
  for (std::size_t d = 0; d < D; ++d) {
    Engine rs = stream.child("s").child(static_cast<std::uint64_t>(d)).engine();
    s_areas.push_back(take_sample(f.pop, d, &y[d], f.n[d], rs));
    if (f.cfg.prime_rule == PrimeRule::multiplier) {
      Engine rp = stream.child("s_prime").child(static_cast<std::uint64_t>(d)).engine();
      p_areas.push_back(take_sample(f.pop, d, nullptr, f.n_prime[d], rp));
    }
  }
  r.s = SurveyDataset(SurveyKind::small_survey, std::move(s_areas), SecondOrderRule::srs);
  switch (f.cfg.prime_rule) {
    case PrimeRule::multiplier:
      r.s_prime = SurveyDataset(SurveyKind::large_survey, std::move(p_areas), SecondOrderRule::srs);
      break;
    case PrimeRule::equal_to_s: r.s_prime = r.s; break;
    case PrimeRule::census: r.s_prime = f.census; break;
  }
  return r;
}

struct ExperimentReplicate {
  bool ok = false;
  std::string message;
  Eigen::MatrixXd truth;
  Eigen::MatrixXd estimates;
};

}  // namespace

// -------------------------------------------------------------------------
// Metrics
// -------------------------------------------------------------------------

MetricsResult metrics(const ReplicateLog& log) {
  const std::size_t R = log.estimates.size();
  if (R == 0 || log.truth.size() != R) throw InputError("metrics: need at least one replicate");
  const std::size_t D = log.area_ids.size();
  MetricsResult out;
  std::vector<double> err(R), sq(R), tr(R);
  // summary accumulators keyed by (indicator, lambda index, estimator)
  std::map<std::tuple<int, int, std::string>, std::pair<std::vector<double>, std::vector<double>>> acc;
  for (std::size_t c = 0; c < log.columns.size(); ++c) {
    const auto& col = log.columns[c];
    for (std::size_t d = 0; d < D; ++d) {
      for (std::size_t r = 0; r < R; ++r) {
        const double t = log.truth[r](col.indicator, static_cast<Index>(d));
        const double e = log.estimates[r](static_cast<Index>(c), static_cast<Index>(d)) - t;
        err[r] = e;
        sq[r] = e * e;
        tr[r] = t;
      }
      AreaMetrics m;
      m.area_id = log.area_ids[d];
      m.estimator = col.estimator;
      m.indicator = log.indicators[static_cast<std::size_t>(col.indicator)];
      m.lambda = col.lambda_index >= 0 ? log.lambdas[static_cast<std::size_t>(col.lambda_index)]
                                       : std::numeric_limits<double>::quiet_NaN();
      const double mean_truth = pairwise_mean(tr);
      if (mean_truth == 0.0) {
        m.undefined = true;
        m.rb = m.rrmse = std::numeric_limits<double>::quiet_NaN();
      } else {
        m.rb = pairwise_mean(err) / mean_truth;
        m.rrmse = std::sqrt(pairwise_mean(sq)) / mean_truth;
      }
      out.areas.push_back(m);
    }
  }
  // Summaries: lambda-free columns are repeated for every lambda.
  for (std::size_t k = 0; k < log.indicators.size(); ++k) {
    for (std::size_t li = 0; li < log.lambdas.size(); ++li) {
      for (const char* est : {"DIR", "FH", "EB", "SEB"}) {
        std::vector<double> arb, rr;
        for (std::size_t c = 0; c < log.columns.size(); ++c) {
          const auto& col = log.columns[c];
          if (col.estimator != est || col.indicator != static_cast<int>(k)) continue;
          if (col.lambda_index >= 0 && col.lambda_index != static_cast<int>(li)) continue;
          for (std::size_t d = 0; d < D; ++d) {
            const auto& m = out.areas[c * D + d];
            if (m.undefined) continue;
            arb.push_back(std::abs(m.rb));
            rr.push_back(m.rrmse);
          }
        }
        if (arb.empty()) continue;
        out.summary.push_back({log.indicators[k], log.lambdas[li], est, pairwise_mean(arb), pairwise_mean(rr)});
      }
    }
  }
  return out;
}

// -------------------------------------------------------------------------
// Experiment
// -------------------------------------------------------------------------

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  const StudyFrame f = make_frame(cfg);
  const std::size_t D = f.pop.x.size();
  const std::size_t K = f.specs.size();
  const auto pattern = cfg.outdating_pattern();

  std::vector<SurveyDataset> outdated;
  std::vector<std::map<std::string, Eigen::VectorXd>> outdated_means;
  for (double lambda : cfg.lambdas) {
    outdated.push_back(outdate_census(f.census, lambda, pattern));
    outdated_means.push_back(area_covariate_means(outdated.back()));
  }

  ExperimentResult res;
  ReplicateLog& log = res.log;
  log.area_ids = f.pop.area_ids;
  log.n = f.n;
  log.n_prime = f.n_prime;
  for (const auto& s : f.specs) log.indicators.push_back(s.label());
  log.lambdas = cfg.lambdas;
  for (std::size_t k = 0; k < K; ++k) {
    log.columns.push_back({"DIR", -1, static_cast<int>(k)});
    log.columns.push_back({"SEB", -1, static_cast<int>(k)});
  }
  for (std::size_t li = 0; li < cfg.lambdas.size(); ++li) {
    for (std::size_t k = 0; k < K; ++k) {
      log.columns.push_back({"EB", static_cast<int>(li), static_cast<int>(k)});
      if (cfg.include_fh) log.columns.push_back({"FH", static_cast<int>(li), static_cast<int>(k)});
    }
  }
  const std::size_t C = log.columns.size();

  const StreamKey master(cfg.seed);
  std::vector<ExperimentReplicate> reps(static_cast<std::size_t>(cfg.L));
  parallel_for(reps.size(), cfg.threads, [&](std::size_t l) {
    const StreamKey stream = master.child("replicate").child(static_cast<std::uint64_t>(l));
    ExperimentReplicate& out = reps[l];
    try {
      const ReplicateData data = draw_replicate(f, stream);
      const NerFit fit = fit_ner_reml(data.s);
      EbOptions eb;
      eb.L_mc = cfg.L_mc;
      eb.stream = stream.child("eb");
      const auto dir = direct(data.s, f.specs);
      const auto seb_pred = seb(fit.theta, data.s, data.s_prime, f.specs, eb);
      out.truth = data.truth;
      out.estimates.resize(static_cast<Index>(C), static_cast<Index>(D));
      Index c = 0;
      for (std::size_t k = 0; k < K; ++k) {
        for (std::size_t d = 0; d < D; ++d) {
          out.estimates(c, static_cast<Index>(d)) = dir[k][d].point;
          out.estimates(c + 1, static_cast<Index>(d)) = seb_pred[k][d].point;
        }
        c += 2;
      }
      const auto eb_sweep = ceb_sweep(fit.theta, data.s, outdated, f.specs, eb);
      for (std::size_t li = 0; li < cfg.lambdas.size(); ++li) {
        for (std::size_t k = 0; k < K; ++k) {
          for (std::size_t d = 0; d < D; ++d) out.estimates(c, static_cast<Index>(d)) = eb_sweep[li][k][d].point;
          ++c;
          if (cfg.include_fh) {
            const auto fh_pred = fh(data.s, f.specs[k], outdated_means[li]);
            for (std::size_t d = 0; d < D; ++d) out.estimates(c, static_cast<Index>(d)) = fh_pred[d].point;
            ++c;
          }
        }
      }
      out.ok = true;
    } catch (const NumericalError& e) {
      out.message = "replicate " + std::to_string(l) + " dropped: " + e.what();
    }
  });

  for (auto& r : reps) {
    if (r.ok) {
      log.truth.push_back(std::move(r.truth));
      log.estimates.push_back(std::move(r.estimates));
    } else {
      ++log.dropped;
      log.messages.push_back(r.message);
    }
  }
  if (log.estimates.empty()) throw NumericalError("run_experiment: every replicate failed");
  MetricsResult m = metrics(log);
  res.areas = std::move(m.areas);
  res.summary = std::move(m.summary);
  return res;
}

// -------------------------------------------------------------------------
// Bootstrap study
// -------------------------------------------------------------------------

BootstrapStudyResult run_bootstrap_study(const ExperimentConfig& cfg) {
  const StudyFrame f = make_frame(cfg);
  const std::size_t D = f.pop.x.size();
  const std::size_t K = f.specs.size();
  const StreamKey master(cfg.seed);

  struct TruthRep {
    bool ok = false;
    std::string message;
    Eigen::MatrixXd sq;  // K x D
  };
  std::vector<TruthRep> truth(static_cast<std::size_t>(cfg.L_true));
  parallel_for(truth.size(), cfg.threads, [&](std::size_t l) {
    const StreamKey stream = master.child("truth").child(static_cast<std::uint64_t>(l));
    try {
      const ReplicateData data = draw_replicate(f, stream);
      const NerFit fit = fit_ner_reml(data.s);
      EbOptions eb;
      eb.L_mc = cfg.L_mc;
      eb.stream = stream.child("eb");
      const auto pred = seb(fit.theta, data.s, data.s_prime, f.specs, eb);
      truth[l].sq.resize(static_cast<Index>(K), static_cast<Index>(D));
      for (std::size_t k = 0; k < K; ++k)
        for (std::size_t d = 0; d < D; ++d) {
          const double e = pred[k][d].point - data.truth(static_cast<Index>(k), static_cast<Index>(d));
          truth[l].sq(static_cast<Index>(k), static_cast<Index>(d)) = e * e;
        }
      truth[l].ok = true;
    } catch (const NumericalError& e) {
      truth[l].message = "truth replicate " + std::to_string(l) + " dropped: " + e.what();
    }
  });

  struct BootRep {
    bool ok = false;
    std::string message;
    int dropped = 0;
    Eigen::MatrixXd naive, corrected, corrected_pos, fallback;  // K x D
  };
  std::vector<BootRep> boot(static_cast<std::size_t>(cfg.L));
  parallel_for(boot.size(), cfg.threads, [&](std::size_t l) {
    const StreamKey stream = master.child("bootstrap").child(static_cast<std::uint64_t>(l));
    BootRep& out = boot[l];
    try {
      const ReplicateData data = draw_replicate(f, stream);
      const NerFit fit = fit_ner_reml(data.s);
      BootstrapOptions bo;
      bo.B = cfg.B;
      bo.L_mc = cfg.L_mc;
      bo.stream = stream.child("replicates");
      const BootstrapResult br = bootstrap_total_mse(data.s, data.s_prime, fit.theta, f.specs, bo);
      out.dropped = br.dropped;
      const Index Ki = static_cast<Index>(K), Di = static_cast<Index>(D);
      out.naive.resize(Ki, Di);
      out.corrected.resize(Ki, Di);
      out.corrected_pos.resize(Ki, Di);
      out.fallback.resize(Ki, Di);
      for (std::size_t k = 0; k < K; ++k)
        for (std::size_t d = 0; d < D; ++d) {
          const MseBundle& m = br.bundles[k][d];
          out.naive(static_cast<Index>(k), static_cast<Index>(d)) = m.mse_naive;
          out.corrected(static_cast<Index>(k), static_cast<Index>(d)) = m.mse_corrected;
          out.corrected_pos(static_cast<Index>(k), static_cast<Index>(d)) = m.mse_corrected_pos;
          out.fallback(static_cast<Index>(k), static_cast<Index>(d)) = m.fallback_used ? 1.0 : 0.0;
        }
      out.ok = true;
    } catch (const NumericalError& e) {
      out.message = "bootstrap study replicate " + std::to_string(l) + " dropped: " + e.what();
    }
  });

  BootstrapStudyResult res;
  std::vector<const TruthRep*> t_kept;
  for (const auto& t : truth) {
    if (t.ok)
      t_kept.push_back(&t);
    else
      res.messages.push_back(t.message);
  }
  std::vector<const BootRep*> b_kept;
  for (const auto& b : boot) {
    res.dropped_bootstrap_replicates += b.dropped;
    if (b.ok)
      b_kept.push_back(&b);
    else
      res.messages.push_back(b.message);
  }
  res.L_true_effective = static_cast<int>(t_kept.size());
  res.L_effective = static_cast<int>(b_kept.size());
  if (t_kept.empty() || b_kept.empty()) throw NumericalError("run_bootstrap_study: every replicate failed");

  std::vector<double> tv(t_kept.size()), v(b_kept.size());
  auto mean_of = [&](Eigen::MatrixXd BootRep::*field, Index k, Index d) {
    for (std::size_t i = 0; i < b_kept.size(); ++i) v[i] = (b_kept[i]->*field)(k, d);
    return pairwise_mean(v);
  };
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t d = 0; d < D; ++d) {
      const Index ki = static_cast<Index>(k), di = static_cast<Index>(d);
      for (std::size_t i = 0; i < t_kept.size(); ++i) tv[i] = t_kept[i]->sq(ki, di);
      BootstrapStudyRow row;
      row.area_id = f.pop.area_ids[d];
      row.indicator = f.specs[k].label();
      row.n = f.n[d];
      row.n_prime = f.n_prime[d];
      row.mse_true = pairwise_mean(tv);
      row.mse_naive = mean_of(&BootRep::naive, ki, di);
      row.mse_corrected = mean_of(&BootRep::corrected, ki, di);
      row.mse_corrected_pos = mean_of(&BootRep::corrected_pos, ki, di);
      row.fallback_rate = mean_of(&BootRep::fallback, ki, di);
      res.rows.push_back(std::move(row));
    }
  }
  return res;
}

}  // namespace sae
