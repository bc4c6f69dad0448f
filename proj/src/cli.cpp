#include "sae/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "sae/csv.hpp"
#include "sae/data_model.hpp"
#include "sae/error.hpp"
#include "sae/indicators.hpp"
#include "sae/ner_fit.hpp"
#include "sae/predictors.hpp"
#include "sae/sim_harness.hpp"
#include "sae/survey_tools.hpp"
#include "sae/uncertainty.hpp"

namespace sae::cli {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

// -------------------------------------------------------------------------
// Configuration
// -------------------------------------------------------------------------

/// Raw flag values; only flags given on the command line are merged.
struct Flags {
  std::string config, out_dir, s, s_prime, census, params, indicators, transform, preset, study, prime_rule;
  std::uint64_t seed = 0;
  unsigned threads = 0;
  std::vector<std::string> estimators;
  std::vector<double> lambdas;
  int L_mc = 0, B = 0, L = 0, L_true = 0, D = 0, N = 0;
  double z = 0, shift = 0, cv0 = 0, eps0 = 0, alpha = 0, deff = 0, multiplier = 0;
  bool fit = false, no_fh = false;
  std::map<std::string, std::vector<CLI::Option*>> given;  // one option per subcommand

  [[nodiscard]] bool has(const std::string& name) const {
    auto it = given.find(name);
    if (it == given.end()) return false;
    return std::any_of(it->second.begin(), it->second.end(), [](const CLI::Option* o) { return o->count() > 0; });
  }
};

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw InputError("config '" + path + "' is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw InputError("config root must be an object");
  return j;
}

void merge_flags(json& j, const Flags& f) {
  if (f.has("seed")) j["seed"] = f.seed;
  if (f.has("threads")) j["threads"] = f.threads;
  if (f.has("out-dir")) j["out_dir"] = f.out_dir;
  if (f.has("s")) j["data"]["s"] = f.s;
  if (f.has("s-prime")) j["data"]["s_prime"] = f.s_prime;
  if (f.has("census")) j["data"]["census"] = f.census;
  if (f.has("params")) j["model"]["params"] = f.params;
  if (f.has("fit")) j["model"]["fit"] = true;
  if (f.has("indicators")) {
    json list = json::array();
    std::stringstream ss(f.indicators);
    std::string tok;
    while (std::getline(ss, tok, ',')) list.push_back(tok);
    j["indicators"] = list;
  }
  if (f.has("z")) j["z"] = f.z;
  if (f.has("transform")) j["transform"] = f.transform;
  if (f.has("shift")) j["shift"] = f.shift;
  if (f.has("estimators")) j["predict"]["estimators"] = f.estimators;
  if (f.has("L_mc")) j["L_mc"] = f.L_mc;
  if (f.has("B")) j["mse"]["B"] = f.B;
  if (f.has("cv0")) j["samplesize"]["cv0"] = f.cv0;
  if (f.has("eps0")) j["samplesize"]["eps0"] = f.eps0;
  if (f.has("alpha")) j["samplesize"]["alpha"] = f.alpha;
  if (f.has("deff")) j["samplesize"]["deff"] = f.deff;
  if (f.has("preset")) j["simulate"]["preset"] = f.preset;
  if (f.has("study")) j["simulate"]["study"] = f.study;
  if (f.has("lambda")) j["simulate"]["lambdas"] = f.lambdas;
  if (f.has("L")) j["simulate"]["L"] = f.L;
  if (f.has("L_true")) j["simulate"]["L_true"] = f.L_true;
  if (f.has("D")) j["simulate"]["D"] = f.D;
  if (f.has("N")) j["simulate"]["N"] = f.N;
  if (f.has("prime-rule")) j["simulate"]["prime_rule"] = f.prime_rule;
  if (f.has("multiplier")) j["simulate"]["prime_multiplier"] = f.multiplier;
  if (f.has("no-fh")) j["simulate"]["include_fh"] = false;
}

template <class T>
T get_or(const json& j, const std::string& key, T fallback) {
  if (!j.is_object() || !j.contains(key) || j.at(key).is_null()) return fallback;
  return j.at(key).get<T>();
}

const json& section(const json& j, const std::string& key) {
  static const json empty = json::object();
  if (!j.contains(key)) return empty;
  if (!j.at(key).is_object()) throw InputError("config section '" + key + "' must be an object");
  return j.at(key);
}

/// Everything except the thread count and output directory.
std::string config_hash(json j) {
  j.erase("threads");
  j.erase("out_dir");
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(j.dump())));
  return buf;
}

struct Context {
  json cfg;
  std::uint64_t seed = 0;
  unsigned threads = 0;
  fs::path out_dir;
  std::string provenance;
  std::ostream* out = nullptr;
  std::ostream* err = nullptr;
};

Context make_context(const Flags& f, std::ostream& out, std::ostream& err) {
  Context c;
  c.cfg = load_config(f.config);
  merge_flags(c.cfg, f);
  c.seed = get_or<std::uint64_t>(c.cfg, "seed", ExperimentConfig{}.seed);
  c.threads = get_or<unsigned>(c.cfg, "threads", 0);
  c.out_dir = get_or<std::string>(c.cfg, "out_dir", ".");
  c.provenance = std::string("# sae ") + kVersion + " seed=" + std::to_string(c.seed) + " config=" + config_hash(c.cfg);
  c.out = &out;
  c.err = &err;
  return c;
}

// -------------------------------------------------------------------------
// Inputs
// -------------------------------------------------------------------------

CsvSchema schema_from(const json& cfg, SurveyKind kind) {
  const json& sc = section(section(cfg, "data"), "schema");
  CsvSchema s;
  s.kind = kind;
  s.area = get_or<std::string>(sc, "area", s.area);
  s.x = get_or<std::vector<std::string>>(sc, "x", {});
  s.y = get_or<std::string>(sc, "y", s.y);
  s.w = get_or<std::string>(sc, "w", s.w);
  s.pi1 = get_or<std::string>(sc, "pi1", s.pi1);
  s.z_line = get_or<std::string>(sc, "z_line", s.z_line);
  s.unit_id = get_or<std::string>(sc, "id", s.unit_id);
  if (sc.contains("intercept") && !sc.at("intercept").is_null()) s.intercept = sc.at("intercept").get<std::string>();
  const std::string rule = get_or<std::string>(sc, "second_order", "srs");
  if (rule == "srs")
    s.second_order = SecondOrderRule::srs;
  else if (rule == "none")
    s.second_order = SecondOrderRule::none;
  else
    throw InputError("unknown second_order rule '" + rule + "'");
  return s;
}

std::optional<std::string> data_path(const Context& c, const std::string& key) {
  const json& d = section(c.cfg, "data");
  if (!d.contains(key) || d.at(key).is_null()) return std::nullopt;
  return d.at(key).get<std::string>();
}

SurveyDataset load_s(const Context& c) {
  auto p = data_path(c, "s");
  if (!p) throw InputError("no small survey given (data.s or --s)");
  return load_survey_csv(*p, schema_from(c.cfg, SurveyKind::small_survey));
}

std::optional<SurveyDataset> load_s_prime(const Context& c, const SurveyDataset* s) {
  auto p = data_path(c, "s_prime");
  if (!p) return std::nullopt;
  if (*p == "same-as-s") {
    if (!s) throw InputError("s' = same-as-s needs a small survey");
    return *s;
  }
  return load_survey_csv(*p, schema_from(c.cfg, SurveyKind::large_survey));
}

std::optional<SurveyDataset> load_census(const Context& c) {
  auto p = data_path(c, "census");
  if (!p) return std::nullopt;
  return load_survey_csv(*p, schema_from(c.cfg, SurveyKind::census));
}

Transform transform_from(const json& j, const json& defaults) {
  const std::string name = get_or<std::string>(j, "transform", get_or<std::string>(defaults, "transform", "identity"));
  const double shift = get_or<double>(j, "shift", get_or<double>(defaults, "shift", 0.0));
  if (name == "identity") return Transform::identity();
  if (name == "log") return Transform::log_shift(shift);
  throw InputError("unknown transform '" + name + "'");
}

IndicatorSpec indicator_from_token(const std::string& tok, const json& cfg) {
  const double z = get_or<double>(cfg, "z", 1.0);
  const Transform t = transform_from(json::object(), cfg);
  if (tok == "mean") return IndicatorSpec::mean();
  if (tok == "tmean") return IndicatorSpec::transformed_mean(t);
  if (tok.size() > 1 && tok[0] == 'F') {
    double a;
    if (!csv::parse_double(tok.substr(1), a)) throw InputError("bad indicator '" + tok + "'");
    return IndicatorSpec::fgt(a, z, t);
  }
  throw InputError("unknown indicator '" + tok + "' (mean, tmean, F<alpha>)");
}

std::vector<IndicatorSpec> indicators_from(const json& cfg) {
  std::vector<IndicatorSpec> out;
  if (!cfg.contains("indicators")) {
    out.push_back(IndicatorSpec::mean());
    return out;
  }
  const json& list = cfg.at("indicators");
  if (!list.is_array()) throw InputError("indicators must be a list");
  for (const auto& item : list) {
    if (item.is_string()) {
      out.push_back(indicator_from_token(item.get<std::string>(), cfg));
      continue;
    }
    const std::string type = get_or<std::string>(item, "type", "mean");
    const Transform t = transform_from(item, cfg);
    if (type == "mean")
      out.push_back(IndicatorSpec::mean());
    else if (type == "tmean")
      out.push_back(IndicatorSpec::transformed_mean(t));
    else if (type == "fgt")
      out.push_back(IndicatorSpec::fgt(get_or<double>(item, "alpha", 0.0), get_or<double>(item, "z", get_or<double>(cfg, "z", 1.0)), t));
    else
      throw InputError("unknown indicator type '" + type + "'");
  }
  for (const auto& s : out) s.validate();
  if (out.empty()) throw InputError("no indicators requested");
  return out;
}

NerParams read_params(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open params '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw InputError("params '" + path + "' is not valid JSON: " + e.what());
  }
  NerParams p;
  const auto beta = j.at("beta").get<std::vector<double>>();
  p.beta = Eigen::Map<const Eigen::VectorXd>(beta.data(), static_cast<Index>(beta.size()));
  p.sigma2_u = j.at("sigma2_u").get<double>();
  p.sigma2_e = j.at("sigma2_e").get<double>();
  p.validate();
  return p;
}

NerParams resolve_params(const Context& c, const SurveyDataset& s) {
  const json& m = section(c.cfg, "model");
  if (get_or<bool>(m, "fit", false)) return fit_ner_reml(s).theta;
  const auto path = get_or<std::string>(m, "params", "");
  if (path.empty()) throw InputError("no model parameters: pass --params or --fit");
  NerParams p = read_params(path);
  if (p.beta.size() != s.covariate_dim()) throw InputError("params: beta length does not match the covariates");
  return p;
}

int L_mc_of(const Context& c, const std::string& sec) {
  const int v = get_or<int>(section(c.cfg, sec), "L_mc", get_or<int>(c.cfg, "L_mc", 100));
  if (v < 1) throw InputError("L_mc must be >= 1");
  return v;
}

// -------------------------------------------------------------------------
// Output
// -------------------------------------------------------------------------

class CsvOut {
 public:
  CsvOut(const Context& c, const std::string& name, const std::vector<std::string>& columns) {
    fs::create_directories(c.out_dir);
    path_ = c.out_dir / name;
    file_.open(path_, std::ios::binary);
    if (!file_) throw InputError("cannot write '" + path_.string() + "'");
    file_ << c.provenance << '\n';
    for (std::size_t i = 0; i < columns.size(); ++i) file_ << (i ? "," : "") << columns[i];
    file_ << '\n';
    *c.out << "wrote " << path_.string() << '\n';
  }
  CsvOut& str(const std::string& v) { return sep() << csv::quote_if_needed(v), *this; }
  CsvOut& num(double v) { return sep() << (std::isnan(v) ? std::string("NA") : csv::format_double(v)), *this; }
  CsvOut& integer(long long v) { return sep() << v, *this; }
  CsvOut& flag(bool v) { return sep() << (v ? 1 : 0), *this; }
  CsvOut& na() { return sep() << "NA", *this; }
  void end() {
    file_ << '\n';
    first_ = true;
  }

 private:
  std::ostream& sep() {
    if (!first_) file_ << ',';
    first_ = false;
    return file_;
  }
  fs::path path_;
  std::ofstream file_;
  bool first_ = true;
};

double population_size_of(const AreaSample& a) { return a.population_size > 0.0 ? a.population_size : a.weight_total(); }

struct SizingSettings {
  double cv0 = -1.0;  // < 0: estimate from the data
  double eps0 = 0.03;
  double alpha = 0.05;
  double deff = 1.0;
};

SizingSettings sizing_from(const Context& c) {
  const json& j = section(c.cfg, "samplesize");
  SizingSettings s;
  s.cv0 = get_or<double>(j, "cv0", -1.0);
  s.eps0 = get_or<double>(j, "eps0", s.eps0);
  s.alpha = get_or<double>(j, "alpha", s.alpha);
  s.deff = get_or<double>(j, "deff", s.deff);
  return s;
}

// -------------------------------------------------------------------------
// Commands
// -------------------------------------------------------------------------

int cmd_fit(const Context& c) {
  const SurveyDataset s = load_s(c);
  const NerFit fit = fit_ner_reml(s);
  fs::create_directories(c.out_dir);
  json p;
  p["beta"] = std::vector<double>(fit.theta.beta.data(), fit.theta.beta.data() + fit.theta.beta.size());
  p["sigma2_u"] = fit.theta.sigma2_u;
  p["sigma2_e"] = fit.theta.sigma2_e;
  p["log_reml"] = fit.log_reml;
  p["iterations"] = fit.iterations;
  p["boundary"] = fit.boundary;
  p["provenance"] = c.provenance.substr(2);
  const fs::path params_path = c.out_dir / "params.json";
  std::ofstream(params_path, std::ios::binary) << p.dump(2) << '\n';
  *c.out << "wrote " << params_path.string() << '\n';

  CsvOut eff(c, "effects.csv", {"area", "n", "u_hat", "gamma"});
  for (const auto& e : fit.effects) eff.str(e.area_id).integer(e.n).num(e.u_hat).num(e.gamma).end();
  CsvOut res(c, "residuals.csv", {"area", "id", "residual"});
  for (const auto& r : fit.residuals) res.str(r.area_id).str(r.unit_id).num(r.residual).end();
  return 0;
}

int cmd_predict(const Context& c) {
  const SurveyDataset s = load_s(c);
  const auto s_prime = load_s_prime(c, &s);
  const auto census = load_census(c);
  const auto specs = indicators_from(c.cfg);
  const json& pj = section(c.cfg, "predict");
  std::vector<Estimator> estimators;
  for (const auto& e : get_or<std::vector<std::string>>(pj, "estimators", {"DIR", "SEB"}))
    estimators.push_back(parse_estimator(e));
  const bool needs_model = std::any_of(estimators.begin(), estimators.end(), [](Estimator e) {
    return e == Estimator::CEB || e == Estimator::EB_CENSUS || e == Estimator::SEB;
  });
  for (Estimator e : estimators) {
    if ((e == Estimator::CEB || e == Estimator::EB_CENSUS) && !census)
      throw InputError(to_string(e) + " requires a census (data.census or --census)");
    if (e == Estimator::SEB && !s_prime)
      throw InputError("SEB requires s' (data.s_prime, --s-prime FILE or --s-prime same-as-s)");
    if (e == Estimator::FH && !census && !s_prime) throw InputError("FH requires a census or s' for area means");
  }
  NerParams theta;
  if (needs_model) theta = resolve_params(c, s);
  EbOptions eb;
  eb.L_mc = L_mc_of(c, "predict");
  eb.stream = StreamKey(c.seed).child("predict");
  eb.threads = c.threads;
  const SizingSettings sizing = sizing_from(c);

  // Areas reported: s first, then areas only present in s' or the census.
  std::vector<std::string> ids = s.area_ids();
  for (const SurveyDataset* extra : {s_prime ? &*s_prime : nullptr, census ? &*census : nullptr}) {
    if (!extra) continue;
    for (const auto& a : extra->areas())
      if (std::find(ids.begin(), ids.end(), a.id) == ids.end()) ids.push_back(a.id);
  }

  CsvOut out(c, "predictions.csv",
             {"area", "estimator", "indicator", "point", "n", "n_prime", "undersized", "prior_only"});
  for (Estimator e : estimators) {
    std::vector<std::vector<AreaPrediction>> preds;
    std::vector<bool> undersized;
    switch (e) {
      case Estimator::DIR: preds = direct(s, specs); break;
      case Estimator::FH: {
        const auto means = area_covariate_means(census ? *census : *s_prime);
        for (const auto& spec : specs) preds.push_back(fh(s, spec, means));
        break;
      }
      case Estimator::CEB: preds = ceb(theta, s, *census, specs, eb); break;
      case Estimator::EB_CENSUS: preds = eb_census(theta, s, *census, specs, eb); break;
      case Estimator::SEB: {
        const SebResult r = seb_detailed(theta, s, *s_prime, specs, eb);
        preds = r.predictions;
        for (std::size_t k = 0; k < specs.size(); ++k) {
          for (std::size_t d = 0; d < r.targets.size(); ++d) {
            auto& p = preds[k][d];
            const auto& t = r.targets[d];
            if (t.substituted || t.sample->size() < 2) continue;
            const double cv = sizing.cv0 >= 0.0
                                  ? sizing.cv0
                                  : estimate_cv(r.units[d].values.col(static_cast<Index>(k)), p.point).cv;
            const auto need = required_sample_size(population_size_of(*t.sample), cv, sizing.eps0, sizing.alpha);
            p.undersized = static_cast<double>(t.sample->size()) < design_effect_adjust(need.n_star, sizing.deff);
          }
        }
        break;
      }
    }
    for (std::size_t k = 0; k < specs.size(); ++k) {
      std::map<std::string, const AreaPrediction*> by_id;
      for (const auto& p : preds[k]) by_id[p.area_id] = &p;
      for (const auto& id : ids) {
        out.str(id).str(to_string(e)).str(specs[k].label());
        auto it = by_id.find(id);
        if (it == by_id.end()) {
          const auto* a = s.find(id);
          out.na().integer(a ? a->size() : 0).integer(0).flag(false).flag(true).end();
          continue;
        }
        const auto& p = *it->second;
        out.num(p.point).integer(p.n).integer(p.n_prime).flag(p.undersized).flag(p.prior_only).end();
      }
    }
  }
  return 0;
}

int cmd_mse(const Context& c) {
  const SurveyDataset s = load_s(c);
  const auto s_prime = load_s_prime(c, &s);
  if (!s_prime) throw InputError("mse requires s' (data.s_prime, --s-prime FILE or --s-prime same-as-s)");
  const auto specs = indicators_from(c.cfg);
  const NerParams theta = resolve_params(c, s);
  const json& mj = section(c.cfg, "mse");

  EbOptions eb;
  eb.L_mc = L_mc_of(c, "mse");
  eb.stream = StreamKey(c.seed).child("predict");
  eb.threads = c.threads;
  const SebResult point = seb_detailed(theta, s, *s_prime, specs, eb);

  BootstrapOptions bo;
  bo.B = get_or<int>(mj, "B", 100);
  bo.L_mc = eb.L_mc;
  bo.stream = StreamKey(c.seed).child("bootstrap");
  bo.threads = c.threads;
  const BootstrapResult r = bootstrap_total_mse(s, *s_prime, theta, specs, bo);
  for (const auto& line : r.log) *c.err << line << '\n';

  CsvOut out(c, "mse.csv",
             {"area", "indicator", "point", "mse_naive", "mse_corrected", "mse_corrected_pos", "cov_term",
              "fallback_used", "B", "cv"});
  for (std::size_t k = 0; k < specs.size(); ++k) {
    for (std::size_t d = 0; d < r.bundles[k].size(); ++d) {
      const MseBundle& m = r.bundles[k][d];
      const double p = point.predictions[k][d].point;
      const double cv = p != 0.0 ? std::sqrt(m.mse_corrected_pos) / std::abs(p) : std::nan("");
      out.str(m.area_id).str(specs[k].label()).num(p).num(m.mse_naive).num(m.mse_corrected);
      out.num(m.mse_corrected_pos).num(m.cov_term).flag(m.fallback_used).integer(m.B).num(cv).end();
    }
  }
  return 0;
}

int cmd_samplesize(const Context& c) {
  std::optional<SurveyDataset> s;
  if (data_path(c, "s")) s = load_s(c);
  auto s_prime = load_s_prime(c, s ? &*s : nullptr);
  if (!s_prime) s_prime = load_census(c);
  if (!s_prime) throw InputError("samplesize requires s' or a census");
  const SizingSettings sizing = sizing_from(c);

  std::vector<std::vector<double>> cvs(s_prime->area_count());
  std::vector<bool> undefined(s_prime->area_count(), false);
  if (sizing.cv0 < 0.0 && s_prime->area_count() > 0) {
    if (!s) throw InputError("estimating cv needs the small survey; pass --s or set samplesize.cv0");
    const auto specs = indicators_from(c.cfg);
    const NerParams theta = resolve_params(c, *s);
    EbOptions eb;
    eb.L_mc = L_mc_of(c, "samplesize");
    eb.stream = StreamKey(c.seed).child("predict");
    eb.threads = c.threads;
    const SebResult r = seb_detailed(theta, *s, *s_prime, specs, eb);
    for (std::size_t d = 0; d < s_prime->area_count(); ++d) {
      // Areas of s' come first in the target list.
      const auto& units = r.units[d].values.col(0);
      if (units.size() < 2) {
        undefined[d] = true;
        continue;
      }
      const CvEstimate cv = estimate_cv(units, r.predictions[0][d].point);
      undefined[d] = cv.undefined;
      cvs[d].push_back(cv.cv);
    }
  }

  CsvOut out(c, "sizing.csv", {"area", "n", "n_prime", "N", "cv", "n_star", "n_star_ceil", "flag"});
  for (std::size_t d = 0; d < s_prime->area_count(); ++d) {
    const auto& a = s_prime->area(d);
    const AreaSample* sa = s ? s->find(a.id) : nullptr;
    const double N = population_size_of(a);
    out.str(a.id).integer(sa ? sa->size() : 0).integer(a.size()).num(N);
    if (undefined[d]) {
      out.na().na().na().str("cv_undefined").end();
      continue;
    }
    const double cv = sizing.cv0 >= 0.0 ? sizing.cv0 : cvs[d].front();
    const auto need = required_sample_size(N, cv, sizing.eps0, sizing.alpha);
    const double n_star = design_effect_adjust(need.n_star, sizing.deff);
    std::string flag = static_cast<double>(a.size()) < n_star ? "undersized" : "ok";
    if (sa && a.size() < sa->size()) flag = "substitute";
    out.num(cv).num(n_star).integer(static_cast<long long>(std::ceil(n_star))).str(flag).end();
  }
  return 0;
}

ExperimentConfig experiment_from(const Context& c) {
  const json& j = section(c.cfg, "simulate");
  ExperimentConfig cfg = ExperimentConfig::preset(get_or<std::string>(j, "preset", "desk"));
  cfg.D = get_or<int>(j, "D", cfg.D);
  cfg.N = get_or<int>(j, "N", cfg.N);
  cfg.L = get_or<int>(j, "L", cfg.L);
  cfg.B = get_or<int>(j, "B", cfg.B);
  cfg.L_true = get_or<int>(j, "L_true", cfg.L_true);
  cfg.L_mc = get_or<int>(j, "L_mc", get_or<int>(c.cfg, "L_mc", cfg.L_mc));
  cfg.lambdas = get_or<std::vector<double>>(j, "lambdas", cfg.lambdas);
  cfg.alphas = get_or<std::vector<double>>(j, "alphas", cfg.alphas);
  cfg.z = get_or<double>(j, "z", cfg.z);
  cfg.prime_rule = parse_prime_rule(get_or<std::string>(j, "prime_rule", to_string(cfg.prime_rule)));
  cfg.prime_multiplier = get_or<double>(j, "prime_multiplier", cfg.prime_multiplier);
  cfg.include_fh = get_or<bool>(j, "include_fh", cfg.include_fh);
  if (j.contains("n_d")) cfg.n_d = j.at("n_d").get<std::vector<int>>();
  if (j.contains("pattern")) cfg.pattern = j.at("pattern").get<std::vector<int>>();
  if (j.contains("beta")) {
    const auto b = j.at("beta").get<std::vector<double>>();
    cfg.theta_true.beta = Eigen::Map<const Eigen::VectorXd>(b.data(), static_cast<Index>(b.size()));
  }
  cfg.theta_true.sigma2_u = get_or<double>(j, "sigma2_u", cfg.theta_true.sigma2_u);
  cfg.theta_true.sigma2_e = get_or<double>(j, "sigma2_e", cfg.theta_true.sigma2_e);
  cfg.seed = c.seed;
  cfg.threads = c.threads;
  cfg.validate();
  return cfg;
}

int cmd_simulate(const Context& c) {
  const ExperimentConfig cfg = experiment_from(c);
  const std::string study = get_or<std::string>(section(c.cfg, "simulate"), "study", "experiment");
  if (study != "experiment" && study != "bootstrap" && study != "both")
    throw InputError("unknown study '" + study + "' (experiment, bootstrap, both)");

  if (study != "bootstrap") {
    const ExperimentResult r = run_experiment(cfg);
    for (const auto& m : r.log.messages) *c.err << m << '\n';
    CsvOut sum(c, "summary.csv", {"indicator", "lambda", "estimator", "arb_pct", "rrmse_pct", "replicates"});
    for (const auto& row : r.summary) {
      sum.str(row.indicator).num(row.lambda).str(row.estimator).num(100.0 * row.arb_bar).num(100.0 * row.rrmse_bar);
      sum.integer(static_cast<long long>(r.log.estimates.size())).end();
    }
    CsvOut areas(c, "area_metrics.csv", {"area", "n", "n_prime", "indicator", "lambda", "estimator", "rb_pct", "rrmse_pct"});
    const std::size_t D = r.log.area_ids.size();
    for (std::size_t i = 0; i < r.areas.size(); ++i) {
      const auto& m = r.areas[i];
      const std::size_t d = i % D;
      areas.str(m.area_id).integer(r.log.n[d]).integer(r.log.n_prime[d]).str(m.indicator).num(m.lambda);
      areas.str(m.estimator).num(100.0 * m.rb).num(100.0 * m.rrmse).end();
    }
  }
  if (study != "experiment") {
    const BootstrapStudyResult r = run_bootstrap_study(cfg);
    for (const auto& m : r.messages) *c.err << m << '\n';
    CsvOut out(c, "bootstrap_study.csv",
               {"area", "indicator", "n", "n_prime", "mse_true", "mse_naive", "mse_corrected", "mse_corrected_pos",
                "fallback_rate"});
    for (const auto& row : r.rows) {
      out.str(row.area_id).str(row.indicator).integer(row.n).integer(row.n_prime).num(row.mse_true);
      out.num(row.mse_naive).num(row.mse_corrected).num(row.mse_corrected_pos).num(row.fallback_rate).end();
    }
  }
  return 0;
}

// -------------------------------------------------------------------------
// Command line
// -------------------------------------------------------------------------

void add_common(CLI::App* sub, Flags& f) {
  f.given["config"].push_back(sub->add_option("--config", f.config, "JSON configuration file"));
  f.given["seed"].push_back(sub->add_option("--seed", f.seed, "master seed"));
  f.given["threads"].push_back(sub->add_option("--threads", f.threads, "worker threads (0 = all cores)"));
  f.given["out-dir"].push_back(sub->add_option("--out-dir", f.out_dir, "output directory"));
}

void add_data(CLI::App* sub, Flags& f, bool prime, bool census) {
  f.given["s"].push_back(sub->add_option("--s", f.s, "small survey CSV"));
  if (prime) f.given["s-prime"].push_back(sub->add_option("--s-prime", f.s_prime, "large survey CSV or same-as-s"));
  if (census) f.given["census"].push_back(sub->add_option("--census", f.census, "census CSV"));
}

void add_model(CLI::App* sub, Flags& f) {
  f.given["params"].push_back(sub->add_option("--params", f.params, "params JSON written by fit"));
  f.given["fit"].push_back(sub->add_flag("--fit", f.fit, "fit the model on s first"));
  f.given["indicators"].push_back(sub->add_option("--indicators", f.indicators, "comma list: mean, tmean, F0, F1, ..."));
  f.given["z"].push_back(sub->add_option("--z", f.z, "poverty line"));
  f.given["transform"].push_back(sub->add_option("--transform", f.transform, "identity or log"));
  f.given["shift"].push_back(sub->add_option("--shift", f.shift, "shift k of the log transform"));
  f.given["L_mc"].push_back(sub->add_option("--L-mc", f.L_mc, "Monte Carlo draws per EB prediction"));
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Small area estimation with survey auxiliary data", "sae"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  Flags f;

  auto* fit = app.add_subcommand("fit", "REML fit of the nested-error model");
  add_common(fit, f);
  add_data(fit, f, false, false);

  auto* predict = app.add_subcommand("predict", "point predictions per area");
  add_common(predict, f);
  add_data(predict, f, true, true);
  add_model(predict, f);
  f.given["estimators"].push_back(predict->add_option("--estimators", f.estimators, "DIR FH CEB EB_CENSUS SEB"));

  auto* mse = app.add_subcommand("mse", "bootstrap total MSE of SEB");
  add_common(mse, f);
  add_data(mse, f, true, false);
  add_model(mse, f);
  f.given["B"].push_back(mse->add_option("--B", f.B, "bootstrap replicates"));

  auto* size = app.add_subcommand("samplesize", "required auxiliary sample sizes");
  add_common(size, f);
  add_data(size, f, true, true);
  add_model(size, f);
  f.given["cv0"].push_back(size->add_option("--cv0", f.cv0, "fixed cv instead of the estimate"));
  f.given["eps0"].push_back(size->add_option("--eps0", f.eps0, "relative error bound"));
  f.given["alpha"].push_back(size->add_option("--alpha", f.alpha, "1 - confidence"));
  f.given["deff"].push_back(size->add_option("--deff", f.deff, "design effect"));

  auto* sim = app.add_subcommand("simulate", "Monte Carlo experiment");
  add_common(sim, f);
  f.given["preset"].push_back(sim->add_option("--preset", f.preset, "desk or full"));
  f.given["study"].push_back(sim->add_option("--study", f.study, "experiment, bootstrap or both"));
  f.given["lambda"].push_back(sim->add_option("--lambda", f.lambdas, "outdating parameters"));
  f.given["L"].push_back(sim->add_option("--L", f.L, "Monte Carlo replicates"));
  f.given["B"].push_back(sim->add_option("--B", f.B, "bootstrap replicates"));
  f.given["L_true"].push_back(sim->add_option("--L-true", f.L_true, "replicates for the true MSE"));
  f.given["L_mc"].push_back(sim->add_option("--L-mc", f.L_mc, "Monte Carlo draws per EB prediction"));
  f.given["D"].push_back(sim->add_option("--D", f.D, "number of areas"));
  f.given["N"].push_back(sim->add_option("--N", f.N, "units per area"));
  f.given["prime-rule"].push_back(sim->add_option("--prime-rule", f.prime_rule, "multiplier, s or census"));
  f.given["multiplier"].push_back(sim->add_option("--multiplier", f.multiplier, "n'_d / n_d"));
  f.given["no-fh"].push_back(sim->add_flag("--no-fh", f.no_fh, "skip the FH comparator"));

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    const Context c = make_context(f, out, err);
    if (fit->parsed()) return cmd_fit(c);
    if (predict->parsed()) return cmd_predict(c);
    if (mse->parsed()) return cmd_mse(c);
    if (size->parsed()) return cmd_samplesize(c);
    if (sim->parsed()) return cmd_simulate(c);
    return 1;
  } catch (const InputError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const json::exception& e) {
    err << "error: configuration: " << e.what() << '\n';
    return 1;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "numerical failure: " << e.what() << '\n';
    return 2;
  }
}

}  // namespace sae::cli
