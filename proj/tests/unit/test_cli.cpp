#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "fixtures.hpp"
#include "sae/cli.hpp"

using namespace sae;
namespace fs = std::filesystem;

namespace {

struct Workspace {
  fs::path dir;
  explicit Workspace(const std::string& name) : dir(fs::temp_directory_path() / ("sae_cli_" + name)) {
    fs::remove_all(dir);
    fs::create_directories(dir);
    const NerParams theta{Eigen::Vector3d(3.0, 0.03, -0.04), 0.0225, 0.25};
    const SurveyDataset s = test::simulate_survey(theta, {6, 9, 12, 7, 10}, 17);
    write(s, "s.csv");
    const SurveyDataset base = test::simulate_survey(theta, {40, 50, 60, 45, 5}, 18);
    std::vector<AreaSample> prime;
    for (const auto& a : base.areas()) {
      AreaSample b = a;
      b.y.resize(0);
      b.w = Eigen::VectorXd::Constant(b.size(), 400.0 / b.size());
      b.pi1 = Eigen::VectorXd::Constant(b.size(), b.size() / 400.0);
      for (auto& u : b.unit_ids) u = "p" + u;
      prime.push_back(b);
    }
    write(SurveyDataset(SurveyKind::large_survey, prime), "sp.csv");
    write(test::strip_responses(test::simulate_survey(theta, {100, 100, 100, 100, 100, 100}, 19), SurveyKind::census),
          "census.csv");
  }
  ~Workspace() { fs::remove_all(dir); }
  void write(const SurveyDataset& d, const std::string& name) const {
    std::ofstream out(dir / name);
    write_survey_csv(out, d);
  }
  [[nodiscard]] std::string path(const std::string& name) const { return (dir / name).string(); }
};

int run(std::vector<std::string> args) {
  std::ostringstream out, err;
  return cli::run(args, out, err);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::vector<std::string>> rows_of(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    rows.push_back(f);
  }
  return rows;
}

}  // namespace

TEST_CASE("cli fit writes parameters and diagnostics") {
  Workspace w("fit");
  REQUIRE(run({"fit", "--s", w.path("s.csv"), "--out-dir", w.path("o")}) == 0);
  const auto j = nlohmann::json::parse(slurp(w.dir / "o" / "params.json"));
  CHECK(j.at("beta").size() == 3);
  CHECK(j.contains("sigma2_u"));
  CHECK(j.contains("sigma2_e"));
  CHECK(rows_of(w.dir / "o" / "effects.csv").size() == 6);
  CHECK(rows_of(w.dir / "o" / "residuals.csv").size() == 45);
  CHECK(slurp(w.dir / "o" / "effects.csv").rfind("# sae ", 0) == 0);
}

TEST_CASE("cli exit codes") {
  Workspace w("codes");
  CHECK(run({"fit", "--s", w.path("missing.csv")}) == 1);
  CHECK(run({"predict", "--s", w.path("s.csv"), "--fit", "--estimators", "CEB", "--out-dir", w.path("o")}) == 1);
  CHECK(run({"simulate", "--preset", "galactic"}) == 1);
  CHECK(run({"nope"}) == 1);
  CHECK(run({"--help"}) == 0);
  CHECK(run({"fit", "--config", w.path("missing.json")}) == 1);
  {
    std::ofstream(w.dir / "bad.json") << "{ not json";
  }
  CHECK(run({"fit", "--config", w.path("bad.json")}) == 1);
  // Identical responses leave nothing to fit.
  {
    std::ofstream out(w.dir / "flat.csv");
    out << "area,x1,y\n";
    for (int d = 0; d < 3; ++d)
      for (int i = 0; i < 5; ++i) out << d << "," << i << ",2\n";
  }
  CHECK(run({"fit", "--s", w.path("flat.csv"), "--out-dir", w.path("o")}) == 2);
}

TEST_CASE("cli predict with s' = s") {
  Workspace w("same");
  REQUIRE(run({"predict", "--s", w.path("s.csv"), "--s-prime", "same-as-s", "--fit", "--estimators", "SEB",
               "--out-dir", w.path("o")}) == 0);
  const auto rows = rows_of(w.dir / "o" / "predictions.csv");
  REQUIRE(rows.size() == 6);
  CHECK(rows[1][1] == "SEB");
  CHECK(rows[1][4] == rows[1][5]);  // n == n_prime
}

TEST_CASE("cli predict all estimators") {
  Workspace w("all");
  REQUIRE(run({"predict", "--s", w.path("s.csv"), "--s-prime", w.path("sp.csv"), "--census", w.path("census.csv"),
               "--fit", "--estimators", "DIR", "FH", "CEB", "EB_CENSUS", "SEB", "--indicators", "mean,F0,F1", "--z",
               "20", "--transform", "log", "--out-dir", w.path("o")}) == 0);
  const auto rows = rows_of(w.dir / "o" / "predictions.csv");
  CHECK(rows.size() == 1 + 5 * 3 * 6);
  int na = 0;
  for (const auto& r : rows)
    if (r[3] == "NA") ++na;
  CHECK(na == 3 * 3);  // DIR, FH and SEB for the census-only area
}

TEST_CASE("cli mse minimal run") {
  Workspace w("mse");
  REQUIRE(run({"mse", "--s", w.path("s.csv"), "--s-prime", w.path("sp.csv"), "--fit", "--B", "2", "--L-mc", "5",
               "--out-dir", w.path("o")}) == 0);
  const auto rows = rows_of(w.dir / "o" / "mse.csv");
  REQUIRE(rows.size() == 6);
  for (std::size_t i = 1; i < rows.size(); ++i) CHECK(std::stod(rows[i][5]) >= 0.0);
}

TEST_CASE("cli samplesize") {
  Workspace w("size");
  {
    std::ofstream out(w.dir / "big.csv");
    out << "area,x1,w,pi1\n";
    for (int i = 0; i < 50; ++i) out << "A," << i << ",20000,0.00005\n";
  }
  REQUIRE(run({"samplesize", "--s-prime", w.path("big.csv"), "--cv0", "0.1", "--eps0", "0.03", "--alpha", "0.05",
               "--out-dir", w.path("o")}) == 0);
  auto rows = rows_of(w.dir / "o" / "sizing.csv");
  REQUIRE(rows.size() == 2);
  CHECK(std::stod(rows[1][5]) == doctest::Approx(42.68).epsilon(1e-3));
  CHECK(rows[1][7] == "ok");

  REQUIRE(run({"samplesize", "--census", w.path("census.csv"), "--cv0", "0.3", "--out-dir", w.path("c")}) == 0);
  rows = rows_of(w.dir / "c" / "sizing.csv");
  for (std::size_t i = 1; i < rows.size(); ++i) CHECK(rows[i][7] == "ok");

  {
    std::ofstream(w.dir / "empty.csv") << "area,x1,w\n";
  }
  REQUIRE(run({"samplesize", "--s-prime", w.path("empty.csv"), "--cv0", "0.1", "--out-dir", w.path("e")}) == 0);
  CHECK(rows_of(w.dir / "e" / "sizing.csv").size() == 1);

  REQUIRE(run({"samplesize", "--s", w.path("s.csv"), "--s-prime", w.path("sp.csv"), "--fit", "--out-dir",
               w.path("f")}) == 0);
  rows = rows_of(w.dir / "f" / "sizing.csv");
  CHECK(rows[5][7] == "substitute");  // n' = 5 < n = 10
}

TEST_CASE("cli simulate lambda sweep") {
  Workspace w("sim");
  REQUIRE(run({"simulate", "--D", "8", "--N", "150", "--L", "2", "--L-mc", "5", "--lambda", "0", "0.1", "0.2", "0.3",
               "--out-dir", w.path("o")}) == 0);
  const auto rows = rows_of(w.dir / "o" / "summary.csv");
  // two indicators x four lambdas x {DIR, FH, EB, SEB}
  CHECK(rows.size() == 1 + 2 * 4 * 4);
}

TEST_CASE("cli config file with flag override") {
  Workspace w("config");
  {
    std::ofstream(w.dir / "cfg.json") << R"({"seed": 5, "data": {"s": ")" << w.path("s.csv")
                                      << R"("}, "out_dir": ")" << w.path("from_config") << R"("})";
  }
  REQUIRE(run({"fit", "--config", w.path("cfg.json"), "--out-dir", w.path("from_flag")}) == 0);
  CHECK(fs::exists(w.dir / "from_flag" / "params.json"));
  CHECK_FALSE(fs::exists(w.dir / "from_config"));
  CHECK(slurp(w.dir / "from_flag" / "effects.csv").find("seed=5 ") != std::string::npos);
}

TEST_CASE("cli outputs are byte-identical across runs and thread counts") {
  Workspace w("determinism");
  const std::vector<std::vector<std::string>> commands{
      {"fit", "--s", w.path("s.csv")},
      {"predict", "--s", w.path("s.csv"), "--s-prime", w.path("sp.csv"), "--census", w.path("census.csv"), "--fit",
       "--estimators", "DIR", "FH", "CEB", "SEB", "--indicators", "F0,F1", "--z", "20", "--transform", "log"},
      {"mse", "--s", w.path("s.csv"), "--s-prime", w.path("sp.csv"), "--fit", "--B", "3", "--L-mc", "5"},
      {"samplesize", "--s", w.path("s.csv"), "--s-prime", w.path("sp.csv"), "--fit"},
      {"simulate", "--D", "6", "--N", "120", "--L", "2", "--B", "2", "--L-true", "3", "--L-mc", "5", "--study",
       "both"}};
  for (const auto& base : commands) {
    std::vector<std::string> outs;
    for (const char* threads : {"1", "8", "1"}) {
      const std::string dir = w.path(base[0] + "_" + std::to_string(outs.size()));
      std::vector<std::string> args = base;
      args.insert(args.end(), {"--seed", "99", "--threads", threads, "--out-dir", dir});
      REQUIRE(run(args) == 0);
      std::string all;
      for (const auto& e : fs::directory_iterator(dir)) all += e.path().filename().string() + slurp(e.path());
      outs.push_back(all);
    }
    CHECK(outs[0] == outs[1]);
    CHECK(outs[0] == outs[2]);
  }
}
