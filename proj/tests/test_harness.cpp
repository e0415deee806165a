#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "cbrisk/config.hpp"
#include "cbrisk/errors.hpp"
#include "cbrisk/harness.hpp"

using namespace cbrisk;

namespace {

ExperimentConfig tiny_config(const std::string& extra = "") {
  Config cfg = Config::from_string(
      "experiment = figure1\n"
      "n = 24\np = 16\ns = 3\nsnr = 0.7\nB = 6\nreps = 4\n"
      "alphas = 0.3, 1.0\npredictors = identity, soft:1\n"
      "oracle_reps = 400\nseed = 5\n" +
      extra);
  return ExperimentConfig::resolve(cfg);
}

}  // namespace

TEST_CASE("config parsing, overrides, and hashing") {
  Config cfg = Config::from_string(
      "# comment line\n"
      "n = 12\n"
      "alphas = 0.1, 0.2\n"
      "cv.folds = 5   # trailing comment\n");
  CHECK(cfg.get_int("n") == 12);
  CHECK(cfg.get_doubles("alphas") == std::vector<double>{0.1, 0.2});
  CHECK(cfg.get_int("cv.folds") == 5);
  std::string h1 = cfg.hash();
  cfg.set_override("n=13");
  CHECK(cfg.get_int("n") == 13);
  CHECK(cfg.hash() != h1);
  CHECK_THROWS_AS(Config::from_string("just words\n"), ParseError);
  CHECK_THROWS_AS(cfg.set_override("nonsense"), ParseError);
  CHECK_THROWS_AS(cfg.get_int("missing"), ParseError);
  CHECK_THROWS_AS(Config::from_string("n = abc\n").get_int("n"), ParseError);
}

TEST_CASE("experiment config resolution applies the scale factor") {
  Config cfg = Config::from_string(
      "n = 100\np = 200\ns = 200\nreps = 100\nscale_factor = 0.5\n");
  ExperimentConfig e = ExperimentConfig::resolve(cfg);
  CHECK(e.n == 50);
  CHECK(e.p == 100);
  CHECK(e.reps == 50);
  CHECK(e.s == 100);  // dense scenario stays dense
  CHECK(e.raw.get_string("n") == "50");
}

TEST_CASE("build_scenario freezes X and beta and sets sigma2 from the SNR") {
  ExperimentConfig cfg = tiny_config();
  ScenarioTruth a = build_scenario(cfg, RngSeed{5, 0});
  ScenarioTruth b = build_scenario(cfg, RngSeed{5, 0});
  CHECK(a.X == b.X);
  CHECK(a.beta == b.beta);
  double mean = a.theta.mean();
  double var = (a.theta.array() - mean).square().sum() / (a.theta.size() - 1);
  CHECK(a.sigma2 == doctest::Approx(var / cfg.snr).epsilon(1e-12));
  int nonzero = 0;
  for (int j = 0; j < cfg.p; ++j)
    if (a.beta[j] != 0.0) ++nonzero;
  CHECK(nonzero == cfg.s);

  ExperimentConfig zero_s = cfg;
  zero_s.s = 0;
  CHECK_THROWS_AS(build_scenario(zero_s, RngSeed{5, 0}), Error);
}

TEST_CASE("fold assignments partition the rows into balanced folds") {
  std::vector<int> folds = make_fold_assignment(23, 5, RngSeed{9, 0});
  REQUIRE(folds.size() == 23);
  std::vector<int> counts(5, 0);
  for (int f : folds) {
    REQUIRE(f >= 0);
    REQUIRE(f < 5);
    ++counts[f];
  }
  for (int c : counts) CHECK(c >= 4);
  CHECK(make_fold_assignment(23, 5, RngSeed{9, 0}) == folds);
  CHECK(make_fold_assignment(23, 5, RngSeed{9, 1}) != folds);
}

TEST_CASE("figure1 rows pair CB and BY on identical draws") {
  ExperimentConfig cfg = tiny_config();
  ExperimentResult res = run_figure1(cfg);
  // reps * alphas * predictors * {CB, BY}
  CHECK(res.rows.size() == 4u * 2u * 2u * 2u);
  for (std::size_t i = 0; i < res.rows.size(); i += 2) {
    const ResultRow& cb = res.rows[i];
    const ResultRow& by = res.rows[i + 1];
    CHECK(cb.estimator == "CB");
    CHECK(by.estimator == "BY");
    CHECK(cb.rep == by.rep);
    CHECK(cb.alpha == by.alpha);
    CHECK(cb.predictor == by.predictor);
    CHECK(cb.draw_checksum == by.draw_checksum);
    CHECK(cb.oracle_risk == by.oracle_risk);
  }
  // Different predictors at the same (rep, alpha) still share the draw set.
  std::set<std::uint64_t> sums;
  for (const ResultRow& row : res.rows)
    if (row.rep == 0 && row.alpha == 0.3) sums.insert(row.draw_checksum);
  CHECK(sums.size() == 1);
  // Identical rerun is bit-identical.
  ExperimentResult res2 = run_figure1(cfg);
  REQUIRE(res2.rows.size() == res.rows.size());
  for (std::size_t i = 0; i < res.rows.size(); ++i) {
    CHECK(res.rows[i].estimate == res2.rows[i].estimate);
    CHECK(res.rows[i].draw_checksum == res2.rows[i].draw_checksum);
  }
}

TEST_CASE("rows CSV round trip and exact header") {
  ExperimentConfig cfg = tiny_config();
  ExperimentResult res = run_figure1(cfg);
  std::string path = "harness_tmp_rows.csv";
  write_rows_csv(path, res.rows, cfg.hash());
  std::ifstream in(path);
  REQUIRE(in.good());
  std::string header;
  std::getline(in, header);
  CHECK(header ==
        "scenario,predictor,estimator,alpha,rep,estimate,oracle_risk,"
        "oracle_risk_alpha,draw_checksum,config_hash");
  std::size_t lines = 0;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) ++lines;
  CHECK(lines == res.rows.size());
  std::remove(path.c_str());
}

TEST_CASE("non-finite rows are refused by the CSV writer") {
  ResultRow bad;
  bad.scenario = "x";
  bad.predictor = "identity";
  bad.estimator = "CB";
  bad.estimate = std::nan("");
  CHECK_THROWS_AS(write_rows_csv("harness_tmp_bad.csv", {bad}, "00"), Error);
  std::remove("harness_tmp_bad.csv");
}

TEST_CASE("denoise signal layout and smoke run") {
  Eigen::VectorXd sig = denoise_signal(8, {0.0, 4.0, 2.0, 6.0});
  Eigen::VectorXd expect(8);
  expect << 0, 0, 4, 4, 2, 2, 6, 6;
  CHECK((sig - expect).cwiseAbs().maxCoeff() == 0.0);

  Config cfg = Config::from_string(
      "experiment = denoise\n"
      "denoise.n = 32\ndenoise.reps = 2\ndenoise.n_lambda = 6\n"
      "denoise.alphas = 0.2\nB = 6\noracle_reps = 200\nseed = 11\n");
  ExperimentConfig ecfg = ExperimentConfig::resolve(cfg);
  ExperimentResult res = run_denoise(ecfg);
  // reps * lambdas * (SURE + one CB alpha)
  CHECK(res.rows.size() == 2u * 6u * 2u);
  CHECK(res.summary_json.find("cb_selection") != std::string::npos);
}

TEST_CASE("df path experiment smoke run keeps oracle columns per path point") {
  Config cfg = Config::from_string(
      "experiment = df\n"
      "n = 20\np = 12\ns = 3\nsnr = 2\nB = 6\nreps = 3\n"
      "df.alpha = 0.2\ndf.n_lambda = 4\ndf.max_steps = 3\n"
      "oracle_reps = 300\nseed = 13\n");
  ExperimentConfig ecfg = ExperimentConfig::resolve(cfg);
  ExperimentResult res = run_df_figure(ecfg);
  // reps * (lambdas + steps+1) * {cb_df, ye_df}
  CHECK(res.rows.size() == 3u * (4u + 4u) * 2u);
  for (const ResultRow& row : res.rows) {
    CHECK(std::isfinite(row.estimate));
    CHECK(std::isfinite(row.oracle_risk));
  }
  // Zero-step rows estimate df of the zero fit: oracle df must be near 0.
  for (const ResultRow& row : res.rows)
    if (row.predictor == "stepwise[0]") CHECK(std::abs(row.oracle_risk) < 0.5);
}

TEST_CASE("experiment dispatch rejects unknown names") {
  Config cfg = Config::from_string("experiment = nonsense\n");
  CHECK_THROWS_AS(run_experiment(ExperimentConfig::resolve(cfg)), ParseError);
}
