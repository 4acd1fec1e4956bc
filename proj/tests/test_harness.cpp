#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "pbf/harness.hpp"
#include "pbf/keyvalue.hpp"
#include "pbf/metrics.hpp"

using namespace pbf;

namespace {

ScenarioConfig small_scenario() {
  ScenarioConfig sc;
  sc.n_known = 6;
  sc.p_predict = 4;
  return sc;
}

}  // namespace

TEST_CASE("nmse identities") {
  RngStream rng(1);
  std::vector<CMatrix> truth{sample_complex_gaussian(3, 4, 1.0, rng), sample_complex_gaussian(3, 4, 1.0, rng)};
  CHECK(nmse(std::span<const CMatrix>(truth), std::span<const CMatrix>(truth)) == 0.0);
  std::vector<CMatrix> zero{CMatrix::Zero(3, 4), CMatrix::Zero(3, 4)};
  CHECK(nmse(std::span<const CMatrix>(truth), std::span<const CMatrix>(zero)) == doctest::Approx(1.0));
  std::vector<CMatrix> half{0.5 * truth[0], 0.5 * truth[1]};
  CHECK(nmse(std::span<const CMatrix>(truth), std::span<const CMatrix>(half)) == doctest::Approx(0.25));
  CHECK_THROWS_AS(nmse(std::span<const CMatrix>(zero), std::span<const CMatrix>(truth)), DomainError);

  // Frame-level: mean of per-frame ratios, not a pooled ratio.
  std::vector<std::vector<CMatrix>> t{{CMatrix::Ones(1, 1)}, {CMatrix::Constant(1, 1, 10.0)}};
  std::vector<std::vector<CMatrix>> p{{CMatrix::Zero(1, 1)}, {CMatrix::Constant(1, 1, 10.0)}};
  CHECK(nmse(std::span<const std::vector<CMatrix>>(t), std::span<const std::vector<CMatrix>>(p)) ==
        doctest::Approx(0.5));
}

TEST_CASE("effective sum rate") {
  // (N, P, alpha) = (20, 20, 0.1): 0.45 R_e + 0.5 R_p.
  for (double re : {0.0, 3.0, 17.25})
    for (double rp : {0.0, 5.5, 16.0}) CHECK(effective_sum_rate(re, rp, 20, 20, 0.1) == doctest::Approx(0.45 * re + 0.5 * rp).epsilon(1e-15));
  CHECK(effective_sum_rate(2.0, 7.0, 0, 5, 0.3) == 7.0);
  CHECK(effective_sum_rate(2.0, 7.0, 5, 0, 0.0) == 2.0);
  CHECK_THROWS_AS(effective_sum_rate(1.0, 1.0, 0, 0, 0.1), DomainError);
  CHECK_THROWS_AS(effective_sum_rate(1.0, 1.0, 1, 1, 1.0), DomainError);
}

TEST_CASE("mean_stat") {
  const std::vector<double> v{1.0, 2.0, 3.0, 4.0};
  const MeanStat s = mean_stat(v);
  CHECK(s.mean == 2.5);
  CHECK(s.stderr_mean == doctest::Approx(std::sqrt(5.0 / 3.0 / 4.0)));
  CHECK(s.count == 4);
  CHECK(mean_stat(std::vector<double>{}).count == 0);
}

TEST_CASE("key-value parsing") {
  const auto kv = KeyValueFile::parse("# comment\n a = 1 \nlist = 1, 2.5,3\nflag = yes\nname = x y\n\n");
  CHECK(kv.get_int("a", 0) == 1);
  CHECK(kv.get_doubles("list") == std::vector<double>{1.0, 2.5, 3.0});
  CHECK(kv.get_bool("flag", false));
  CHECK(kv.get_string("name", "") == "x y");
  CHECK(kv.get_int("missing", 7) == 7);
  kv.require_all_used();

  const auto unused = KeyValueFile::parse("a = 1\nb = 2\n");
  unused.get_int("a", 0);
  CHECK_THROWS_AS(unused.require_all_used(), ConfigError);
  CHECK_THROWS_AS(KeyValueFile::parse("a = 1\na = 2\n"), ConfigError);
  CHECK_THROWS_AS(KeyValueFile::parse("just words\n"), ConfigError);
  const auto bad = KeyValueFile::parse("n = 1.5\nb = maybe\n");
  CHECK_THROWS_AS(bad.get_int("n", 0), ConfigError);
  CHECK_THROWS_AS(bad.get_bool("b", false), ConfigError);
  CHECK_THROWS_AS(KeyValueFile::load("/nonexistent/pbf.cfg"), IoError);
}

TEST_CASE("method and variable names round trip") {
  for (Method m : all_methods()) CHECK(parse_method(method_name(m)) == m);
  CHECK(method_is_learned(Method::Proposed));
  CHECK(method_is_learned(Method::SeparateZf));
  CHECK_FALSE(method_is_learned(Method::KalmanZf));
  CHECK_THROWS_AS(parse_method("bogus"), ConfigError);
  for (auto v : {SweepVariable::PPredict, SweepVariable::SnrDb, SweepVariable::FdTs, SweepVariable::VelocityKmh,
                 SweepVariable::Split})
    CHECK(parse_sweep_variable(sweep_variable_name(v)) == v);
}

TEST_CASE("fnv1a reference vectors") {
  CHECK(fnv1a_hex("") == "cbf29ce484222325");
  CHECK(fnv1a_hex("a") == "af63dc4c8601ec8c");
  CHECK(fnv1a_hex("foobar") == "85944171f73967e8");
}

TEST_CASE("oracle and estimation baselines") {
  const ScenarioConfig sc = small_scenario();
  const Dataset test = generate_dataset(sc, 12, {}, RngStream(3), Split::Test, false);
  const EvaluationContext ctx = prepare_evaluation(test);

  const MethodEvaluation oracle = evaluate_method(Method::WmmseOracle, test, nullptr);
  for (double e : oracle.nmse) CHECK(e == 0.0);
  const ResultRow row = summarize(oracle, ctx, sc, 0.1);
  CHECK(row.normalized_rate == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(row.rate_effective == doctest::Approx(effective_sum_rate(row.rate_e, row.rate_p, 6, 4, 0.1)));
  CHECK(row.frames == 12);

  const MethodEvaluation est = evaluate_method(Method::EstimationZf, test, nullptr, 5);
  const MethodEvaluation est_again = evaluate_method(Method::EstimationZf, test, nullptr, 5);
  CHECK(est.rate_p == est_again.rate_p);
  const double mean_nmse = mean_stat(est.nmse).mean;
  CHECK(mean_nmse > 0.005);
  CHECK(mean_nmse < 0.02);
  for (std::size_t f = 0; f < 12; ++f) CHECK(est.rate_p[f] <= oracle.rate_p[f] + 1e-9);

  const MethodEvaluation kal = evaluate_method(Method::KalmanZf, test, nullptr);
  CHECK(kal.nmse_steps.rows() == 12);
  CHECK(kal.nmse_steps.cols() == 4);
  CHECK_THROWS_AS(evaluate_method(Method::Proposed, test, nullptr), ConfigError);
}

TEST_CASE("experiment spec parsing") {
  const auto kv = KeyValueFile::parse(
      "schema = pbf-experiment/1\nvariable = split\nvalues = 10, 20\nmethods = kalman_zf, wmmse_oracle\n"
      "frame_length = 30\nseeds = 1, 2\ntrain_frames = 5\ntest_frames = 3\npower_weight = 0.5\n");
  const ExperimentSpec spec = load_experiment_spec(kv);
  CHECK(spec.variable == SweepVariable::Split);
  CHECK(spec.scenario_for(10).n_known == 20);
  CHECK(spec.scenario_for(10).p_predict == 10);
  CHECK(spec.seeds.size() == 2);
  CHECK(spec.train.power_weight == 0.5);
  CHECK_THROWS_AS(spec.scenario_for(30), ConfigError);

  CHECK_THROWS_AS(load_experiment_spec(KeyValueFile::parse("values = 1\nmethods = kalman_zf\ntypo = 3\n")),
                  ConfigError);
  CHECK_THROWS_AS(load_experiment_spec(KeyValueFile::parse("schema = other/1\nvalues = 1\nmethods = kalman_zf\n")),
                  ConfigError);
  CHECK_THROWS_AS(load_experiment_spec(KeyValueFile::parse("values = 1.5\nmethods = kalman_zf\n")), ConfigError);
  CHECK_THROWS_AS(find_preset("nope"), ConfigError);
  CHECK(find_preset("ar-paper").train_frames == 30000);
}

TEST_CASE("sweep is deterministic and records per-row errors") {
  ExperimentSpec spec;
  spec.scenario = small_scenario();
  spec.variable = SweepVariable::PPredict;
  spec.values = {2, 4};
  spec.methods = {Method::KalmanZf, Method::EstimationZf, Method::WmmseOracle};
  spec.test_frames = 6;
  spec.train_frames = 1;
  const SweepResult a = run_sweep(spec);
  const SweepResult b = run_sweep(spec);
  REQUIRE(a.rows.size() == 6);
  CHECK(result_csv(a.rows) == result_csv(b.rows));
  CHECK(a.config_hash == b.config_hash);
  for (const auto& r : a.rows) CHECK(r.error.empty());
  const auto best = best_row(a.rows, "wmmse_oracle");
  REQUIRE(best.has_value());
  CHECK(best->method == "wmmse_oracle");
  CHECK_FALSE(best_row(a.rows, "proposed").has_value());

  std::istringstream csv(result_csv(a.rows));
  std::string header;
  std::getline(csv, header);
  CHECK(header ==
        "method,variable,value,seed,n,p,alpha,frames,nmse,rate_p,rate_e,rate_effective,rate_oracle,"
        "normalized_rate,normalized_effective,error");

  // K > N_t makes zero-forcing infeasible; the row carries the error.
  ExperimentSpec wide = spec;
  wide.scenario.k_users = 5;
  wide.values = {2};
  const SweepResult w = run_sweep(wide);
  REQUIRE(w.rows.size() == 3);
  CHECK_FALSE(w.rows[0].error.empty());
  CHECK(w.rows[2].error.empty());

  const auto dir = std::filesystem::temp_directory_path() / "pbf_test_sweep";
  std::filesystem::create_directories(dir);
  write_manifest(dir / "m.json", spec, a);
  std::ifstream in(dir / "m.json");
  std::stringstream text;
  text << in.rdbuf();
  CHECK(text.str().find("pbf-manifest/1") != std::string::npos);
  CHECK(text.str().find(a.config_hash) != std::string::npos);
  std::filesystem::remove_all(dir);
}

TEST_CASE("gradient check suite on the tiny configuration") {
  const auto cases = run_gradcheck_suite(1);
  CHECK(cases.size() == 8);
  for (const auto& c : cases) {
    INFO(c.name);
    CHECK(c.result.max_rel_error <= 1e-4);
    CHECK(c.result.coordinates > 0);
  }
}
