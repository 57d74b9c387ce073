#include "doctest.h"

#include "ekisde/experiment.hpp"

#include "json.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace ekisde;
namespace fs = std::filesystem;

namespace {

const std::string kSmall = R"(
name = "small"
[problem]
model = "linear"
matrix = [[1.0, 0.5, 0.0], [0.0, 1.0, -0.5]]
gamma = 0.5
observation = [1.0, -0.5]
[ensemble]
size = 4
cov = 1.0
[run]
levels = [2, 3, 4]
reference_level = 7
replicas = 12
seed = 4
[verify]
level = 5
replicas = 16
draws = 4000
)";

Scenario bundled(const std::string& name) { return load_scenario(fs::path(EKISDE_SCENARIO_DIR) / (name + ".toml")); }

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

} // namespace

TEST_CASE("fnv1a") {
  CHECK(fnv1a("") == 0xcbf29ce484222325ull);
  CHECK(fnv1a("a") == 0xaf63dc4c8601ec8cull);
  CHECK(fnv1a("foobar") == 0x85944171f73967e8ull);
}

TEST_CASE("run_convergence is independent of the thread count") {
  const Scenario sc = parse_scenario(kSmall);
  RunOptions one, four;
  four.jobs = 4;
  const auto a = run_convergence(sc, one);
  const auto b = run_convergence(sc, four);
  CHECK(report_payload_json(a) == report_payload_json(b));
  REQUIRE(a.levels.size() == 3);
  for (const auto& l : a.levels) {
    CHECK(l.sup_errors.size() == 12);
    CHECK(std::isfinite(l.mean_sup_error));
    CHECK(l.exploded_fraction == 0.0);
    CHECK(l.probability.samples == 12);
    CHECK(l.tau_triggers[0] + l.tau_triggers[1] + l.tau_triggers[2] == 12);
  }
  CHECK(a.fitted_order.has_value());

  RunOptions reseeded;
  reseeded.seed = 5;
  CHECK(report_payload_json(run_convergence(sc, reseeded)) != report_payload_json(a));
}

TEST_CASE("single replica at the reference level has zero error") {
  Scenario sc = parse_scenario(kSmall);
  sc.run.levels = {7};
  sc.run.replicas = 1;
  const auto r = run_convergence(sc);
  CHECK(r.levels[0].mean_sup_error == 0.0);
  CHECK(r.levels[0].probability.p_hat == 0.0);
  CHECK_FALSE(r.fitted_order.has_value());
}

TEST_CASE("run outputs") {
  const Scenario sc = parse_scenario(kSmall);
  const auto report = run_convergence(sc);
  const fs::path dir = fs::temp_directory_path() / "ekisde_test_run_outputs";
  fs::remove_all(dir);
  write_run_outputs(report, kSmall, dir);
  for (const char* f : {"report.json", "report.csv", "histogram_level_2.csv", "histogram_level_4.csv"})
    CHECK(fs::exists(dir / f));
  const auto doc = nlohmann::json::parse(slurp(dir / "report.json"));
  CHECK(doc["schema_version"] == kReportSchemaVersion);
  CHECK(doc.contains("generated_at"));
  CHECK(doc["payload"]["levels"].size() == 3);
  CHECK(doc["payload_fnv1a"].get<std::string>().size() == 16);

  const auto back = load_report(dir / "report.json");
  CHECK(report_payload_json(back) == report_payload_json(report));
  CHECK_THROWS_AS(load_report(dir / "report.csv"), ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("histogram csv") {
  const std::string csv = histogram_csv({0.0, 0.01, 0.1, 1.0, INFINITY}, 3);
  CHECK(csv.rfind("schema_version,bin_low,bin_high,count\n", 0) == 0);
  CHECK(csv.find("1,0,0,1\n") != std::string::npos);
  CHECK(csv.find("1,inf,inf,1\n") != std::string::npos);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 6);
}

TEST_CASE("figure1 deterministic flow") {
  const auto r = figure1({});
  CHECK(r.initial_norm == doctest::Approx(std::sqrt(20000.0)));
  CHECK(r.max_norm > r.initial_norm);
  CHECK(r.argmax_time > 0.0);
  CHECK(r.final_norm < r.initial_norm);
  CHECK(r.initial_eigenvalues(0) == doctest::Approx(1.0));
  CHECK(r.initial_eigenvalues(1) == doctest::Approx(49.0));
  const Vector v49 = r.initial_eigenvectors.col(1);
  CHECK(std::abs(v49(0) + v49(1)) < 1e-10);
  const Vector v1 = r.initial_eigenvectors.col(0);
  CHECK(std::abs(v1(0) - v1(1)) < 1e-10);

  Figure1Options stochastic;
  stochastic.mode = Figure1Mode::stochastic;
  stochastic.level = 8;
  stochastic.seed = 3;
  const auto s = figure1(stochastic);
  CHECK(s.times.size() == 257);
  CHECK(s.initial_norm == doctest::Approx(std::sqrt(20000.0)));

  const fs::path dir = fs::temp_directory_path() / "ekisde_test_figure1";
  fs::remove_all(dir);
  write_figure1_outputs(s, stochastic, dir);
  const auto summary = nlohmann::json::parse(slurp(dir / "figure1_summary.json"));
  CHECK(summary["mode"] == "stochastic");
  CHECK(slurp(dir / "figure1_mean.csv").rfind("schema_version,t,mean_0,mean_1,mean_norm\n", 0) == 0);
  fs::remove_all(dir);
}

TEST_CASE("verify suite") {
  SUBCASE("small linear scenario passes") {
    const auto reports = verify_scenario(parse_scenario(kSmall));
    CHECK(reports.size() == 12);
    for (const auto& r : reports) {
      CAPTURE(r.name);
      CAPTURE(r.detail);
      CHECK(r.pass);
    }
  }
  SUBCASE("zero spread passes with exact zeros") {
    const auto reports = verify_scenario(bundled("zero_spread"));
    CHECK(all_pass(reports));
    for (const auto& r : reports)
      if (r.name == "spread_decrement") CHECK(r.empirical == 0.0);
  }
  SUBCASE("a y_tilde inside the range fails orthogonality") {
    const auto reports = verify_scenario(bundled("not_orthogonal"));
    CHECK_FALSE(all_pass(reports));
    for (const auto& r : reports) {
      if (r.name != "orthogonality") continue;
      CHECK_FALSE(r.pass);
      CHECK(r.detail.find("not orthogonal") != std::string::npos);
    }
  }
  SUBCASE("nonlinear scenarios are rejected") {
    CHECK_THROWS_AS(verify_scenario(bundled("cubic_tamed")), ConfigError);
  }
}
