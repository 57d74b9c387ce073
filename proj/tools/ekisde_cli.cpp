#include "ekisde/experiment.hpp"

#include "CLI11.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

namespace fs = std::filesystem;
using namespace ekisde;

namespace {

constexpr int kOk = 0;
constexpr int kCheckFailed = 1;
constexpr int kConfigError = 2;

void print_levels(const ConvergenceReport& r) {
  std::printf("%6s %12s %14s %12s %10s %10s %10s\n", "level", "h", "mean_sup_err", "se", "p_hat", "ci_high",
              "exploded");
  for (const auto& l : r.levels)
    std::printf("%6d %12.6g %14.6g %12.4g %10.4f %10.4f %10.4f\n", l.level, l.h, l.mean_sup_error, l.se,
                l.probability.p_hat, l.probability.ci_high, l.exploded_fraction);
  if (r.fitted_order)
    std::printf("fitted order %.4f (residual %.3g)\n", r.fitted_order->slope, r.fitted_order->residual);
  else
    std::printf("fitted order unavailable (fewer than three finite levels)\n");
}

int check_expected_order(const Scenario& sc, const ConvergenceReport& r) {
  if (!sc.run.expect_order) return kOk;
  const auto [lo, hi] = *sc.run.expect_order;
  if (!r.fitted_order || r.fitted_order->slope < lo || r.fitted_order->slope > hi) {
    std::fprintf(stderr, "fitted order outside the expected range [%g, %g]\n", lo, hi);
    return kCheckFailed;
  }
  return kOk;
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Ensemble Kalman inversion: tamed, Euler-Maruyama and Tikhonov-regularized schemes"};
  app.require_subcommand(1);

  std::optional<std::uint64_t> seed;
  unsigned jobs = std::max(1u, std::thread::hardware_concurrency());
  std::string out_dir = "out";
  std::string scenario_path;
  bool quiet = false;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--seed", seed, "Override the scenario seed");
    sub->add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--out", out_dir, "Output directory");
  };

  auto* run = app.add_subcommand("run", "Coupled refinement study; writes report.json, report.csv, histograms");
  run->add_option("scenario", scenario_path, "Scenario TOML file")->required();
  run->add_flag("--quiet", quiet, "No progress output");
  add_common(run);

  auto* verify = app.add_subcommand("verify", "Exact identities and decrement checks; JSON to stdout");
  verify->add_option("scenario", scenario_path, "Scenario TOML file")->required();
  add_common(verify);

  std::string mode = "deterministic";
  Eigen::Index particles = 5;
  int level = 14;
  auto* fig = app.add_subcommand("figure1", "Mean path of the two-dimensional example with A = diag(100, 1)");
  fig->add_option("--mode", mode, "deterministic or stochastic")
      ->check(CLI::IsMember({"deterministic", "stochastic"}));
  fig->add_option("--particles", particles, "Ensemble size")->check(CLI::Range(3, 100000));
  fig->add_option("--level", level, "Dyadic level of the step")->check(CLI::Range(0, kMaxLatticeLevel));
  add_common(fig);

  std::vector<std::string> reports;
  auto* order = app.add_subcommand("order", "Refit the convergence order of existing reports");
  order->add_option("reports", reports, "report.json files")->required();
  add_common(order);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    RunOptions options;
    options.seed = seed;
    options.jobs = jobs;

    if (*run) {
      const std::string bytes = read_file(scenario_path);
      const Scenario sc = parse_scenario(bytes, fs::path(scenario_path).stem().string());
      if (!quiet)
        options.progress = [](std::size_t done, std::size_t total) {
          std::fprintf(stderr, "\rreplicas %zu/%zu", done, total);
          if (done == total) std::fprintf(stderr, "\n");
        };
      const ConvergenceReport report = run_convergence(sc, options);
      write_run_outputs(report, bytes, out_dir);
      print_levels(report);
      std::printf("wrote %s\n", (fs::path(out_dir) / "report.json").string().c_str());
      return check_expected_order(sc, report);
    }
    if (*verify) {
      const Scenario sc = load_scenario(scenario_path);
      const auto results = verify_scenario(sc, options);
      const std::string json = reports_json(results);
      std::cout << json << '\n';
      if (verify->count("--out")) write_file(fs::path(out_dir) / "verify.json", json + "\n");
      return all_pass(results) ? kOk : kCheckFailed;
    }
    if (*fig) {
      Figure1Options fo;
      fo.mode = mode == "stochastic" ? Figure1Mode::stochastic : Figure1Mode::deterministic;
      fo.particles = particles;
      fo.level = level;
      fo.seed = seed.value_or(0);
      const Figure1Result res = figure1(fo);
      write_figure1_outputs(res, fo, out_dir);
      std::printf("|mean(0)| = %.6f  max |mean(t)| = %.6f at t = %.6f  |mean(1)| = %.6f\n", res.initial_norm,
                  res.max_norm, res.argmax_time, res.final_norm);
      return kOk;
    }
    if (*order) {
      int status = kOk;
      for (const auto& path : reports) {
        const ConvergenceReport r = load_report(path);
        std::printf("%s\n", path.c_str());
        print_levels(r);
        if (!r.fitted_order) status = kCheckFailed;
      }
      return status;
    }
  } catch (const ConfigError& err) {
    std::fprintf(stderr, "config error: %s\n", err.what());
    return kConfigError;
  } catch (const std::exception& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return kConfigError;
  }
  return kOk;
}
