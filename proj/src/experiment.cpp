#include "ekisde/experiment.hpp"

#include "json.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <ctime>
#include <exception>
#include <fstream>
#include <iomanip>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

namespace ekisde {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Runs work(i) for i in [0, n) on up to `jobs` threads, handing results to
// reduce(i, result) strictly in index order.
template <class Work, class Reduce>
void ordered_parallel(std::size_t n, unsigned jobs, Work&& work, Reduce&& reduce,
                      const std::function<void(std::size_t, std::size_t)>& progress) {
  using Result = decltype(work(std::size_t{0}));
  jobs = std::max(1u, jobs);
  const std::size_t chunk = std::max<std::size_t>(1, 2 * static_cast<std::size_t>(jobs));
  std::vector<std::optional<Result>> slots(chunk);
  for (std::size_t begin = 0; begin < n; begin += chunk) {
    const std::size_t count = std::min(chunk, n - begin);
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          slots[i].emplace(work(begin + i));
        } catch (...) {
          std::lock_guard<std::mutex> lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    };
    const unsigned threads = static_cast<unsigned>(std::min<std::size_t>(jobs, count));
    if (threads <= 1) {
      worker();
    } else {
      std::vector<std::thread> pool;
      for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
      for (auto& th : pool) th.join();
    }
    if (failure) std::rethrow_exception(failure);
    for (std::size_t i = 0; i < count; ++i) {
      reduce(begin + i, std::move(*slots[i]));
      slots[i].reset();
    }
    if (progress) progress(begin + count, n);
  }
}

struct LevelOutcome {
  double sup_error = 0.0;
  std::optional<double> exploded_at;
  StopTrigger trigger = StopTrigger::horizon;
  std::vector<double> error_curve;
  std::vector<double> second_moment; // ||u_n||^2 / J per level-grid node; empty if exploded
};

std::string hex64(std::uint64_t v) {
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << v;
  return out.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

} // namespace

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string timestamp_utc() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream out;
  out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return out.str();
}

ConvergenceReport run_convergence(const Scenario& scenario, const RunOptions& options) {
  Scenario sc = scenario;
  if (options.seed) sc.run.seed = *options.seed;
  const RunSpec& run = sc.run;
  const InverseProblem eff = sc.effective();
  const int big_l = run.reference_level;
  const auto particles = static_cast<int>(sc.initial.size);
  const auto noise_dim = static_cast<int>(eff.obs_dim());
  const std::size_t nodes = (std::size_t{1} << big_l) + 1;

  struct LevelState {
    MomentAccumulator moment;
    ColumnAccumulator second;
    std::vector<double> sups;
    std::vector<std::optional<double>> explosions;
    std::array<std::size_t, 3> triggers{};
  };
  std::vector<LevelState> states;
  states.reserve(run.levels.size());
  for (int l : run.levels)
    states.push_back({MomentAccumulator(nodes, run.theta), ColumnAccumulator((std::size_t{1} << l) + 1), {}, {}, {}});

  auto work = [&](std::size_t r) {
    const NoiseLattice lattice = NoiseLattice::build(mix_seed(run.seed, r), run.horizon, big_l, particles, noise_dim);
    const Ensemble init = sc.initial_ensemble(r);
    const Trajectory reference = reference_path(eff, init, lattice, run.explosion_threshold);
    std::vector<LevelOutcome> out;
    out.reserve(run.levels.size());
    for (int l : run.levels) {
      const Trajectory traj = simulate(sc.scheme(l), eff, init, lattice);
      ErrorCurve curve = error_process(reference, traj, lattice);
      LevelOutcome o;
      o.sup_error = curve.sup_error();
      o.exploded_at = traj.exploded_at;
      if (!o.exploded_at && curve.exploded) o.exploded_at = reference.exploded_at;
      const double radius = run.radius.value_or(default_radius(curve));
      if (!(radius > 1.0 + curve.reference.front()))
        throw ConfigError("run.radius", "must exceed 1 + ||x(0)|| = " + std::to_string(1.0 + curve.reference.front()));
      o.trigger = stopping_time(curve, radius).trigger;
      if (!curve.exploded) {
        o.second_moment.reserve(traj.states.size());
        for (const auto& s : traj.states)
          o.second_moment.push_back(s.particles().squaredNorm() / static_cast<double>(s.size()));
      }
      o.error_curve = std::move(curve.error);
      out.push_back(std::move(o));
    }
    return out;
  };
  auto reduce = [&](std::size_t, std::vector<LevelOutcome>&& outcomes) {
    for (std::size_t i = 0; i < outcomes.size(); ++i) {
      LevelOutcome& o = outcomes[i];
      LevelState& st = states[i];
      const bool exploded = o.exploded_at.has_value() || !std::isfinite(o.sup_error);
      st.sups.push_back(exploded ? kInf : o.sup_error);
      st.explosions.push_back(exploded ? std::optional<double>(o.exploded_at.value_or(0.0)) : std::nullopt);
      st.moment.add(o.error_curve, exploded);
      if (!o.second_moment.empty()) st.second.add(o.second_moment);
      ++st.triggers[static_cast<std::size_t>(o.trigger)];
    }
  };
  ordered_parallel(run.replicas, options.jobs, work, reduce, options.progress);

  ConvergenceReport report;
  report.scenario = sc.name;
  report.variant = std::string(to_string(run.variant));
  report.seed = run.seed;
  report.replicas = run.replicas;
  report.reference_level = big_l;
  report.horizon = run.horizon;
  report.theta = run.theta;
  report.gamma = run.gamma;
  for (std::size_t i = 0; i < run.levels.size(); ++i) {
    LevelState& st = states[i];
    LevelSummary s;
    s.level = run.levels[i];
    s.h = run.horizon / std::ldexp(1.0, s.level);
    const MeanEstimate m = mean_with_se(st.sups);
    s.mean_sup_error = m.mean;
    s.se = m.se;
    s.moment = st.moment.result();
    s.probability = estimate_probability(st.sups, run.gamma, s.h);
    const ExplosionCensus census = explosion_census(st.explosions);
    s.exploded_fraction = census.fraction();
    s.earliest_explosion = census.earliest;
    if (st.second.count() > 0) {
      const auto means = st.second.means();
      s.second_moment_sup = *std::max_element(means.begin(), means.end());
    } else {
      s.second_moment_sup = kInf;
    }
    s.tau_triggers = st.triggers;
    s.sup_errors = std::move(st.sups);
    report.levels.push_back(std::move(s));
  }
  report.refit();
  return report;
}

std::string histogram_csv(const std::vector<double>& sup_errors, int bins) {
  std::ostringstream out;
  out.precision(17);
  out << "schema_version,bin_low,bin_high,count\n";
  std::vector<double> logs;
  std::size_t zeros = 0, infinite = 0;
  for (double e : sup_errors) {
    if (!std::isfinite(e))
      ++infinite;
    else if (e <= 0.0)
      ++zeros;
    else
      logs.push_back(std::log10(e));
  }
  if (zeros) out << kCsvSchemaVersion << ",0,0," << zeros << '\n';
  if (!logs.empty()) {
    const double lo = *std::min_element(logs.begin(), logs.end());
    double hi = *std::max_element(logs.begin(), logs.end());
    if (hi <= lo) hi = lo + 1e-9;
    const double width = (hi - lo) / bins;
    std::vector<std::size_t> counts(static_cast<std::size_t>(bins), 0);
    for (double v : logs) {
      auto b = static_cast<std::size_t>((v - lo) / width);
      counts[std::min<std::size_t>(b, counts.size() - 1)]++;
    }
    for (int b = 0; b < bins; ++b)
      out << kCsvSchemaVersion << ',' << std::pow(10.0, lo + b * width) << ',' << std::pow(10.0, lo + (b + 1) * width)
          << ',' << counts[static_cast<std::size_t>(b)] << '\n';
  }
  if (infinite) out << kCsvSchemaVersion << ",inf,inf," << infinite << '\n';
  return out.str();
}

void write_run_outputs(const ConvergenceReport& report, const std::string& config_bytes,
                       const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  const std::string payload = report_payload_json(report);
  nlohmann::ordered_json wrapper;
  wrapper["schema_version"] = kReportSchemaVersion;
  wrapper["generated_at"] = timestamp_utc();
  wrapper["config_fnv1a"] = hex64(fnv1a(config_bytes));
  wrapper["payload_fnv1a"] = hex64(fnv1a(payload));
  wrapper["payload"] = nlohmann::ordered_json::parse(payload);
  write_text(out_dir / "report.json", wrapper.dump(2) + "\n");
  write_text(out_dir / "report.csv", report_csv(report));
  for (const auto& l : report.levels)
    write_text(out_dir / ("histogram_level_" + std::to_string(l.level) + ".csv"), histogram_csv(l.sup_errors));
}

ConvergenceReport load_report(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& err) {
    throw ConfigError("", path.string() + ": " + err.what());
  }
  try {
    return report_from_json(doc.contains("payload") ? doc["payload"].dump() : text);
  } catch (const std::exception& err) {
    throw ConfigError("", path.string() + ": " + err.what());
  }
}

Figure1Result figure1(const Figure1Options& options) {
  Matrix a(2, 2);
  a << 100.0, 0.0, 0.0, 1.0;
  const InverseProblem problem(ForwardModel::linear(a), Matrix::Identity(2, 2), Vector::Zero(2));
  Vector mean(2);
  mean << 100.0, 100.0;
  Matrix cov(2, 2);
  cov << 25.0, -24.0, -24.0, 25.0;
  const Ensemble init = gaussian_ensemble(mean, cov, options.particles, options.seed, 0, true);
  const auto j = static_cast<int>(options.particles);
  const NoiseLattice lattice = options.mode == Figure1Mode::deterministic
                                   ? NoiseLattice::zeros(1.0, options.level, j, 2)
                                   : NoiseLattice::build(options.seed, 1.0, options.level, j, 2);
  SchemeConfig cfg;
  cfg.level = options.level;
  cfg.horizon = 1.0;
  Figure1Result res;
  res.trajectory = simulate(cfg, problem, init, lattice);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(covariance(init));
  res.initial_eigenvalues = eig.eigenvalues();
  res.initial_eigenvectors = eig.eigenvectors();
  for (std::size_t n = 0; n < res.trajectory.states.size(); ++n) {
    const Vector m = res.trajectory.states[n].mean();
    res.times.push_back(res.trajectory.time(n));
    res.mean_path.push_back(m);
    res.mean_norm.push_back(m.norm());
  }
  res.initial_norm = res.mean_norm.front();
  res.final_norm = res.mean_norm.back();
  const auto it = std::max_element(res.mean_norm.begin(), res.mean_norm.end());
  res.max_norm = *it;
  res.argmax_time = res.times[static_cast<std::size_t>(it - res.mean_norm.begin())];
  return res;
}

void write_figure1_outputs(const Figure1Result& r, const Figure1Options& options, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  {
    std::ostringstream out;
    out.precision(17);
    out << "schema_version,t,mean_0,mean_1,mean_norm\n";
    for (std::size_t n = 0; n < r.times.size(); ++n)
      out << kCsvSchemaVersion << ',' << r.times[n] << ',' << r.mean_path[n](0) << ',' << r.mean_path[n](1) << ','
          << r.mean_norm[n] << '\n';
    write_text(out_dir / "figure1_mean.csv", out.str());
  }
  {
    std::ostringstream out;
    write_trajectory_csv(out, r.trajectory);
    write_text(out_dir / "figure1_trajectory.csv", out.str());
  }
  nlohmann::ordered_json s;
  s["schema_version"] = kReportSchemaVersion;
  s["mode"] = options.mode == Figure1Mode::deterministic ? "deterministic" : "stochastic";
  s["particles"] = options.particles;
  s["level"] = options.level;
  s["seed"] = options.seed;
  s["initial_mean_norm"] = r.initial_norm;
  s["final_mean_norm"] = r.final_norm;
  s["max_mean_norm"] = r.max_norm;
  s["argmax_time"] = r.argmax_time;
  s["initial_cov_eigenvalues"] = {r.initial_eigenvalues(0), r.initial_eigenvalues(1)};
  s["non_monotone"] = r.max_norm > r.initial_norm && r.argmax_time > 0.0;
  write_text(out_dir / "figure1_summary.json", s.dump(2) + "\n");
}

std::vector<IdentityReport> verify_scenario(const Scenario& scenario, const RunOptions& options) {
  if (!scenario.problem.is_linear()) throw ConfigError("problem.model", "verify needs a linear model");
  Scenario sc = scenario;
  if (options.seed) sc.run.seed = *options.seed;
  const InverseProblem eff = sc.effective();
  const Matrix& b = *eff.whitened_operator();
  const Vector& z = eff.whitened_observation();
  const VerifySpec& v = sc.verify;
  const Ensemble init = sc.initial_ensemble(0);
  SchemeConfig cfg = sc.scheme(v.level);
  if (cfg.variant == Variant::euler_maruyama) cfg.variant = Variant::tamed;
  const double h = v.step.value_or(cfg.step());
  const auto particles = static_cast<int>(init.size());
  const auto noise_dim = static_cast<int>(eff.obs_dim());

  std::vector<IdentityReport> reports;
  reports.push_back(check_taming_identity(init, b, h));
  const ObservationSplit split = decompose_observation(b, z);
  try {
    reports.push_back(check_orthogonality(init, b, h, v.y_tilde.value_or(split.orthogonal)));
  } catch (const PreconditionError& err) {
    reports.push_back(IdentityReport::failed("orthogonality", err.what()));
  }
  MonteCarloOptions mc;
  mc.draws = v.draws;
  mc.seed = sc.run.seed;
  mc.stream = 0;
  reports.push_back(check_spread_decrement(init, b, h, mc));
  mc.stream = 1;
  reports.push_back(check_residual_decrement(init, b, h, z, mc));
  reports.push_back(check_quadform_nonneg(init.deviations() * b.transpose(), b * covariance(init) * b.transpose()));

  const NoiseLattice lattice = NoiseLattice::build(mix_seed(sc.run.seed, 0), sc.run.horizon, v.level, particles, noise_dim);
  const Trajectory traj = simulate(cfg, eff, init, lattice);
  reports.push_back(check_taming_identity(traj, b));
  reports.push_back(check_subspace(traj));
  try {
    reports.push_back(check_kernel_invariance(traj, b));
  } catch (const PreconditionError&) {
    const Trajectory projected = simulate(cfg, eff, project_to_range(init, b), lattice);
    IdentityReport r = check_kernel_invariance(projected, b);
    r.name = "kernel_invariance[projected]";
    reports.push_back(std::move(r));
  }

  PathAverages averages(std::size_t{1} << v.level, cfg.step(), b, split.witness);
  ordered_parallel(
      v.replicas, options.jobs,
      [&](std::size_t r) {
        const NoiseLattice lat =
            NoiseLattice::build(mix_seed(sc.run.seed, r), sc.run.horizon, v.level, particles, noise_dim);
        return simulate(cfg, eff, sc.initial_ensemble(r), lat);
      },
      [&](std::size_t, Trajectory&& t) { averages.add(t); }, options.progress);
  reports.push_back(averages.spread_trend());
  reports.push_back(averages.residual_trend());
  reports.push_back(averages.hs_sum_bound());
  reports.push_back(averages.residual_sum_bound());
  return reports;
}

} // namespace ekisde
