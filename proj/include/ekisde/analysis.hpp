#pragma once

#include "ekisde/schemes.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ekisde {

/// E(t) = x(t) - Y(t) on every node of the finest lattice grid, measured as the
/// stacked R^{pJ} norm. After an explosion of the approximation the error is +inf.
struct ErrorCurve {
  double node_step = 0.0;
  std::vector<double> error;     ///< ||E(t_k)||, k = 0..2^L
  std::vector<double> reference; ///< ||x(t_k)||
  bool exploded = false;

  [[nodiscard]] double sup_error() const;
  [[nodiscard]] double horizon() const { return node_step * static_cast<double>(error.size() - 1); }
};

/// Compares reference states with the interpolated approximation at every
/// finest node. Both trajectories must come from `lattice`.
ErrorCurve error_process(const Trajectory& reference, const Trajectory& approx, const NoiseLattice& lattice);

enum class StopTrigger { error, radius, horizon };
std::string_view to_string(StopTrigger trigger);

struct StoppingTime {
  double tau = 0.0;
  StopTrigger trigger = StopTrigger::horizon;
};

/// tau = T ^ inf{t > 0 : ||x(t)|| > R - 1 or ||E(t)|| > 1} on the grid.
/// Requires R > 1 + ||x(0)||.
StoppingTime stopping_time(const std::vector<double>& reference_norms, const std::vector<double>& error_norms,
                           double node_step, double radius);
StoppingTime stopping_time(const ErrorCurve& curve, double radius);

/// R = 10 (1 + ||x(0)||)
double default_radius(const ErrorCurve& curve);

struct ErrorSample {
  double sup_error = 0.0;
  std::vector<double> moment_curve; ///< ||E(t_k)|| per grid node
  double tau = 0.0;
  StopTrigger tau_trigger = StopTrigger::horizon;
  bool exploded = false;
};

ErrorSample make_sample(const ErrorCurve& curve, double radius);

struct ProbabilityEstimate {
  double p_hat = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::size_t exceedances = 0;
  std::size_t samples = 0;
};

inline constexpr double kWilsonZ = 1.959963984540054;

/// Wilson score interval at 95%.
ProbabilityEstimate wilson_interval(std::size_t exceedances, std::size_t samples);
/// Fraction of samples with sup ||E|| > h^gamma; exploded samples always count.
ProbabilityEstimate estimate_probability(const std::vector<ErrorSample>& samples, double gamma, double h);
ProbabilityEstimate estimate_probability(const std::vector<double>& sup_errors, double gamma, double h);

struct MomentEstimate {
  double theta = 2.0;
  double value = 0.0;     ///< sup_t of the Monte Carlo mean of ||E(t)||^theta
  double se = 0.0;        ///< standard error at the argmax node
  std::size_t argmax = 0; ///< node index
  std::size_t samples = 0;
  std::size_t exploded = 0; ///< excluded from the average
};

MomentEstimate estimate_moment(const std::vector<ErrorSample>& samples, double theta);

/// Per-column mean and variance over rows added one at a time. Rows are
/// buffered in batches of 64, each batch is reduced by pairwise summation and
/// batches are combined with compensated summation, so the result depends only
/// on the order in which rows are added.
class ColumnAccumulator {
 public:
  explicit ColumnAccumulator(std::size_t width);

  void add(std::span<const double> row);
  [[nodiscard]] std::size_t count() const { return count_; }
  [[nodiscard]] std::size_t width() const { return width_; }
  /// Flushes the pending batch.
  std::vector<double> means();
  /// Standard errors of the column means (sample variance / n).
  std::vector<double> standard_errors();

  static constexpr std::size_t kBatch = 64;

 private:
  void flush();

  std::size_t width_;
  std::vector<double> buffer_;
  std::size_t buffered_ = 0;
  std::size_t count_ = 0;
  std::vector<double> sum_, sum_sq_, comp_, comp_sq_;
};

/// Streaming form of estimate_moment for long grids.
class MomentAccumulator {
 public:
  MomentAccumulator(std::size_t nodes, double theta);

  void add(const std::vector<double>& curve, bool exploded);
  MomentEstimate result();
  [[nodiscard]] double theta() const { return theta_; }

 private:
  double theta_;
  ColumnAccumulator columns_;
  std::vector<double> row_;
  std::size_t exploded_ = 0;
};

struct OrderFit {
  double slope = 0.0;
  double intercept = 0.0;
  double residual = 0.0; ///< root-mean-square residual of the log-log fit
};

/// Least-squares slope of log(error) against log(h). Needs >= 3 points and
/// positive errors.
OrderFit fit_order(const std::vector<double>& steps, const std::vector<double>& errors);

struct ExplosionCensus {
  std::size_t exploded = 0;
  std::size_t total = 0;
  std::optional<double> earliest;
  [[nodiscard]] double fraction() const {
    return total == 0 ? 0.0 : static_cast<double>(exploded) / static_cast<double>(total);
  }
};

ExplosionCensus explosion_census(const std::vector<Trajectory>& trajectories);
ExplosionCensus explosion_census(const std::vector<std::optional<double>>& exploded_at);

/// Mean and standard error over finite values; +inf for both if any value is infinite.
struct MeanEstimate {
  double mean = 0.0;
  double se = 0.0;
};
MeanEstimate mean_with_se(const std::vector<double>& values);

struct LevelSummary {
  int level = 0;
  double h = 0.0;
  double mean_sup_error = 0.0;
  double se = 0.0;
  MomentEstimate moment;
  ProbabilityEstimate probability;
  double exploded_fraction = 0.0;
  std::optional<double> earliest_explosion;
  double second_moment_sup = 0.0; ///< sup_n of the mean of ||u_n||^2 / J over replicas
  std::array<std::size_t, 3> tau_triggers{}; ///< counts for error, radius, horizon
  std::vector<double> sup_errors;            ///< per replica, replica order
};

struct ConvergenceReport {
  std::string scenario;
  std::string variant;
  std::uint64_t seed = 0;
  std::size_t replicas = 0;
  int reference_level = 0;
  double horizon = 1.0;
  double theta = 2.0;
  double gamma = 0.45;
  std::vector<LevelSummary> levels;
  std::optional<OrderFit> fitted_order;

  /// Fits the order on levels with finite positive mean sup-error (>= 3 needed).
  void refit();
};

inline constexpr int kReportSchemaVersion = 1;

/// JSON text of the report (no timestamp; sup_errors omitted). Infinite values
/// are written as null.
std::string report_payload_json(const ConvergenceReport& report);
ConvergenceReport report_from_json(const std::string& text);
/// One row per level: schema_version,level,h,mean_sup_err,se,moment_theta,
/// p_hat,ci_low,ci_high,exploded_frac,second_moment_sup
std::string report_csv(const ConvergenceReport& report);

/// Strictly decreasing sequence (all finite).
bool strictly_decreasing(const std::vector<double>& values);

} // namespace ekisde
