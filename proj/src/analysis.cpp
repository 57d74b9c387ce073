#include "ekisde/analysis.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace ekisde {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Fills `out` with the trajectory's value at a finest-grid node; false once the
// trajectory has no data there (after an explosion).
class NodeEvaluator {
 public:
  NodeEvaluator(const Trajectory& traj, const NoiseLattice& lattice)
      : traj_(traj), lattice_(lattice),
        ratio_(std::size_t{1} << (lattice.finest_level() - traj.level)),
        dw_(lattice.particles(), lattice.dim()) {}

  bool operator()(std::size_t node, Matrix& out) {
    const std::size_t cell = node / ratio_;
    const std::size_t offset = node % ratio_;
    if (offset == 0 && cell < traj_.states.size()) {
      out = traj_.states[cell].particles();
      return true;
    }
    if (cell >= traj_.coefficients.size() || cell >= traj_.states.size()) return false;
    const std::size_t start = cell * ratio_;
    const StepCoefficients& c = traj_.coefficients[cell];
    for (int j = 0; j < lattice_.particles(); ++j)
      dw_.row(j) = lattice_.path_at_node(j, node) - lattice_.path_at_node(j, start);
    out = traj_.states[cell].particles();
    out += (static_cast<double>(offset) * lattice_.finest_step()) * c.drift;
    out.noalias() += dw_ * c.diffusion.transpose();
    return true;
  }

 private:
  const Trajectory& traj_;
  const NoiseLattice& lattice_;
  std::size_t ratio_;
  Matrix dw_;
};

void require_from(const Trajectory& traj, const NoiseLattice& lattice, const char* what) {
  if (traj.lattice_seed != lattice.seed() || traj.lattice_level != lattice.finest_level() ||
      traj.level > lattice.finest_level() || std::abs(traj.horizon - lattice.horizon()) > 1e-12 * lattice.horizon())
    throw std::invalid_argument(std::string(what) + " trajectory does not belong to this lattice");
}

double power(double x, double theta) {
  if (theta == 2.0) return x * x;
  if (theta == 1.0) return x;
  return std::pow(x, theta);
}

void neumaier_add(double& sum, double& comp, double value) {
  const double t = sum + value;
  if (std::abs(sum) >= std::abs(value))
    comp += (sum - t) + value;
  else
    comp += (value - t) + sum;
  sum = t;
}

double variance(double sum, double sum_sq, std::size_t n) {
  if (n < 2) return 0.0;
  const double nd = static_cast<double>(n);
  return std::max(0.0, (sum_sq - sum * sum / nd) / (nd - 1.0));
}

} // namespace

double ErrorCurve::sup_error() const {
  if (exploded) return kInf;
  double worst = 0.0;
  for (double e : error) worst = std::max(worst, e);
  return worst;
}

ErrorCurve error_process(const Trajectory& reference, const Trajectory& approx, const NoiseLattice& lattice) {
  require_from(reference, lattice, "reference");
  require_from(approx, lattice, "approximation");
  if (approx.level > reference.level)
    throw std::invalid_argument("approximation level exceeds the reference level");
  if (reference.states.empty() || approx.states.empty() ||
      reference.states.front().particles() != approx.states.front().particles())
    throw std::invalid_argument("trajectories start from different ensembles");

  const std::size_t nodes = lattice.finest_steps() + 1;
  ErrorCurve curve;
  curve.node_step = lattice.finest_step();
  curve.error.assign(nodes, kInf);
  curve.reference.assign(nodes, kInf);
  curve.exploded = approx.exploded() || reference.exploded();

  NodeEvaluator ref_at(reference, lattice);
  NodeEvaluator approx_at(approx, lattice);
  Matrix x, y;
  for (std::size_t k = 0; k < nodes; ++k) {
    if (!ref_at(k, x)) break;
    curve.reference[k] = x.norm();
    if (!approx_at(k, y)) break;
    if (approx.exploded() && static_cast<double>(k) * curve.node_step >= *approx.exploded_at - 0.5 * curve.node_step)
      break;
    curve.error[k] = (x - y).norm();
  }
  return curve;
}

std::string_view to_string(StopTrigger trigger) {
  switch (trigger) {
    case StopTrigger::error: return "error";
    case StopTrigger::radius: return "radius";
    case StopTrigger::horizon: return "horizon";
  }
  return "unknown";
}

StoppingTime stopping_time(const std::vector<double>& reference_norms, const std::vector<double>& error_norms,
                           double node_step, double radius) {
  if (reference_norms.empty() || reference_norms.size() != error_norms.size())
    throw std::invalid_argument("reference and error curves must have the same nonzero length");
  if (!(radius > 1.0 + reference_norms.front()))
    throw std::invalid_argument("stopping radius must exceed 1 + ||x(0)||");
  for (std::size_t k = 1; k < reference_norms.size(); ++k) {
    const double t = static_cast<double>(k) * node_step;
    if (!(reference_norms[k] <= radius - 1.0)) return {t, StopTrigger::radius};
    if (!(error_norms[k] <= 1.0)) return {t, StopTrigger::error};
  }
  return {static_cast<double>(reference_norms.size() - 1) * node_step, StopTrigger::horizon};
}

StoppingTime stopping_time(const ErrorCurve& curve, double radius) {
  return stopping_time(curve.reference, curve.error, curve.node_step, radius);
}

double default_radius(const ErrorCurve& curve) {
  return 10.0 * (1.0 + (curve.reference.empty() ? 0.0 : curve.reference.front()));
}

ErrorSample make_sample(const ErrorCurve& curve, double radius) {
  ErrorSample s;
  s.sup_error = curve.sup_error();
  s.moment_curve = curve.error;
  const StoppingTime st = stopping_time(curve, radius);
  s.tau = st.tau;
  s.tau_trigger = st.trigger;
  s.exploded = curve.exploded;
  return s;
}

ProbabilityEstimate wilson_interval(std::size_t exceedances, std::size_t samples) {
  if (samples == 0) throw std::invalid_argument("probability estimate needs samples");
  if (exceedances > samples) throw std::invalid_argument("more exceedances than samples");
  const double n = static_cast<double>(samples);
  const double p = static_cast<double>(exceedances) / n;
  const double z2 = kWilsonZ * kWilsonZ;
  const double denom = 1.0 + z2 / n;
  const double centre = (p + z2 / (2.0 * n)) / denom;
  const double half = kWilsonZ * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / denom;
  ProbabilityEstimate est;
  est.p_hat = p;
  est.ci_low = exceedances == 0 ? 0.0 : std::clamp(centre - half, 0.0, 1.0);
  est.ci_high = exceedances == samples ? 1.0 : std::clamp(centre + half, 0.0, 1.0);
  est.exceedances = exceedances;
  est.samples = samples;
  return est;
}

ProbabilityEstimate estimate_probability(const std::vector<double>& sup_errors, double gamma, double h) {
  const double threshold = std::pow(h, gamma);
  std::size_t count = 0;
  for (double e : sup_errors)
    if (!(e <= threshold)) ++count;
  return wilson_interval(count, sup_errors.size());
}

ProbabilityEstimate estimate_probability(const std::vector<ErrorSample>& samples, double gamma, double h) {
  std::vector<double> sups;
  sups.reserve(samples.size());
  for (const auto& s : samples) sups.push_back(s.exploded ? kInf : s.sup_error);
  return estimate_probability(sups, gamma, h);
}

MomentEstimate estimate_moment(const std::vector<ErrorSample>& samples, double theta) {
  if (!(theta > 0.0 && theta <= 2.0)) throw std::invalid_argument("theta must lie in (0, 2]");
  MomentEstimate est;
  est.theta = theta;
  std::vector<const ErrorSample*> kept;
  for (const auto& s : samples) {
    if (s.exploded)
      ++est.exploded;
    else
      kept.push_back(&s);
  }
  est.samples = kept.size();
  if (kept.empty()) return est;
  const std::size_t nodes = kept.front()->moment_curve.size();
  std::vector<double> col(kept.size()), col_sq(kept.size());
  double best = -1.0;
  for (std::size_t k = 0; k < nodes; ++k) {
    for (std::size_t r = 0; r < kept.size(); ++r) {
      if (kept[r]->moment_curve.size() != nodes) throw std::invalid_argument("moment curves differ in length");
      col[r] = power(kept[r]->moment_curve[k], theta);
      col_sq[r] = col[r] * col[r];
    }
    const double sum = pairwise_sum(col);
    const double mean = sum / static_cast<double>(kept.size());
    if (mean > best) {
      best = mean;
      est.argmax = k;
      est.value = mean;
      est.se = std::sqrt(variance(sum, pairwise_sum(col_sq), kept.size()) / static_cast<double>(kept.size()));
    }
  }
  return est;
}

ColumnAccumulator::ColumnAccumulator(std::size_t width)
    : width_(width), buffer_(kBatch * width), sum_(width), sum_sq_(width), comp_(width), comp_sq_(width) {}

void ColumnAccumulator::add(std::span<const double> row) {
  if (row.size() != width_) throw std::invalid_argument("accumulator row has the wrong width");
  std::copy(row.begin(), row.end(), buffer_.begin() + static_cast<std::ptrdiff_t>(buffered_ * width_));
  ++count_;
  if (++buffered_ == kBatch) flush();
}

void ColumnAccumulator::flush() {
  if (buffered_ == 0) return;
  std::vector<double> col(buffered_), col_sq(buffered_);
  for (std::size_t k = 0; k < width_; ++k) {
    for (std::size_t r = 0; r < buffered_; ++r) {
      col[r] = buffer_[r * width_ + k];
      col_sq[r] = col[r] * col[r];
    }
    neumaier_add(sum_[k], comp_[k], pairwise_sum(col));
    neumaier_add(sum_sq_[k], comp_sq_[k], pairwise_sum(col_sq));
  }
  buffered_ = 0;
}

std::vector<double> ColumnAccumulator::means() {
  flush();
  std::vector<double> out(width_, 0.0);
  if (count_ == 0) return out;
  for (std::size_t k = 0; k < width_; ++k) out[k] = (sum_[k] + comp_[k]) / static_cast<double>(count_);
  return out;
}

std::vector<double> ColumnAccumulator::standard_errors() {
  flush();
  std::vector<double> out(width_, 0.0);
  if (count_ == 0) return out;
  for (std::size_t k = 0; k < width_; ++k)
    out[k] = std::sqrt(variance(sum_[k] + comp_[k], sum_sq_[k] + comp_sq_[k], count_) /
                       static_cast<double>(count_));
  return out;
}

MomentAccumulator::MomentAccumulator(std::size_t nodes, double theta)
    : theta_(theta), columns_(nodes), row_(nodes) {
  if (!(theta > 0.0 && theta <= 2.0)) throw std::invalid_argument("theta must lie in (0, 2]");
}

void MomentAccumulator::add(const std::vector<double>& curve, bool exploded) {
  if (exploded) {
    ++exploded_;
    return;
  }
  if (curve.size() != row_.size()) throw std::invalid_argument("moment curve has the wrong length");
  for (std::size_t k = 0; k < row_.size(); ++k) row_[k] = power(curve[k], theta_);
  columns_.add(row_);
}

MomentEstimate MomentAccumulator::result() {
  MomentEstimate est;
  est.theta = theta_;
  est.samples = columns_.count();
  est.exploded = exploded_;
  if (est.samples == 0) return est;
  const auto means = columns_.means();
  const auto ses = columns_.standard_errors();
  const auto best = std::max_element(means.begin(), means.end());
  est.argmax = static_cast<std::size_t>(best - means.begin());
  est.value = *best;
  est.se = ses[est.argmax];
  return est;
}

OrderFit fit_order(const std::vector<double>& steps, const std::vector<double>& errors) {
  if (steps.size() != errors.size()) throw std::invalid_argument("steps and errors differ in length");
  if (steps.size() < 3) throw std::invalid_argument("order fit needs at least three levels");
  const std::size_t n = steps.size();
  std::vector<double> x(n), y(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(errors[i] > 0.0) || !std::isfinite(errors[i]))
      throw std::invalid_argument("order fit needs positive finite errors");
    if (!(steps[i] > 0.0)) throw std::invalid_argument("order fit needs positive steps");
    x[i] = std::log(steps[i]);
    y[i] = std::log(errors[i]);
  }
  const double nd = static_cast<double>(n);
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / nd;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / nd;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (!(sxx > 0.0)) throw std::invalid_argument("order fit needs distinct steps");
  OrderFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = y[i] - (fit.intercept + fit.slope * x[i]);
    ss += r * r;
  }
  fit.residual = std::sqrt(ss / nd);
  return fit;
}

ExplosionCensus explosion_census(const std::vector<std::optional<double>>& exploded_at) {
  ExplosionCensus census;
  census.total = exploded_at.size();
  for (const auto& t : exploded_at) {
    if (!t) continue;
    ++census.exploded;
    if (!census.earliest || *t < *census.earliest) census.earliest = *t;
  }
  return census;
}

ExplosionCensus explosion_census(const std::vector<Trajectory>& trajectories) {
  std::vector<std::optional<double>> times;
  times.reserve(trajectories.size());
  for (const auto& t : trajectories) {
    const bool bad = t.exploded() || std::any_of(t.states.begin(), t.states.end(),
                                                 [](const Ensemble& e) { return !e.all_finite(); });
    times.push_back(bad ? std::optional<double>(t.exploded_at.value_or(0.0)) : std::nullopt);
  }
  return explosion_census(times);
}

MeanEstimate mean_with_se(const std::vector<double>& values) {
  if (values.empty()) return {};
  for (double v : values)
    if (!std::isfinite(v)) return {kInf, kInf};
  std::vector<double> sq(values.size());
  std::transform(values.begin(), values.end(), sq.begin(), [](double v) { return v * v; });
  const double n = static_cast<double>(values.size());
  const double sum = pairwise_sum(values);
  return {sum / n, std::sqrt(variance(sum, pairwise_sum(sq), values.size()) / n)};
}

void ConvergenceReport::refit() {
  std::vector<double> hs, errs;
  for (const auto& l : levels) {
    if (std::isfinite(l.mean_sup_error) && l.mean_sup_error > 0.0) {
      hs.push_back(l.h);
      errs.push_back(l.mean_sup_error);
    }
  }
  if (hs.size() >= 3)
    fitted_order = fit_order(hs, errs);
  else
    fitted_order.reset();
}

namespace {

using nlohmann::json;

json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }
double number_or_inf(const json& j) { return j.is_null() ? kInf : j.get<double>(); }

} // namespace

std::string report_payload_json(const ConvergenceReport& r) {
  json out;
  out["schema_version"] = kReportSchemaVersion;
  out["scenario"] = r.scenario;
  out["variant"] = r.variant;
  out["seed"] = r.seed;
  out["replicas"] = r.replicas;
  out["reference_level"] = r.reference_level;
  out["horizon"] = r.horizon;
  out["theta"] = r.theta;
  out["gamma"] = r.gamma;
  if (r.fitted_order)
    out["fitted_order"] = {{"slope", r.fitted_order->slope},
                           {"intercept", r.fitted_order->intercept},
                           {"residual", r.fitted_order->residual}};
  else
    out["fitted_order"] = nullptr;
  json levels = json::array();
  for (const auto& l : r.levels) {
    json lj;
    lj["level"] = l.level;
    lj["h"] = l.h;
    lj["mean_sup_error"] = number(l.mean_sup_error);
    lj["se"] = number(l.se);
    lj["moment"] = {{"theta", l.moment.theta},
                    {"value", number(l.moment.value)},
                    {"se", number(l.moment.se)},
                    {"argmax_time", static_cast<double>(l.moment.argmax) * r.horizon /
                                        std::ldexp(1.0, r.reference_level)},
                    {"argmax_node", l.moment.argmax},
                    {"samples", l.moment.samples},
                    {"exploded", l.moment.exploded}};
    lj["p_hat"] = l.probability.p_hat;
    lj["ci_low"] = l.probability.ci_low;
    lj["ci_high"] = l.probability.ci_high;
    lj["exceedances"] = l.probability.exceedances;
    lj["exploded_frac"] = l.exploded_fraction;
    lj["earliest_explosion"] = l.earliest_explosion ? json(*l.earliest_explosion) : json(nullptr);
    lj["second_moment_sup"] = number(l.second_moment_sup);
    lj["tau_triggers"] = {{"error", l.tau_triggers[0]}, {"radius", l.tau_triggers[1]}, {"horizon", l.tau_triggers[2]}};
    levels.push_back(std::move(lj));
  }
  out["levels"] = std::move(levels);
  return out.dump(2);
}

ConvergenceReport report_from_json(const std::string& text) {
  const json in = json::parse(text);
  if (in.value("schema_version", 0) != kReportSchemaVersion)
    throw std::invalid_argument("unsupported report schema_version");
  ConvergenceReport r;
  r.scenario = in.value("scenario", "");
  r.variant = in.value("variant", "");
  r.seed = in.value("seed", std::uint64_t{0});
  r.replicas = in.value("replicas", std::size_t{0});
  r.reference_level = in.value("reference_level", 0);
  r.horizon = in.value("horizon", 1.0);
  r.theta = in.value("theta", 2.0);
  r.gamma = in.value("gamma", 0.45);
  for (const auto& lj : in.at("levels")) {
    LevelSummary l;
    l.level = lj.at("level").get<int>();
    l.h = lj.at("h").get<double>();
    l.mean_sup_error = number_or_inf(lj.at("mean_sup_error"));
    l.se = number_or_inf(lj.at("se"));
    if (lj.contains("moment")) {
      const auto& m = lj["moment"];
      l.moment.theta = m.value("theta", r.theta);
      l.moment.value = number_or_inf(m.at("value"));
      l.moment.se = number_or_inf(m.at("se"));
      l.moment.argmax = m.value("argmax_node", std::size_t{0});
      l.moment.samples = m.value("samples", std::size_t{0});
      l.moment.exploded = m.value("exploded", std::size_t{0});
    }
    l.probability.p_hat = lj.value("p_hat", 0.0);
    l.probability.ci_low = lj.value("ci_low", 0.0);
    l.probability.ci_high = lj.value("ci_high", 0.0);
    l.probability.exceedances = lj.value("exceedances", std::size_t{0});
    l.probability.samples = r.replicas;
    l.exploded_fraction = lj.value("exploded_frac", 0.0);
    if (lj.contains("earliest_explosion") && !lj["earliest_explosion"].is_null())
      l.earliest_explosion = lj["earliest_explosion"].get<double>();
    if (lj.contains("second_moment_sup")) l.second_moment_sup = number_or_inf(lj["second_moment_sup"]);
    if (lj.contains("tau_triggers")) {
      const auto& t = lj["tau_triggers"];
      l.tau_triggers = {t.value("error", std::size_t{0}), t.value("radius", std::size_t{0}),
                        t.value("horizon", std::size_t{0})};
    }
    r.levels.push_back(std::move(l));
  }
  for (std::size_t i = 1; i < r.levels.size(); ++i)
    if (r.levels[i].level <= r.levels[i - 1].level)
      throw std::invalid_argument("report levels must be strictly increasing");
  r.refit();
  return r;
}

std::string report_csv(const ConvergenceReport& r) {
  std::ostringstream out;
  out.precision(17);
  out << "schema_version,level,h,mean_sup_err,se,moment_theta,p_hat,ci_low,ci_high,exploded_frac,"
         "second_moment_sup\n";
  for (const auto& l : r.levels) {
    out << kReportSchemaVersion << ',' << l.level << ',' << l.h << ',' << l.mean_sup_error << ',' << l.se << ','
        << l.moment.value << ',' << l.probability.p_hat << ',' << l.probability.ci_low << ','
        << l.probability.ci_high << ',' << l.exploded_fraction << ',' << l.second_moment_sup << '\n';
  }
  return out.str();
}

bool strictly_decreasing(const std::vector<double>& values) {
  for (double v : values)
    if (!std::isfinite(v)) return false;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (!(values[i] < values[i - 1])) return false;
  return true;
}

} // namespace ekisde
