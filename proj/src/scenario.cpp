#include "ekisde/scenario.hpp"

#include "ekisde/properties.hpp"

#include <toml.hpp>

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <initializer_list>
#include <sstream>

namespace ekisde {

namespace {

std::string join(const std::string& path, std::string_view key) {
  return path.empty() ? std::string(key) : path + "." + std::string(key);
}

std::string index(const std::string& path, std::size_t i) { return path + "[" + std::to_string(i) + "]"; }

void reject_unknown(const toml::table& tbl, const std::string& path, std::initializer_list<std::string_view> allowed) {
  for (auto&& [key, node] : tbl) {
    (void)node;
    if (std::find(allowed.begin(), allowed.end(), key.str()) == allowed.end())
      throw ConfigError(join(path, key.str()), "unknown field");
  }
}

const toml::table& require_table(const toml::table& parent, std::string_view key, const std::string& path) {
  const toml::node* node = parent.get(key);
  if (!node) throw ConfigError(join(path, key), "missing table");
  const toml::table* tbl = node->as_table();
  if (!tbl) throw ConfigError(join(path, key), "expected a table");
  return *tbl;
}

double as_number(const toml::node& node, const std::string& path) {
  if (auto v = node.as_floating_point()) return v->get();
  if (auto v = node.as_integer()) return static_cast<double>(v->get());
  throw ConfigError(path, "expected a number");
}

std::int64_t as_integer(const toml::node& node, const std::string& path) {
  if (auto v = node.as_integer()) return v->get();
  throw ConfigError(path, "expected an integer");
}

const toml::node* find(const toml::table& tbl, std::string_view key) { return tbl.get(key); }

double number_or(const toml::table& tbl, std::string_view key, const std::string& path, double fallback) {
  const toml::node* n = find(tbl, key);
  return n ? as_number(*n, join(path, key)) : fallback;
}

std::optional<double> optional_number(const toml::table& tbl, std::string_view key, const std::string& path) {
  const toml::node* n = find(tbl, key);
  if (!n) return std::nullopt;
  return as_number(*n, join(path, key));
}

std::int64_t integer_or(const toml::table& tbl, std::string_view key, const std::string& path, std::int64_t fallback) {
  const toml::node* n = find(tbl, key);
  return n ? as_integer(*n, join(path, key)) : fallback;
}

bool bool_or(const toml::table& tbl, std::string_view key, const std::string& path, bool fallback) {
  const toml::node* n = find(tbl, key);
  if (!n) return fallback;
  if (auto v = n->as_boolean()) return v->get();
  throw ConfigError(join(path, key), "expected a boolean");
}

std::string string_or(const toml::table& tbl, std::string_view key, const std::string& path, std::string fallback) {
  const toml::node* n = find(tbl, key);
  if (!n) return fallback;
  if (auto v = n->as_string()) return v->get();
  throw ConfigError(join(path, key), "expected a string");
}

const toml::node& require(const toml::table& tbl, std::string_view key, const std::string& path) {
  const toml::node* n = find(tbl, key);
  if (!n) throw ConfigError(join(path, key), "missing field");
  return *n;
}

Vector as_vector(const toml::node& node, const std::string& path) {
  const toml::array* arr = node.as_array();
  if (!arr) throw ConfigError(path, "expected an array of numbers");
  Vector v(static_cast<Eigen::Index>(arr->size()));
  for (std::size_t i = 0; i < arr->size(); ++i) v(static_cast<Eigen::Index>(i)) = as_number(*arr->get(i), index(path, i));
  return v;
}

Matrix as_matrix(const toml::node& node, const std::string& path) {
  const toml::array* rows = node.as_array();
  if (!rows || rows->empty()) throw ConfigError(path, "expected a non-empty array of rows");
  Eigen::Index cols = -1;
  Matrix m;
  for (std::size_t i = 0; i < rows->size(); ++i) {
    const Vector row = as_vector(*rows->get(i), index(path, i));
    if (cols < 0) {
      cols = row.size();
      if (cols == 0) throw ConfigError(index(path, i), "empty row");
      m.resize(static_cast<Eigen::Index>(rows->size()), cols);
    } else if (row.size() != cols) {
      throw ConfigError(index(path, i), "row length differs from the first row");
    }
    m.row(static_cast<Eigen::Index>(i)) = row.transpose();
  }
  return m;
}

// A number c means c * I of the given size; otherwise a square matrix of that size.
Matrix as_square(const toml::node& node, const std::string& path, Eigen::Index size) {
  if (node.is_number()) return as_number(node, path) * Matrix::Identity(size, size);
  Matrix m = as_matrix(node, path);
  if (m.rows() != size || m.cols() != size)
    throw ConfigError(path, "expected a " + std::to_string(size) + "x" + std::to_string(size) + " matrix");
  return m;
}

void require_spd_field(const Matrix& m, const std::string& path) {
  try {
    require_spd(m, "matrix");
  } catch (const std::invalid_argument&) {
    throw ConfigError(path, "must be symmetric positive definite");
  }
}

Matrix psd_sqrt(const Matrix& cov) {
  if (!is_symmetric(cov)) throw std::invalid_argument("covariance must be symmetric");
  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
  const double top = std::max(1.0, eig.eigenvalues().cwiseAbs().maxCoeff());
  if (eig.eigenvalues().minCoeff() < -1e-12 * top) throw std::invalid_argument("covariance must be PSD");
  const Vector root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return symmetrized(eig.eigenvectors() * root.asDiagonal() * eig.eigenvectors().transpose());
}

ForwardModel parse_model(const toml::table& tbl, const std::string& path) {
  const std::string kind = string_or(tbl, "model", path, "");
  if (kind.empty()) throw ConfigError(join(path, "model"), "missing field");
  const Matrix m = as_matrix(require(tbl, "matrix", path), join(path, "matrix"));
  if (kind == "linear") return ForwardModel::linear(m);
  if (kind == "lipschitz_tanh") return ForwardModel::lipschitz_tanh(m);
  if (kind == "cubic") return ForwardModel::cubic(m);
  throw ConfigError(join(path, "model"), "expected one of linear, lipschitz_tanh, cubic");
}

} // namespace

Ensemble gaussian_ensemble(const Vector& mean, const Matrix& cov, Eigen::Index size, std::uint64_t seed,
                           std::uint32_t stream, bool exact) {
  const Eigen::Index p = mean.size();
  if (cov.rows() != p || cov.cols() != p) throw std::invalid_argument("covariance does not match the mean");
  NormalStream normals(seed, stream, StreamDomain::initial_ensemble);
  Matrix z(size, p);
  for (Eigen::Index j = 0; j < size; ++j)
    for (Eigen::Index i = 0; i < p; ++i) z(j, i) = normals();
  const Matrix root = psd_sqrt(cov);
  Matrix dev;
  if (exact) {
    if (size <= p) throw std::invalid_argument("exact moments need more particles than dimensions");
    const Matrix centred = z.rowwise() - z.colwise().mean();
    const Matrix emp = symmetrized(centred.transpose() * centred / static_cast<double>(size));
    dev = centred * spd_power(emp, -0.5) * root;
  } else {
    dev = z * root;
  }
  return Ensemble(dev.rowwise() + mean.transpose());
}

InverseProblem Scenario::effective() const { return effective_problem(scheme(run.reference_level), problem); }

SchemeConfig Scenario::scheme(int level) const {
  SchemeConfig c;
  c.variant = run.variant;
  c.level = level;
  c.horizon = run.horizon;
  c.explosion_threshold = run.explosion_threshold;
  c.lambda = run.lambda;
  c.prior_cov = run.prior_cov;
  return c;
}

Ensemble Scenario::initial_ensemble(std::size_t replica) const {
  Ensemble ens = [&] {
    if (initial.kind == InitialSpec::Kind::explicit_particles) return Ensemble(initial.particles);
    const auto stream = static_cast<std::uint32_t>(initial.per_replica ? replica : 0);
    return gaussian_ensemble(initial.mean, initial.cov, initial.size, run.seed, stream, initial.exact_moments);
  }();
  if (initial.project_to_range) {
    const InverseProblem eff = effective();
    if (!eff.whitened_operator()) throw std::invalid_argument("project_to_range needs a linear model");
    ens = project_to_range(ens, *eff.whitened_operator());
  }
  return ens;
}

Scenario parse_scenario(const std::string& text, const std::string& source) {
  toml::table root;
  try {
    root = toml::parse(text, source);
  } catch (const toml::parse_error& err) {
    std::ostringstream msg;
    msg << err.description() << " (line " << err.source().begin.line << ")";
    throw ConfigError("", msg.str());
  }
  reject_unknown(root, "", {"name", "problem", "ensemble", "run", "verify"});
  const std::string name = string_or(root, "name", "", source);

  // [problem]
  const toml::table& pt = require_table(root, "problem", "");
  reject_unknown(pt, "problem", {"model", "matrix", "gamma", "observation"});
  std::optional<ForwardModel> model;
  try {
    model = parse_model(pt, "problem");
  } catch (const std::invalid_argument& err) {
    throw ConfigError("problem.matrix", err.what());
  }
  const Eigen::Index k = model->output_dim();
  const Eigen::Index p = model->input_dim();
  const Matrix gamma = find(pt, "gamma") ? as_square(*find(pt, "gamma"), "problem.gamma", k) : Matrix::Identity(k, k);
  require_spd_field(gamma, "problem.gamma");
  const Vector y = find(pt, "observation") ? as_vector(*find(pt, "observation"), "problem.observation")
                                           : Vector::Zero(k);
  if (y.size() != k) throw ConfigError("problem.observation", "expected " + std::to_string(k) + " entries");

  // [ensemble]
  const toml::table& et = require_table(root, "ensemble", "");
  reject_unknown(et, "ensemble",
                 {"size", "initial", "mean", "cov", "particles", "project_to_range", "per_replica", "exact_moments"});
  InitialSpec init;
  const std::string kind = string_or(et, "initial", "ensemble", "gaussian");
  if (kind == "gaussian") {
    init.kind = InitialSpec::Kind::gaussian;
    init.size = integer_or(et, "size", "ensemble", 0);
    if (init.size < 2) throw ConfigError("ensemble.size", "need at least two particles");
    init.mean = find(et, "mean") ? as_vector(*find(et, "mean"), "ensemble.mean") : Vector::Zero(p);
    if (init.mean.size() != p) throw ConfigError("ensemble.mean", "expected " + std::to_string(p) + " entries");
    init.cov = find(et, "cov") ? as_square(*find(et, "cov"), "ensemble.cov", p) : Matrix::Identity(p, p);
    try {
      (void)psd_sqrt(init.cov);
    } catch (const std::invalid_argument&) {
      throw ConfigError("ensemble.cov", "must be symmetric positive semidefinite");
    }
    init.exact_moments = bool_or(et, "exact_moments", "ensemble", false);
    if (init.exact_moments && init.size <= p)
      throw ConfigError("ensemble.exact_moments", "needs size > parameter dimension");
    init.per_replica = bool_or(et, "per_replica", "ensemble", true);
  } else if (kind == "explicit") {
    init.kind = InitialSpec::Kind::explicit_particles;
    init.particles = as_matrix(require(et, "particles", "ensemble"), "ensemble.particles");
    if (init.particles.cols() != p)
      throw ConfigError("ensemble.particles", "particles must have " + std::to_string(p) + " coordinates");
    if (init.particles.rows() < 2) throw ConfigError("ensemble.particles", "need at least two particles");
    init.size = init.particles.rows();
    if (find(et, "size") && integer_or(et, "size", "ensemble", 0) != init.size)
      throw ConfigError("ensemble.size", "does not match the number of particles");
  } else {
    throw ConfigError("ensemble.initial", "expected gaussian or explicit");
  }
  init.project_to_range = bool_or(et, "project_to_range", "ensemble", false);
  if (init.project_to_range && !model->is_linear())
    throw ConfigError("ensemble.project_to_range", "only available for linear models");

  // [run]
  const toml::table& rt = require_table(root, "run", "");
  reject_unknown(rt, "run",
                 {"horizon", "levels", "reference_level", "replicas", "seed", "variant", "gamma", "theta", "lambda",
                  "prior_cov", "explosion_threshold", "radius", "expect_order"});
  RunSpec run;
  run.horizon = number_or(rt, "horizon", "run", 1.0);
  if (!(run.horizon > 0.0)) throw ConfigError("run.horizon", "must be positive");
  if (const toml::node* lv = find(rt, "levels")) {
    const toml::array* arr = lv->as_array();
    if (!arr || arr->empty()) throw ConfigError("run.levels", "expected a non-empty array of integers");
    for (std::size_t i = 0; i < arr->size(); ++i) {
      const auto l = as_integer(*arr->get(i), index("run.levels", i));
      if (l < 0 || l > kMaxLatticeLevel) throw ConfigError(index("run.levels", i), "level must lie in [0, 26]");
      if (!run.levels.empty() && l <= run.levels.back())
        throw ConfigError(index("run.levels", i), "levels must be strictly increasing");
      run.levels.push_back(static_cast<int>(l));
    }
  } else {
    throw ConfigError("run.levels", "missing field");
  }
  run.reference_level = static_cast<int>(integer_or(rt, "reference_level", "run", run.levels.back()));
  if (run.reference_level < run.levels.back() || run.reference_level > kMaxLatticeLevel)
    throw ConfigError("run.reference_level", "must be at least the largest run level and at most 26");
  const auto replicas = integer_or(rt, "replicas", "run", 1);
  if (replicas < 1) throw ConfigError("run.replicas", "must be at least 1");
  run.replicas = static_cast<std::size_t>(replicas);
  const auto seed = integer_or(rt, "seed", "run", 0);
  if (seed < 0) throw ConfigError("run.seed", "must be non-negative");
  run.seed = static_cast<std::uint64_t>(seed);
  try {
    run.variant = parse_variant(string_or(rt, "variant", "run", "tamed"));
  } catch (const std::invalid_argument& err) {
    throw ConfigError("run.variant", err.what());
  }
  run.gamma = number_or(rt, "gamma", "run", 0.45);
  if (!(run.gamma > 0.0 && run.gamma < 0.5)) throw ConfigError("run.gamma", "must lie in (0, 1/2)");
  run.theta = number_or(rt, "theta", "run", 2.0);
  if (!(run.theta > 0.0 && run.theta <= 2.0)) throw ConfigError("run.theta", "must lie in (0, 2]");
  run.lambda = number_or(rt, "lambda", "run", 1.0);
  if (!(run.lambda > 0.0)) throw ConfigError("run.lambda", "must be positive");
  if (const toml::node* pc = find(rt, "prior_cov")) {
    run.prior_cov = as_square(*pc, "run.prior_cov", p);
    require_spd_field(run.prior_cov, "run.prior_cov");
  }
  if (run.variant == Variant::teki && !model->is_linear())
    throw ConfigError("run.variant", "teki needs a linear model");
  run.explosion_threshold = number_or(rt, "explosion_threshold", "run", 1e8);
  if (!(run.explosion_threshold > 0.0)) throw ConfigError("run.explosion_threshold", "must be positive");
  run.radius = optional_number(rt, "radius", "run");
  if (run.radius && !(*run.radius > 1.0)) throw ConfigError("run.radius", "must exceed 1");
  if (const toml::node* eo = find(rt, "expect_order")) {
    const Vector range = as_vector(*eo, "run.expect_order");
    if (range.size() != 2 || !(range(0) < range(1))) throw ConfigError("run.expect_order", "expected [low, high]");
    run.expect_order = std::make_pair(range(0), range(1));
  }

  // [verify]
  VerifySpec verify;
  verify.level = std::min(8, run.reference_level);
  if (const toml::node* vn = find(root, "verify")) {
    const toml::table* vt = vn->as_table();
    if (!vt) throw ConfigError("verify", "expected a table");
    reject_unknown(*vt, "verify", {"level", "replicas", "draws", "step", "y_tilde"});
    verify.level = static_cast<int>(integer_or(*vt, "level", "verify", verify.level));
    if (verify.level < 0 || verify.level > kMaxLatticeLevel) throw ConfigError("verify.level", "must lie in [0, 26]");
    const auto vr = integer_or(*vt, "replicas", "verify", 200);
    if (vr < 1) throw ConfigError("verify.replicas", "must be at least 1");
    verify.replicas = static_cast<std::size_t>(vr);
    const auto draws = integer_or(*vt, "draws", "verify", 100000);
    if (draws < 2) throw ConfigError("verify.draws", "must be at least 2");
    verify.draws = static_cast<std::size_t>(draws);
    verify.step = optional_number(*vt, "step", "verify");
    if (verify.step && !(*verify.step > 0.0 && *verify.step < 1.0)) throw ConfigError("verify.step", "must lie in (0, 1)");
    if (const toml::node* yt = find(*vt, "y_tilde")) verify.y_tilde = as_vector(*yt, "verify.y_tilde");
  }

  try {
    InverseProblem problem(*model, gamma, y);
    Scenario sc{name, std::move(problem), std::move(init), std::move(run), std::move(verify)};
    if (sc.verify.y_tilde && sc.verify.y_tilde->size() != sc.effective().obs_dim())
      throw ConfigError("verify.y_tilde", "expected " + std::to_string(sc.effective().obs_dim()) + " entries");
    (void)sc.initial_ensemble(0);
    return sc;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& err) {
    throw ConfigError("", err.what());
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("", "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

Scenario load_scenario(const std::filesystem::path& path) {
  return parse_scenario(read_file(path), path.stem().string());
}

} // namespace ekisde
