#include "ekisde/experiment.hpp"

#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace ekisde;

PYBIND11_MODULE(_core, m) {
  m.doc() = "Ensemble Kalman inversion core";

  py::enum_<Variant>(m, "Variant")
      .value("tamed", Variant::tamed)
      .value("euler_maruyama", Variant::euler_maruyama)
      .value("teki", Variant::teki);

  py::class_<ForwardModel>(m, "ForwardModel")
      .def_static("linear", &ForwardModel::linear, py::arg("a"))
      .def_static("lipschitz_tanh", &ForwardModel::lipschitz_tanh, py::arg("mix"))
      .def_static("cubic", &ForwardModel::cubic, py::arg("mix"))
      .def("__call__", &ForwardModel::operator())
      .def_property_readonly("input_dim", &ForwardModel::input_dim)
      .def_property_readonly("output_dim", &ForwardModel::output_dim)
      .def_property_readonly("growth_exponent", &ForwardModel::growth_exponent)
      .def_property_readonly("name", &ForwardModel::name);

  py::class_<InverseProblem>(m, "InverseProblem")
      .def(py::init<ForwardModel, Matrix, Vector>(), py::arg("model"), py::arg("gamma"), py::arg("observation"))
      .def_property_readonly("gamma_inv_sqrt", &InverseProblem::gamma_inv_sqrt)
      .def_property_readonly("whitened_operator", &InverseProblem::whitened_operator)
      .def_property_readonly("whitened_observation", &InverseProblem::whitened_observation);

  m.def("extend_tikhonov", &extend_tikhonov, py::arg("problem"), py::arg("lam"), py::arg("prior_cov"));

  m.def(
      "decompose_observation",
      [](const Matrix& b, const Vector& z) {
        const auto s = decompose_observation(b, z);
        return py::make_tuple(s.in_range, s.orthogonal, s.witness);
      },
      py::arg("b"), py::arg("z"));

  m.def("range_projector", &range_projector, py::arg("b"));
  m.def("spread_energy", [](const Matrix& u) { return spread_energy(Ensemble(u)); }, py::arg("particles"));
  m.def("covariance", [](const Matrix& u) { return covariance(Ensemble(u)); }, py::arg("particles"));

  m.def(
      "step_tamed",
      [](const Matrix& u, const InverseProblem& p, double h, const Matrix& dw) {
        return step_tamed(Ensemble(u), p, h, dw).particles();
      },
      py::arg("particles"), py::arg("problem"), py::arg("h"), py::arg("dw"));
  m.def(
      "step_em",
      [](const Matrix& u, const InverseProblem& p, double h, const Matrix& dw) {
        return step_em(Ensemble(u), p, h, dw).particles();
      },
      py::arg("particles"), py::arg("problem"), py::arg("h"), py::arg("dw"));

  m.def(
      "simulate",
      [](const InverseProblem& p, const Matrix& u0, Variant variant, int level, int lattice_level, double horizon,
         std::uint64_t seed, bool deterministic) {
        const auto j = static_cast<int>(u0.rows());
        SchemeConfig cfg;
        cfg.variant = variant;
        cfg.level = level;
        cfg.horizon = horizon;
        const InverseProblem eff = effective_problem(cfg, p);
        const auto k = static_cast<int>(eff.obs_dim());
        const NoiseLattice lat = deterministic ? NoiseLattice::zeros(horizon, lattice_level, j, k)
                                               : NoiseLattice::build(seed, horizon, lattice_level, j, k);
        const Trajectory t = simulate(cfg, eff, Ensemble(u0), lat);
        std::vector<Matrix> states;
        for (const auto& s : t.states) states.push_back(s.particles());
        return py::make_tuple(states, t.exploded_at);
      },
      py::arg("problem"), py::arg("initial"), py::arg("variant") = Variant::tamed, py::arg("level") = 6,
      py::arg("lattice_level") = 6, py::arg("horizon") = 1.0, py::arg("seed") = 0, py::arg("deterministic") = false);

  m.def(
      "figure1",
      [](bool deterministic, int particles, int level, std::uint64_t seed) {
        Figure1Options o;
        o.mode = deterministic ? Figure1Mode::deterministic : Figure1Mode::stochastic;
        o.particles = particles;
        o.level = level;
        o.seed = seed;
        const Figure1Result r = figure1(o);
        py::dict d;
        d["times"] = r.times;
        d["mean_norm"] = r.mean_norm;
        d["initial_norm"] = r.initial_norm;
        d["final_norm"] = r.final_norm;
        d["max_norm"] = r.max_norm;
        d["argmax_time"] = r.argmax_time;
        d["initial_eigenvalues"] = r.initial_eigenvalues;
        return d;
      },
      py::arg("deterministic") = true, py::arg("particles") = 5, py::arg("level") = 14, py::arg("seed") = 0);

  m.def(
      "run_scenario",
      [](const std::string& text, std::optional<std::uint64_t> seed, unsigned jobs) {
        const Scenario sc = parse_scenario(text);
        RunOptions o;
        o.seed = seed;
        o.jobs = jobs;
        ConvergenceReport r;
        {
          py::gil_scoped_release release;
          r = run_convergence(sc, o);
        }
        return report_payload_json(r);
      },
      py::arg("text"), py::arg("seed") = py::none(), py::arg("jobs") = 1);

  m.def(
      "verify_scenario",
      [](const std::string& text, std::optional<std::uint64_t> seed) {
        const Scenario sc = parse_scenario(text);
        RunOptions o;
        o.seed = seed;
        std::vector<IdentityReport> r;
        {
          py::gil_scoped_release release;
          r = verify_scenario(sc, o);
        }
        return reports_json(r);
      },
      py::arg("text"), py::arg("seed") = py::none());

  m.def(
      "fit_order",
      [](const std::vector<double>& h, const std::vector<double>& e) {
        const OrderFit f = fit_order(h, e);
        return py::make_tuple(f.slope, f.intercept, f.residual);
      },
      py::arg("steps"), py::arg("errors"));

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
}
