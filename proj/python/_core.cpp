// Python bindings: thin wrappers over the C++ core. Results come back as
// plain lists and dicts; the package __init__ turns envelopes into dicts.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "stospec/cocycle.hpp"
#include "stospec/conjugacy.hpp"
#include "stospec/experiment.hpp"
#include "stospec/pitchfork.hpp"
#include "stospec/stationary.hpp"

namespace py = pybind11;
using namespace stospec;

namespace {

stospec::ExperimentConfig config_from_text(const std::string& text) {
  std::istringstream is(text);
  return parse_config(is);
}

py::dict table_dict(const ConjugacyTable& t) {
  py::dict d;
  d["seed"] = t.seed;
  d["delta"] = t.delta;
  d["level"] = t.level;
  d["onset_verified"] = t.onset_verified;
  d["x"] = t.x;
  d["r"] = t.r;
  d["g"] = t.g;
  d["horizon"] = t.horizon;
  d["mass"] = t.mass;
  d["missing"] = t.missing;
  d["shifts"] = t.shifts;
  d["residual"] = t.residual;
  d["g_strictly_increasing"] = t.g_strictly_increasing();
  d["max_residual"] = t.max_residual();
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Pitchfork SDE, linear cocycles and dichotomy spectra";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<RootUnavailable>(m, "RootUnavailable", PyExc_RuntimeError);

  m.def("moment", [](double alpha, double sigma, int k) { return moment({alpha, sigma}, k); },
        py::arg("alpha"), py::arg("sigma"), py::arg("k"), "E[x^k] under the stationary density.");

  m.def(
      "lyapunov_quadrature",
      [](double alpha, double sigma) {
        const auto q = lyapunov_quadrature({alpha, sigma});
        py::dict d;
        d["lambda"] = q.lambda;
        d["lambda_integral"] = q.lambda_integral;
        d["second_moment"] = q.second_moment;
        d["identity_gap"] = q.identity_gap;
        return d;
      },
      py::arg("alpha"), py::arg("sigma"));

  m.def(
      "stationary_density",
      [](double alpha, double sigma, const std::vector<double>& x) { return stationary_density({alpha, sigma}, x).p; },
      py::arg("alpha"), py::arg("sigma"), py::arg("x"));

  m.def(
      "simulate",
      [](double alpha, double sigma, std::uint64_t seed, double x0, double T, double dt) {
        const auto path = sample_path(seed, {dt, 0.0, T});
        const auto traj = integrate({alpha, sigma}, path, x0, 0.0, T);
        return py::make_tuple(traj.times, traj.states);
      },
      py::arg("alpha"), py::arg("sigma"), py::arg("seed"), py::arg("x0"), py::arg("T"), py::arg("dt") = 1e-3,
      "Pathwise solution on [0, T]; returns (times, states).");

  m.def(
      "fixed_point",
      [](double alpha, double sigma, std::uint64_t seed, double T, double dt, double tol) {
        const auto path = sample_path(seed, {dt, 0.0, T});
        const auto fp = pullback_fixed_point({alpha, sigma}, path, T, tol);
        return py::make_tuple(fp.times(), fp.values);
      },
      py::arg("alpha"), py::arg("sigma"), py::arg("seed"), py::arg("T"), py::arg("dt") = 1e-3,
      py::arg("tol") = 1e-9, "Random equilibrium a(theta_t w) on [0, T] by pullback; returns (times, values).");

  m.def(
      "ftle",
      [](double alpha, double sigma, const std::vector<std::uint64_t>& seeds, double T, double dt, unsigned workers) {
        const CocycleSpec spec{PitchforkLinearization{{alpha, sigma}, dt}};
        py::gil_scoped_release release;
        auto e = ftle_ensemble(spec, seeds, T, workers);
        py::gil_scoped_acquire acquire;
        return py::make_tuple(e.lmax, e.lmin);
      },
      py::arg("alpha"), py::arg("sigma"), py::arg("seeds"), py::arg("T"), py::arg("dt") = 1e-3,
      py::arg("workers") = 1u, "Finite-time exponents along the random equilibrium; returns (lmax, lmin).");

  m.def("conjugacy_delta", [](double alpha, double sigma) { return conjugacy_delta({alpha, sigma}); },
        py::arg("alpha"), py::arg("sigma"));

  m.def(
      "conjugacy_table",
      [](double alpha, double sigma, std::uint64_t seed, const std::vector<double>& x, double dt,
         const std::vector<double>& shifts, double level) {
        ConjugacyOptions opt;
        opt.level = level;
        return table_dict(conjugacy({alpha, sigma}, seed, dt, x, shifts, opt));
      },
      py::arg("alpha"), py::arg("sigma"), py::arg("seed"), py::arg("x"), py::arg("dt") = 1e-3,
      py::arg("shifts") = std::vector<double>{0.5, 1.0, 2.0}, py::arg("level") = 1.0);

  m.def("log_x_grid", &log_x_grid, py::arg("lo_exp") = -3.0, py::arg("hi_exp") = 1.0, py::arg("per_decade") = 15);

  m.def(
      "canonical_config", [](const std::string& text) { return serialize_config(config_from_text(text)); },
      py::arg("text"), "Parses a configuration and returns its canonical text.");
  m.def(
      "config_hash", [](const std::string& text) { return config_hash(config_from_text(text)); }, py::arg("text"));

  m.def(
      "run_config",
      [](const std::string& text, unsigned workers, std::uint64_t seed_offset, const std::string& out_dir) {
        RunOptions opt;
        opt.workers = workers;
        opt.seed_offset = seed_offset;
        opt.write_files = !out_dir.empty();
        if (!out_dir.empty()) opt.out_dir = out_dir;
        const auto config = config_from_text(text);
        py::gil_scoped_release release;
        const auto env = run(config, opt);
        return env.to_json().dump();
      },
      py::arg("text"), py::arg("workers") = 1u, py::arg("seed_offset") = 0u, py::arg("out_dir") = "",
      "Runs a study; returns the result envelope as JSON text.");

  m.attr("artifact_version") = kArtifactVersion;
}
