#include <pybind11/complex.h>
#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "ostrovsky/error.hpp"
#include "ostrovsky/experiments.hpp"
#include "ostrovsky/linalg.hpp"
#include "ostrovsky/profiles.hpp"
#include "ostrovsky/time_stepper.hpp"

namespace py = pybind11;
using namespace ostrovsky;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Array to_array(const std::vector<double>& v) {
  Array out(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

DenseMatrix block_from(const Array& a, py::ssize_t index, std::size_t b) {
  DenseMatrix m(b, b);
  auto r = a.unchecked<3>();
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < b; ++j) m(i, j) = r(index, i, j);
  return m;
}

Array solve_blocks(const Array& diag, const Array& lower, const Array& upper, const Array& rhs,
                   std::optional<Array> corner_top_right, std::optional<Array> corner_bottom_left) {
  if (diag.ndim() != 3 || diag.shape(1) != diag.shape(2)) throw UsageError("diag must have shape (m, b, b)");
  const auto m = static_cast<std::size_t>(diag.shape(0));
  const auto b = static_cast<std::size_t>(diag.shape(1));
  const bool periodic = corner_top_right.has_value() || corner_bottom_left.has_value();
  if (periodic && !(corner_top_right && corner_bottom_left)) {
    throw UsageError("periodic systems need both corner blocks");
  }
  auto sys = BlockTridiagonalSystem::zeros(b, m, periodic);
  if (m > 1 && (lower.ndim() != 3 || upper.ndim() != 3 || static_cast<std::size_t>(lower.shape(0)) != m - 1 ||
                static_cast<std::size_t>(upper.shape(0)) != m - 1)) {
    throw UsageError("lower and upper must have shape (m-1, b, b)");
  }
  for (std::size_t i = 0; i < m; ++i) sys.diag[i] = block_from(diag, i, b);
  for (std::size_t i = 0; i + 1 < m; ++i) {
    sys.lower[i] = block_from(lower, i, b);
    sys.upper[i] = block_from(upper, i, b);
  }
  if (periodic) {
    auto one = [b](const Array& a) {
      if (a.ndim() != 2 || static_cast<std::size_t>(a.shape(0)) != b || static_cast<std::size_t>(a.shape(1)) != b) {
        throw UsageError("corner blocks must have shape (b, b)");
      }
      DenseMatrix c(b, b);
      auto r = a.unchecked<2>();
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < b; ++j) c(i, j) = r(i, j);
      return c;
    };
    sys.corner_top_right = one(*corner_top_right);
    sys.corner_bottom_left = one(*corner_bottom_left);
  }
  if (static_cast<std::size_t>(rhs.size()) != m * b) throw UsageError("rhs must have m*b entries");
  sys.rhs.assign(rhs.data(), rhs.data() + rhs.size());
  std::vector<double> x;
  {
    py::gil_scoped_release release;
    x = block_tridiag_solve(sys);
  }
  return to_array(x);
}

py::dict petviashvili(double alpha, double beta, double gamma, double c_w, double length, int fourier_points,
                      double relaxation, double tolerance, int max_iterations) {
  SolitaryParams p{alpha, beta, gamma, c_w, length, fourier_points};
  PetviashviliConfig cfg;
  cfg.relaxation = relaxation;
  cfg.tolerance = tolerance;
  cfg.max_iterations = max_iterations;
  const auto prof = petviashvili_solve(p, cfg);
  std::vector<double> x(prof.size());
  for (int j = 0; j < prof.size(); ++j) x[j] = prof.grid_point(j);
  py::dict out;
  out["x"] = to_array(x);
  out["values"] = to_array(prof.values());
  out["residual"] = prof.residual();
  out["iterations"] = prof.iterations();
  out["amplitude_factor"] = prof.amplitude_factor();
  out["residual_history"] = to_array(prof.residual_history());
  return out;
}

py::dict simulate(const std::function<double(double)>& u0, double x_left, double x_right, int elements,
                  int degree, double alpha, double beta, double gamma, const std::string& regime, double theta,
                  double dt, double t_final, const std::string& stabilization) {
  ProblemConfig p;
  p.alpha = alpha;
  p.beta = beta;
  p.gamma = gamma;
  p.regime = boundary_regime_from_string(regime);
  p.degenerate_dispersion = beta == 0.0;
  p.validate();
  StabParams stab;
  if (stabilization == "default") stab = StabParams::defaults(beta, gamma);
  else if (stabilization == "conservative") stab = StabParams::conservative(beta, gamma);
  else throw ConfigError("stabilization must be 'default' or 'conservative'");
  const HdgDiscretization disc(Mesh::uniform(x_left, x_right, elements, p.regime == BoundaryRegime::periodic),
                               Basis(degree), p, stab);
  ThetaConfig tc;
  tc.theta = theta;
  tc.dt = dt;
  tc.t_final = t_final;
  // u0 is a Python callable: project with the GIL held, then step without it.
  FieldCoeffs coeffs = l2_project(u0, disc.mesh(), disc.basis());
  SimulationResult res;
  {
    py::gil_scoped_release release;
    res = run_simulation(disc, std::move(coeffs), tc);
  }
  const auto snap = sample_snapshot("final", res.state.u, disc.mesh(), res.state.time);
  std::vector<double> time, energy, mass;
  std::vector<int> iters;
  for (const auto& d : res.diagnostics) {
    time.push_back(d.time);
    energy.push_back(d.energy);
    mass.push_back(d.mass);
    iters.push_back(d.newton_iterations);
  }
  py::dict out;
  out["x"] = to_array(snap.x);
  out["u"] = to_array(snap.u);
  out["time"] = res.state.time;
  out["steps"] = res.steps;
  out["coefficients"] = to_array(std::vector<double>(res.state.u.data().begin(), res.state.u.data().end()));
  py::dict diag;
  diag["time"] = to_array(time);
  diag["energy"] = to_array(energy);
  diag["mass"] = to_array(mass);
  diag["newton_iterations"] = iters;
  out["diagnostics"] = diag;
  return out;
}

py::dict results_to_dict(const ExperimentResults& r, const std::vector<std::string>& files) {
  py::dict out;
  py::list rows;
  if (r.convergence) {
    for (const auto& row : r.convergence->rows) {
      py::dict d;
      d["degree"] = row.degree;
      d["elements"] = row.n_elements;
      d["error"] = row.error;
      d["rate"] = row.rate;
      d["ok"] = row.ok;
      rows.append(d);
    }
  }
  out["convergence"] = rows;
  out["limit"] = r.limit;
  out["summary"] = r.summary;
  out["failures"] = r.failures;
  out["files"] = files;
  return out;
}

py::dict run(const std::string& kind, const std::map<std::string, std::string>& overrides,
             std::optional<std::string> out_dir) {
  const RunConfig cfg = parse_config(overrides, experiment_kind_from_string(kind));
  ExperimentResults res;
  std::vector<std::string> files;
  {
    py::gil_scoped_release release;
    res = run_experiment(cfg);
    if (out_dir) files = emit_outputs(cfg, res, *out_dir);
  }
  return results_to_dict(res, files);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "HDG solver for the Ostrovsky equation";
  m.attr("__version__") = kLibraryVersion;

  // Translators run newest first, so the base class is registered before its subclasses.
  auto& base = py::register_exception<Error>(m, "OstrovskyError", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<StepFailure>(m, "StepFailure", base.ptr());
  py::register_exception<PetviashviliError>(m, "PetviashviliError", base.ptr());

  m.def(
      "gauss_legendre",
      [](int n) {
        const auto r = gauss_legendre_rule(n);
        return py::make_tuple(to_array(r.points), to_array(r.weights));
      },
      py::arg("n"), "Gauss-Legendre nodes and weights on [-1, 1].");
  m.def(
      "legendre", [](int degree, double xi) { const auto v = legendre_eval(degree, xi); return py::make_tuple(v.value, v.derivative); },
      py::arg("degree"), py::arg("xi"));

  m.def("solve_block_tridiagonal", &solve_blocks, py::arg("diag"), py::arg("lower"), py::arg("upper"),
        py::arg("rhs"), py::arg("corner_top_right") = py::none(), py::arg("corner_bottom_left") = py::none(),
        "Solve a (possibly cyclic) block-tridiagonal system. Blocks are (m, b, b) arrays.");
  m.def("fft", [](ComplexVector v) { return fft_forward(std::move(v)); }, py::arg("values"));
  m.def("ifft", [](ComplexVector v) { return fft_inverse(std::move(v)); }, py::arg("values"));

  m.def("tilde_tau", &tilde_tau, py::arg("u_minus"), py::arg("u_hat"), py::arg("normal"), py::arg("alpha"));
  m.def("manufactured_source", py::vectorize(&manufactured_source), py::arg("x"), py::arg("t"),
        py::arg("alpha") = 1.0, py::arg("beta") = 0.5, py::arg("gamma") = 1.0);
  m.def("linear_symbol", &linear_symbol, py::arg("kappa"), py::arg("beta"), py::arg("gamma"), py::arg("c_w"));
  m.def("peakon_u0", py::vectorize(&peakon_u0), py::arg("x"));
  m.def("oh_exact", py::vectorize(&oh_exact), py::arg("x"), py::arg("t"));

  m.def("petviashvili", &petviashvili, py::arg("alpha") = 2.0, py::arg("beta") = 1.0, py::arg("gamma") = 0.25,
        py::arg("c_w") = -0.75, py::arg("length") = 80.0, py::arg("fourier_points") = 512,
        py::arg("relaxation") = 0.8, py::arg("tolerance") = 1e-10, py::arg("max_iterations") = 500,
        "Solitary-wave profile by the Petviashvili iteration, peak at x = 0.");

  m.def("simulate", &simulate, py::arg("u0"), py::arg("x_left"), py::arg("x_right"), py::arg("elements"),
        py::arg("degree") = 2, py::arg("alpha") = 1.0, py::arg("beta") = 0.5, py::arg("gamma") = 1.0,
        py::arg("regime") = "periodic", py::arg("theta") = 0.5, py::arg("dt") = 1e-2, py::arg("t_final") = 1.0,
        py::arg("stabilization") = "default",
        "Project u0, initialize the auxiliary fields and advance with the theta scheme.");

  m.def(
      "default_config", [](const std::string& kind) { return to_key_values(default_config(experiment_kind_from_string(kind))); },
      py::arg("kind"));
  m.def(
      "resolve_config",
      [](const std::string& kind, const std::map<std::string, std::string>& overrides) {
        return to_key_values(parse_config(overrides, experiment_kind_from_string(kind)));
      },
      py::arg("kind"), py::arg("overrides") = std::map<std::string, std::string>{});
  m.def("run_experiment", &run, py::arg("kind"), py::arg("overrides") = std::map<std::string, std::string>{},
        py::arg("out_dir") = py::none(), "Run an experiment; writes CSVs and manifest.json when out_dir is given.");
}
