#include "ostrovsky/time_stepper.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ostrovsky/error.hpp"

namespace ostrovsky {

void ThetaConfig::validate() const {
  if (!(theta >= 0.5 && theta <= 1.0)) throw ConfigError("theta must lie in [0.5, 1]");
  if (!(dt > 0.0)) throw ConfigError("dt must be > 0");
  if (!(t_final >= 0.0)) throw ConfigError("t_final must be >= 0");
  if (!(newton_tol > 0.0)) throw ConfigError("newton_tol must be > 0");
  if (newton_max_iter < 1) throw ConfigError("newton_max_iter must be >= 1");
}

int ThetaConfig::n_steps() const {
  if (t_final <= 0.0) return 0;
  return std::max(1, static_cast<int>(std::ceil(t_final / dt - 1e-12)));
}

double ThetaConfig::effective_dt() const {
  const int n = n_steps();
  return n > 0 ? t_final / n : dt;
}

double discrete_energy(const FieldState& state, const Mesh& mesh) {
  const double n = l2_norm(state.u, mesh);
  return 0.5 * n * n;
}

ConservedQuantities conserved_quantities(const HdgDiscretization& disc, const FieldState& state) {
  const auto& mesh = disc.mesh();
  const auto& cfg = disc.config();
  const QuadRule rule = gauss_legendre_rule(std::min(32, 2 * (disc.basis().degree() + 3)));
  ConservedQuantities out;
  const double l2 = l2_norm(state.u, mesh);
  out.energy = l2 * l2;
  out.mass = integral(state.u, mesh);
  double ham = 0.0;
  for (int e = 0; e < mesh.n_elements(); ++e) {
    const double jac = 0.5 * mesh.element_size(e);
    for (int q = 0; q < rule.size(); ++q) {
      const double xi = rule.points[q];
      const double u = eval_field(state.u, e, xi);
      const double v = eval_field(state.v, e, xi);
      const double qq = eval_field(state.q, e, xi);
      ham += rule.weights[q] * jac * (u * u * u / 3.0 + 0.5 * cfg.gamma * v * v + cfg.beta * qq * qq);
    }
  }
  out.hamiltonian = ham;
  return out;
}

DiagnosticsRecord make_diagnostics(const HdgDiscretization& disc, const FieldState& state, int step,
                                   int newton_iterations, double newton_residual) {
  const auto cq = conserved_quantities(disc, state);
  DiagnosticsRecord d;
  d.step = step;
  d.time = state.time;
  d.energy = 0.5 * cq.energy;
  d.mass = cq.mass;
  d.hamiltonian = cq.hamiltonian;
  d.newton_iterations = newton_iterations;
  d.newton_final_residual = newton_residual;
  return d;
}

namespace {

void extrapolate(std::span<double> y, std::span<const double> w, double theta) {
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = (y[i] - (1.0 - theta) * w[i]) / theta;
}

}  // namespace

StepResult theta_step(const HdgDiscretization& disc, const FieldState& state,
                      const TraceState& traces, const ThetaConfig& cfg, double dt,
                      int step_index) {
  cfg.validate();
  if (!(dt > 0.0)) throw ConfigError("dt must be > 0");
  const double theta = cfg.theta;
  const double t0 = state.time;
  const double t1 = t0 + dt;

  FieldState y = state;
  TraceState ytr = traces;
  disc.apply_boundary_data(ytr, t0, t1, theta);

  ElementOptions opts;
  opts.mode = ElementMode::theta_step;
  opts.time = t0 + theta * dt;
  opts.theta_dt = theta * dt;
  opts.u_prev = &state.u;

  int iterations = 0;
  int increases = 0;
  double previous = 0.0;
  double residual = 0.0;
  for (;;) {
    auto blocks = condense(disc, y, ytr, opts);
    residual = blocks.residual_norm;
    if (!std::isfinite(residual)) {
      throw StepFailure("Newton residual is not finite at step " + std::to_string(step_index),
                        step_index, residual);
    }
    if (residual <= cfg.newton_tol) break;
    if (iterations >= cfg.newton_max_iter) {
      throw StepFailure("Newton did not converge at step " + std::to_string(step_index) +
                            " (residual " + std::to_string(residual) + ")",
                        step_index, residual);
    }
    if (iterations > 0) increases = residual > previous ? increases + 1 : 0;
    previous = residual;

    const auto dl = block_tridiag_solve(blocks.system);
    const auto dx = recover_local(dl, blocks);
    if (increases >= 2) {
      double step = 1.0;
      for (int k = 0; k < 12; ++k) {
        FieldState trial = y;
        TraceState trial_tr = ytr;
        apply_update(disc, dx, dl, step, trial, trial_tr);
        if (residual_norm(disc, trial, trial_tr, opts) < residual) break;
        step *= 0.5;
      }
      apply_update(disc, dx, dl, step, y, ytr);
    } else {
      apply_update(disc, dx, dl, 1.0, y, ytr);
    }
    ++iterations;
  }

  StepResult out;
  out.state = std::move(y);
  out.traces = std::move(ytr);
  if (theta != 1.0) {
    extrapolate(out.state.u.data(), state.u.data(), theta);
    extrapolate(out.state.v.data(), state.v.data(), theta);
    extrapolate(out.state.p.data(), state.p.data(), theta);
    extrapolate(out.state.q.data(), state.q.data(), theta);
    extrapolate(out.traces.u_hat, traces.u_hat, theta);
    extrapolate(out.traces.v_hat, traces.v_hat, theta);
    extrapolate(out.traces.q_hat, traces.q_hat, theta);
  }
  disc.apply_boundary_data(out.traces, t1);
  out.state.time = t1;
  out.diagnostics = make_diagnostics(disc, out.state, step_index, iterations, residual);
  return out;
}

StepResult theta_step(const HdgDiscretization& disc, const FieldState& state,
                      const TraceState& traces, const ThetaConfig& cfg) {
  return theta_step(disc, state, traces, cfg, cfg.dt);
}

SimulationResult run_simulation(const HdgDiscretization& disc, const PointFunction& u0,
                                const ThetaConfig& cfg, const SimulationOptions& options) {
  return run_simulation(disc, l2_project(u0, disc.mesh(), disc.basis()), cfg, options);
}

SimulationResult run_simulation(const HdgDiscretization& disc, FieldCoeffs u0,
                                const ThetaConfig& cfg, const SimulationOptions& options) {
  cfg.validate();
  if (options.observe_every < 1) throw ConfigError("observe_every must be >= 1");
  if (disc.mesh().periodic()) remove_mean(u0, disc.mesh());

  auto init = init_aux_fields(disc, u0, 0.0);
  SimulationResult result;
  result.state = std::move(init.state);
  result.traces = std::move(init.traces);
  result.diagnostics.push_back(make_diagnostics(disc, result.state, 0));

  const int n = cfg.n_steps();
  const double dt = cfg.effective_dt();
  std::vector<int> marked;
  for (double t : options.observe_times) {
    if (n > 0) marked.push_back(static_cast<int>(std::lround(t / dt)));
  }
  auto notify = [&](int step) {
    for (const auto& obs : options.observers) obs(step, result.state.time, result.state, result.traces);
  };
  notify(0);
  for (int s = 1; s <= n; ++s) {
    auto step = theta_step(disc, result.state, result.traces, cfg, dt, s);
    result.state = std::move(step.state);
    result.traces = std::move(step.traces);
    if (s == n) result.state.time = cfg.t_final;
    step.diagnostics.time = result.state.time;
    result.diagnostics.push_back(step.diagnostics);
    result.steps = s;
    const bool marked_step = std::find(marked.begin(), marked.end(), s) != marked.end();
    if (s % options.observe_every == 0 || s == n || marked_step) notify(s);
  }
  return result;
}

}  // namespace ostrovsky
