#pragma once

#include <functional>
#include <vector>

#include "ostrovsky/hdg_operator.hpp"

namespace ostrovsky {

struct ThetaConfig {
  double theta = 0.5;
  double dt = 1e-3;
  double t_final = 0.0;
  double newton_tol = 1e-10;
  int newton_max_iter = 25;

  void validate() const;
  /// ceil(t_final / dt), so the last step lands exactly on t_final.
  int n_steps() const;
  /// t_final / n_steps(); equals dt whenever dt divides t_final.
  double effective_dt() const;
};

struct DiagnosticsRecord {
  int step = 0;
  double time = 0.0;
  /// 1/2 ||u_h||^2
  double energy = 0.0;
  /// integral of u_h
  double mass = 0.0;
  /// integral of u^3/3 + gamma/2 v^2 + beta q^2
  double hamiltonian = 0.0;
  int newton_iterations = 0;
  double newton_final_residual = 0.0;
};

struct ConservedQuantities {
  double energy = 0.0;  // integral of u^2
  double hamiltonian = 0.0;
  double mass = 0.0;
};

double discrete_energy(const FieldState& state, const Mesh& mesh);
ConservedQuantities conserved_quantities(const HdgDiscretization& disc, const FieldState& state);

struct StepResult {
  FieldState state;
  TraceState traces;
  DiagnosticsRecord diagnostics;
};

/// Advance one step of length dt from state.time.
///
/// Newton runs on the intermediate level w^{n+theta} and the new level is
/// recovered as (w^{n+theta} - (1 - theta) w^n) / theta. Throws StepFailure
/// if the residual does not reach newton_tol.
StepResult theta_step(const HdgDiscretization& disc, const FieldState& state,
                      const TraceState& traces, const ThetaConfig& cfg, double dt,
                      int step_index = 1);
StepResult theta_step(const HdgDiscretization& disc, const FieldState& state,
                      const TraceState& traces, const ThetaConfig& cfg);

using StepObserver =
    std::function<void(int step, double time, const FieldState& state, const TraceState& traces)>;

struct SimulationOptions {
  std::vector<StepObserver> observers;
  /// Observers fire at step 0, every observe_every steps, and the last step.
  int observe_every = 1;
  /// Extra times (rounded to the nearest step) at which observers fire.
  std::vector<double> observe_times;
};

struct SimulationResult {
  FieldState state;
  TraceState traces;
  std::vector<DiagnosticsRecord> diagnostics;
  int steps = 0;
};

DiagnosticsRecord make_diagnostics(const HdgDiscretization& disc, const FieldState& state, int step,
                                   int newton_iterations = 0, double newton_residual = 0.0);

/// Projects u0, completes the auxiliary fields and steps to t_final.
/// Periodic data are projected to zero mean.
SimulationResult run_simulation(const HdgDiscretization& disc, const PointFunction& u0,
                                const ThetaConfig& cfg, const SimulationOptions& options = {});
SimulationResult run_simulation(const HdgDiscretization& disc, FieldCoeffs u0,
                                const ThetaConfig& cfg, const SimulationOptions& options = {});

}  // namespace ostrovsky
