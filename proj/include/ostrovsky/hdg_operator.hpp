#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "ostrovsky/linalg.hpp"
#include "ostrovsky/mesh_basis.hpp"

namespace ostrovsky {

using TimeFunction = std::function<double(double)>;
using SpaceTimeFunction = std::function<double(double, double)>;

enum class BoundaryRegime { dirichlet_beta_pos, dirichlet_beta_neg, periodic };

const char* to_string(BoundaryRegime regime);
BoundaryRegime boundary_regime_from_string(const std::string& name);

/// Time-dependent Dirichlet data. Empty functions mean homogeneous data.
struct BoundaryData {
  TimeFunction u_left;
  TimeFunction u_right;
  TimeFunction v_right;
  /// Used when beta > 0.
  TimeFunction q_left;
  /// Used when beta < 0.
  TimeFunction q_right;
};

/// u_t - beta u_xxx + (alpha/2 u^2)_x - gamma d_x^{-1} u = g on (x_L, x_R).
struct ProblemConfig {
  double alpha = 1.0;
  double beta = 0.5;
  double gamma = 1.0;
  BoundaryRegime regime = BoundaryRegime::dirichlet_beta_pos;
  /// Permit beta == 0 (two-field u/v scheme, q and p decouple).
  bool degenerate_dispersion = false;
  SpaceTimeFunction source;
  BoundaryData bc;

  void validate() const;
  bool ostrovsky_hunter() const { return beta == 0.0; }

  double flux(double u) const { return 0.5 * alpha * u * u; }
  double flux_derivative(double u) const { return alpha * u; }
};

enum class TauFMode { constant, adaptive };

struct StabParams {
  double tau_pu = 2.0;
  double tau_vq = 0.0;
  double tau_qv = 0.0;
  TauFMode tau_f_mode = TauFMode::constant;
  double tau_f = 2.0;

  /// tau_pu = 2, tau_vq = 0.9 sqrt(beta/gamma), tau_qv = 0.9 sqrt(gamma/beta), tau_f = 2.
  static StabParams defaults(double beta, double gamma);
  /// tau_pu = 0, tau_vq = sqrt(beta/gamma), tau_qv = sqrt(gamma/beta), tau_f = tilde tau.
  static StabParams conservative(double beta, double gamma);

  /// Nonnegativity, and the sign conditions on the dispersive pair when beta > 0.
  void validate(const ProblemConfig& config) const;
  bool is_conservative(const ProblemConfig& config, double rel_tol = 1e-12) const;
};

/// (1/(u_hat-u)^2) int_{u_hat}^{u} (f(s) - f(u)) n ds for f = alpha/2 s^2,
/// i.e. -alpha n (u_hat + 2u)/6.
double tilde_tau(double u_minus, double u_hat, double n, double alpha);

/// tau_f actually used in the flux trace; adaptive mode falls back to
/// |f'(u)| when u_hat == u.
double resolve_tau_f(const StabParams& stab, double u_minus, double u_hat, double n, double alpha);

/// Field unknowns of one time level.
struct FieldState {
  FieldCoeffs u;
  FieldCoeffs v;
  FieldCoeffs p;
  FieldCoeffs q;
  double time = 0.0;

  static FieldState zeros(int n_elements, int n_modes, double time = 0.0);
};

/// Skeleton unknowns indexed by trace node.
///
/// Dirichlet meshes have N+1 trace nodes and the entries at nodes 0 and N
/// carry boundary data; periodic meshes have N trace nodes. q_hat is unused
/// when beta == 0.
struct TraceState {
  std::vector<double> u_hat;
  std::vector<double> v_hat;
  std::vector<double> q_hat;

  static TraceState zeros(int n_nodes);
};

enum class TraceComponent { u = 0, v = 1, q = 2 };
enum class Side { left = 0, right = 1 };

/// One incoming trace of an element: which endpoint and which component.
struct TraceSlot {
  Side side;
  TraceComponent component;
};

/// Mesh, basis, coefficients and stabilization of one HDG discretization,
/// plus the layout of the skeleton unknowns.
class HdgDiscretization {
 public:
  HdgDiscretization(Mesh mesh, Basis basis, ProblemConfig config, StabParams stab);

  const Mesh& mesh() const { return mesh_; }
  const Basis& basis() const { return basis_; }
  const ProblemConfig& config() const { return config_; }
  const StabParams& stab() const { return stab_; }

  int n_elements() const { return mesh_.n_elements(); }
  int n_modes() const { return basis_.size(); }
  /// 4(k+1)
  int local_size() const { return 4 * n_modes(); }
  /// 3, or 2 when beta == 0 (u_hat, v_hat only).
  int trace_components() const { return config_.ostrovsky_hunter() ? 2 : 3; }
  int n_trace_nodes() const;
  int n_free_blocks() const;
  int n_free_traces() const { return n_free_blocks() * trace_components(); }

  int left_node(int e) const { return e; }
  int right_node(int e) const;
  /// Block index of a trace node, or nullopt for Dirichlet boundary nodes.
  std::optional<int> block_of_node(int node) const;

  /// Incoming traces of every element, in the order used by local Jacobians.
  std::span<const TraceSlot> incoming_slots() const { return slots_; }
  int n_incoming() const { return static_cast<int>(slots_.size()); }

  /// Trace values at the Dirichlet nodes for time t.
  void apply_boundary_data(TraceState& traces, double t) const;
  /// Boundary entries set to the convex combination (1-theta) data(t0) + theta data(t1).
  void apply_boundary_data(TraceState& traces, double t0, double t1, double theta) const;

  double trace_value(const TraceState& traces, int node, TraceComponent c) const;
  double& trace_value(TraceState& traces, int node, TraceComponent c) const;

  /// Incoming trace values of element e, ordered as incoming_slots().
  std::array<double, 4> gather_traces(const TraceState& traces, int e) const;

  /// Free traces packed block by block (node-major, component-minor).
  std::vector<double> pack_free_traces(const TraceState& traces) const;
  void unpack_free_traces(std::span<const double> packed, TraceState& traces) const;

 private:
  Mesh mesh_;
  Basis basis_;
  ProblemConfig config_;
  StabParams stab_;
  std::vector<TraceSlot> slots_;
};

/// Which residual the element kernel evaluates.
enum class ElementMode {
  /// Spatial HDG terms minus the source.
  spatial,
  /// Theta step solved for the intermediate level w^{n+theta}:
  /// u-rows are M (u - u_prev) + theta dt (spatial - source).
  theta_step,
  /// u fixed at u_prev; u_hat set to the average of the one-sided traces.
  aux_init,
};

struct ElementOptions {
  ElementMode mode = ElementMode::spatial;
  double time = 0.0;
  double theta_dt = 0.0;
  const FieldCoeffs* u_prev = nullptr;
};

/// Residuals and derivatives of one element.
///
/// Local unknowns are ordered (u, v, p, q), each with k+1 Legendre modes.
/// trace_residual holds the element's contributions to the transmission
/// equations at its left node (first b entries) and right node (last b).
struct ElementEvaluation {
  std::vector<double> residual;
  std::vector<double> trace_residual;
  DenseMatrix d_residual_d_local;
  DenseMatrix d_residual_d_trace;
  DenseMatrix d_trace_d_local;
  DenseMatrix d_trace_d_trace;
};

ElementEvaluation evaluate_element(const HdgDiscretization& disc, int e, const FieldState& state,
                                   std::span<const double> incoming, const ElementOptions& options,
                                   bool with_jacobian = true);

/// Local HDG residual (spatial terms and source) of element e, length 4(k+1).
std::vector<double> local_residual(const HdgDiscretization& disc, int e, const FieldState& state,
                                   std::span<const double> incoming, double time);

/// d residual / d(local coefficients, incoming traces): 4(k+1) x (4(k+1) + n_incoming).
DenseMatrix local_jacobian(const HdgDiscretization& disc, int e, const FieldState& state,
                           std::span<const double> incoming, double time);

/// Statically condensed Newton system on the free traces.
struct CondensedBlocks {
  /// Jacobian of the transmission equations on the free traces; rhs is
  /// minus the condensed residual.
  BlockTridiagonalSystem system;
  std::vector<LuFactorization> local_lu;
  /// A_e^{-1} B_e per element (local x incoming).
  std::vector<DenseMatrix> local_coupling;
  /// A_e^{-1} R_e per element.
  std::vector<std::vector<double>> local_rhs;
  /// Packed free-trace index of each incoming trace, -1 if fixed.
  std::vector<std::array<int, 4>> trace_index;
  /// Infinity norm of the uncondensed residual at the linearization point.
  double residual_norm = 0.0;
  /// Identifies the linearization point; recover_local checks it.
  std::uint64_t tag = 0;

  bool empty() const { return local_lu.empty(); }
};

/// Pin applied to the condensed system (periodic gauge of v).
struct TracePin {
  int node;
  TraceComponent component;
  double value;
};

/// Linearize every element at (state, traces) and eliminate the element
/// unknowns. Throws SingularElementError naming a singular element block.
CondensedBlocks condense(const HdgDiscretization& disc, const FieldState& state,
                         const TraceState& traces, const ElementOptions& options,
                         std::optional<TracePin> pin = std::nullopt);

/// Element updates for a free-trace update; returns one vector of length
/// 4(k+1) per element such that the full linearized system is satisfied.
std::vector<std::vector<double>> recover_local(std::span<const double> trace_update,
                                               const CondensedBlocks& blocks);

/// Apply local and trace updates (scaled by step) to state/traces.
void apply_update(const HdgDiscretization& disc, std::span<const std::vector<double>> local_update,
                  std::span<const double> trace_update, double step, FieldState& state,
                  TraceState& traces);

/// Full residual (local equations and transmission rows), infinity norm.
double residual_norm(const HdgDiscretization& disc, const FieldState& state,
                     const TraceState& traces, const ElementOptions& options,
                     std::optional<TracePin> pin = std::nullopt);

/// Consistent (v, p, q) and traces for a given u at time t, from the HDG
/// forms of q = u_x, p = beta q_x, v_x = u. In the periodic regime v is
/// shifted to zero mean after the pinned solve.
struct InitialFields {
  FieldState state;
  TraceState traces;
};
InitialFields init_aux_fields(const HdgDiscretization& disc, const FieldCoeffs& u0, double time = 0.0);

}  // namespace ostrovsky
