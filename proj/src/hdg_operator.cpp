#include "ostrovsky/hdg_operator.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <string>

#include "ostrovsky/error.hpp"

namespace ostrovsky {

namespace {

constexpr int kFlux = 0;
constexpr int kV = 1;
constexpr int kQ = 2;

// Row scaling of the p-equation for vanishing dispersion.
double p_row_scale(double beta) {
  const double b = std::abs(beta);
  return (b > 0.0 && b <= 1e-8) ? 1.0 / std::max(b, 1e-8) : 1.0;
}

double eval_data(const TimeFunction& f, double t) { return f ? f(t) : 0.0; }

std::uint64_t fingerprint(const FieldState& state, const TraceState& traces) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](std::span<const double> xs) {
    for (double x : xs) {
      std::uint64_t bits;
      std::memcpy(&bits, &x, sizeof bits);
      h ^= bits;
      h *= 1099511628211ULL;
    }
  };
  mix(state.u.data());
  mix(state.v.data());
  mix(state.p.data());
  mix(state.q.data());
  mix(traces.u_hat);
  mix(traces.v_hat);
  mix(traces.q_hat);
  return h;
}

}  // namespace

const char* to_string(BoundaryRegime regime) {
  switch (regime) {
    case BoundaryRegime::dirichlet_beta_pos: return "dirichlet_beta_pos";
    case BoundaryRegime::dirichlet_beta_neg: return "dirichlet_beta_neg";
    case BoundaryRegime::periodic: return "periodic";
  }
  return "unknown";
}

BoundaryRegime boundary_regime_from_string(const std::string& name) {
  if (name == "dirichlet_beta_pos") return BoundaryRegime::dirichlet_beta_pos;
  if (name == "dirichlet_beta_neg") return BoundaryRegime::dirichlet_beta_neg;
  if (name == "periodic") return BoundaryRegime::periodic;
  throw ConfigError("unknown boundary regime '" + name + "'");
}

void ProblemConfig::validate() const {
  if (!(alpha > 0.0)) throw ConfigError("alpha must be > 0");
  if (!(gamma > 0.0)) throw ConfigError("gamma must be > 0");
  if (!std::isfinite(beta)) throw ConfigError("beta must be finite");
  if (beta == 0.0 && !degenerate_dispersion) {
    throw ConfigError("beta = 0 requires the degenerate-dispersion option");
  }
  switch (regime) {
    case BoundaryRegime::dirichlet_beta_pos:
      if (beta < 0.0) throw ConfigError("bc_regime dirichlet_beta_pos requires beta > 0");
      break;
    case BoundaryRegime::dirichlet_beta_neg:
      if (!(beta < 0.0)) throw ConfigError("bc_regime dirichlet_beta_neg requires beta < 0");
      break;
    case BoundaryRegime::periodic:
      if (beta < 0.0) throw ConfigError("bc_regime periodic requires beta >= 0");
      break;
  }
}

StabParams StabParams::defaults(double beta, double gamma) {
  StabParams s;
  s.tau_pu = 2.0;
  s.tau_f_mode = TauFMode::constant;
  s.tau_f = 2.0;
  const double b = std::abs(beta);
  s.tau_vq = 0.9 * std::sqrt(b / gamma);
  s.tau_qv = b > 0.0 ? 0.9 * std::sqrt(gamma / b) : 0.0;
  return s;
}

StabParams StabParams::conservative(double beta, double gamma) {
  if (!(beta > 0.0) || !(gamma > 0.0)) {
    throw ConfigError("conservative stabilization requires beta > 0 and gamma > 0");
  }
  StabParams s;
  s.tau_pu = 0.0;
  s.tau_vq = std::sqrt(beta / gamma);
  s.tau_qv = std::sqrt(gamma / beta);
  s.tau_f_mode = TauFMode::adaptive;
  s.tau_f = 0.0;
  return s;
}

void StabParams::validate(const ProblemConfig& config) const {
  if (tau_pu < 0.0 || tau_vq < 0.0 || tau_qv < 0.0) {
    throw ConfigError("stabilization parameters must be nonnegative");
  }
  if (tau_f_mode == TauFMode::constant && !std::isfinite(tau_f)) {
    throw ConfigError("tau_f must be finite");
  }
  if (config.beta > 0.0) {
    // beta/2 - gamma/2 tau_vq^2 >= 0 and gamma/2 - beta/2 tau_qv^2 >= 0
    const double tol = 1e-12;
    if (config.beta - config.gamma * tau_vq * tau_vq < -tol * config.beta ||
        config.gamma - config.beta * tau_qv * tau_qv < -tol * config.gamma) {
      throw ConfigError("tau_vq/tau_qv violate the stability conditions for beta > 0");
    }
  }
}

bool StabParams::is_conservative(const ProblemConfig& config, double rel_tol) const {
  if (!(config.beta > 0.0) || !(config.gamma > 0.0)) return false;
  auto close = [rel_tol](double a, double b) { return std::abs(a - b) <= rel_tol * std::abs(b); };
  return tau_pu == 0.0 && tau_f_mode == TauFMode::adaptive &&
         close(tau_vq, std::sqrt(config.beta / config.gamma)) &&
         close(tau_qv, std::sqrt(config.gamma / config.beta));
}

double tilde_tau(double u_minus, double u_hat, double n, double alpha) {
  return -alpha * n * (u_hat + 2.0 * u_minus) / 6.0;
}

double resolve_tau_f(const StabParams& stab, double u_minus, double u_hat, double n, double alpha) {
  if (stab.tau_f_mode == TauFMode::constant) return stab.tau_f;
  if (u_hat == u_minus) return std::abs(alpha * u_minus);
  return tilde_tau(u_minus, u_hat, n, alpha);
}

FieldState FieldState::zeros(int n_elements, int n_modes, double time) {
  FieldState s;
  s.u = FieldCoeffs(n_elements, n_modes);
  s.v = FieldCoeffs(n_elements, n_modes);
  s.p = FieldCoeffs(n_elements, n_modes);
  s.q = FieldCoeffs(n_elements, n_modes);
  s.time = time;
  return s;
}

TraceState TraceState::zeros(int n_nodes) {
  TraceState t;
  t.u_hat.assign(n_nodes, 0.0);
  t.v_hat.assign(n_nodes, 0.0);
  t.q_hat.assign(n_nodes, 0.0);
  return t;
}

HdgDiscretization::HdgDiscretization(Mesh mesh, Basis basis, ProblemConfig config, StabParams stab)
    : mesh_(std::move(mesh)), basis_(std::move(basis)), config_(std::move(config)), stab_(stab) {
  config_.validate();
  stab_.validate(config_);
  if ((config_.regime == BoundaryRegime::periodic) != mesh_.periodic()) {
    throw ConfigError("mesh periodicity does not match the boundary regime");
  }
  slots_ = {{Side::left, TraceComponent::u}, {Side::right, TraceComponent::u},
            {Side::right, TraceComponent::v}};
  if (!config_.ostrovsky_hunter()) {
    slots_.push_back({config_.beta > 0.0 ? Side::left : Side::right, TraceComponent::q});
  }
}

int HdgDiscretization::n_trace_nodes() const {
  return mesh_.periodic() ? n_elements() : n_elements() + 1;
}

int HdgDiscretization::n_free_blocks() const {
  return mesh_.periodic() ? n_elements() : n_elements() - 1;
}

int HdgDiscretization::right_node(int e) const {
  return (mesh_.periodic() && e == n_elements() - 1) ? 0 : e + 1;
}

std::optional<int> HdgDiscretization::block_of_node(int node) const {
  if (mesh_.periodic()) return node;
  if (node <= 0 || node >= n_elements()) return std::nullopt;
  return node - 1;
}

double HdgDiscretization::trace_value(const TraceState& traces, int node, TraceComponent c) const {
  switch (c) {
    case TraceComponent::u: return traces.u_hat[node];
    case TraceComponent::v: return traces.v_hat[node];
    case TraceComponent::q: return traces.q_hat[node];
  }
  return 0.0;
}

double& HdgDiscretization::trace_value(TraceState& traces, int node, TraceComponent c) const {
  switch (c) {
    case TraceComponent::u: return traces.u_hat[node];
    case TraceComponent::v: return traces.v_hat[node];
    case TraceComponent::q: break;
  }
  return traces.q_hat[node];
}

void HdgDiscretization::apply_boundary_data(TraceState& traces, double t) const {
  apply_boundary_data(traces, t, t, 1.0);
}

void HdgDiscretization::apply_boundary_data(TraceState& traces, double t0, double t1,
                                            double theta) const {
  if (mesh_.periodic()) return;
  const auto& bc = config_.bc;
  auto mix = [&](const TimeFunction& f) {
    return (1.0 - theta) * eval_data(f, t0) + theta * eval_data(f, t1);
  };
  const int last = n_elements();
  traces.u_hat[0] = mix(bc.u_left);
  traces.u_hat[last] = mix(bc.u_right);
  traces.v_hat[last] = mix(bc.v_right);
  if (config_.beta > 0.0) traces.q_hat[0] = mix(bc.q_left);
  if (config_.beta < 0.0) traces.q_hat[last] = mix(bc.q_right);
}

std::array<double, 4> HdgDiscretization::gather_traces(const TraceState& traces, int e) const {
  std::array<double, 4> out{};
  for (std::size_t l = 0; l < slots_.size(); ++l) {
    const int node = slots_[l].side == Side::left ? left_node(e) : right_node(e);
    out[l] = trace_value(traces, node, slots_[l].component);
  }
  return out;
}

std::vector<double> HdgDiscretization::pack_free_traces(const TraceState& traces) const {
  const int b = trace_components();
  std::vector<double> out(n_free_traces());
  for (int node = 0; node < n_trace_nodes(); ++node) {
    const auto blk = block_of_node(node);
    if (!blk) continue;
    for (int c = 0; c < b; ++c) {
      out[*blk * b + c] = trace_value(traces, node, static_cast<TraceComponent>(c));
    }
  }
  return out;
}

void HdgDiscretization::unpack_free_traces(std::span<const double> packed, TraceState& traces) const {
  if (static_cast<int>(packed.size()) != n_free_traces()) {
    throw UsageError("unpack_free_traces: length mismatch");
  }
  const int b = trace_components();
  for (int node = 0; node < n_trace_nodes(); ++node) {
    const auto blk = block_of_node(node);
    if (!blk) continue;
    for (int c = 0; c < b; ++c) {
      trace_value(traces, node, static_cast<TraceComponent>(c)) = packed[*blk * b + c];
    }
  }
}

ElementEvaluation evaluate_element(const HdgDiscretization& disc, int e, const FieldState& state,
                                   std::span<const double> incoming, const ElementOptions& options,
                                   bool with_jacobian) {
  const auto& cfg = disc.config();
  const auto& stab = disc.stab();
  const auto& basis = disc.basis();
  const auto& quad = basis.quad();
  const auto& mesh = disc.mesh();
  const int m = basis.size();
  const int nl = 4 * m;
  const int b = disc.trace_components();
  const int ni = disc.n_incoming();
  if (e < 0 || e >= disc.n_elements()) throw UsageError("element index out of range");
  if (static_cast<int>(incoming.size()) != ni) {
    throw UsageError("evaluate_element: expected " + std::to_string(ni) + " incoming traces");
  }
  if (state.u.n_modes() != m || state.u.n_elements() != disc.n_elements()) {
    throw UsageError("evaluate_element: field dimensions do not match the discretization");
  }
  if (options.mode != ElementMode::spatial && options.u_prev == nullptr) {
    throw UsageError("evaluate_element: mode requires u_prev");
  }

  const int U = 0, V = m, P = 2 * m, Q = 3 * m;
  const double h = mesh.element_size(e);
  const auto uc = state.u.element(e);
  const auto vc = state.v.element(e);
  const auto pc = state.p.element(e);
  const auto qc = state.q.element(e);

  std::vector<double> L(m), R(m, 1.0), M(m);
  for (int j = 0; j < m; ++j) {
    L[j] = basis.left(j);
    M[j] = basis.mass(j, h);
  }
  auto dot = [m](const std::vector<double>& a, std::span<const double> c) {
    double s = 0.0;
    for (int j = 0; j < m; ++j) s += a[j] * c[j];
    return s;
  };
  const double u_a = dot(L, uc), u_b = dot(R, uc);
  const double v_a = dot(L, vc), v_b = dot(R, vc);
  const double p_a = dot(L, pc), p_b = dot(R, pc);
  const double q_a = dot(L, qc), q_b = dot(R, qc);

  const double uh_a = incoming[0];
  const double uh_b = incoming[1];
  const double vh_b = incoming[2];
  const double qh_in = ni > 3 ? incoming[3] : 0.0;
  const bool beta_pos = cfg.beta > 0.0;
  const bool beta_neg = cfg.beta < 0.0;
  const double beta = cfg.beta;
  const double ps = p_row_scale(beta);

  // (p_hat - f_hat) = p - f(u) + G,  G = (tau_pu + tau_f)(u_hat - u) n
  struct FluxTrace {
    double value, d_u, d_uhat;
  };
  auto flux_trace = [&](double p_val, double u_val, double uh, double n) {
    const double tf = resolve_tau_f(stab, u_val, uh, n, cfg.alpha);
    double dtf_du = 0.0, dtf_duh = 0.0;
    if (stab.tau_f_mode == TauFMode::adaptive && uh != u_val) {
      dtf_duh = -cfg.alpha * n / 6.0;
      dtf_du = -cfg.alpha * n / 3.0;
    }
    const double diff = uh - u_val;
    const double g = (stab.tau_pu + tf) * diff * n;
    const double dg_du = n * (-(stab.tau_pu + tf) + diff * dtf_du);
    const double dg_duh = n * ((stab.tau_pu + tf) + diff * dtf_duh);
    return FluxTrace{p_val - cfg.flux(u_val) + g, -cfg.flux_derivative(u_val) + dg_du, dg_duh};
  };
  const FluxTrace Fa = flux_trace(p_a, u_a, uh_a, -1.0);
  const FluxTrace Fb = flux_trace(p_b, u_b, uh_b, +1.0);

  // Derived traces.
  double vh_a = v_a;
  double qh_a = 0.0, qh_b = 0.0;
  if (beta_pos) {
    vh_a = v_a - stab.tau_vq * (qh_in - q_a);
    qh_a = qh_in;
    qh_b = q_b + stab.tau_qv * (vh_b - v_b);
  } else if (beta_neg) {
    qh_a = q_a;
    qh_b = qh_in;
  }

  // Quadrature values of u and the source.
  const int nq = quad.size();
  std::vector<double> uq(nq, 0.0), gq(nq, 0.0);
  for (int q = 0; q < nq; ++q) {
    double s = 0.0;
    for (int j = 0; j < m; ++j) s += uc[j] * basis.value(q, j);
    uq[q] = s;
    if (cfg.source) gq[q] = cfg.source(mesh.to_physical(e, quad.points[q]), options.time);
  }

  // K[i][j] = (phi_j, d_x phi_i), independent of h.
  std::vector<double> K(static_cast<std::size_t>(m) * m, 0.0);
  for (int q = 0; q < nq; ++q) {
    for (int i = 0; i < m; ++i) {
      const double wd = quad.weights[q] * basis.derivative(q, i);
      for (int j = 0; j < m; ++j) K[i * m + j] += wd * basis.value(q, j);
    }
  }

  ElementEvaluation ev;
  ev.residual.assign(nl, 0.0);
  ev.trace_residual.assign(2 * b, 0.0);
  auto& res = ev.residual;
  auto& tr = ev.trace_residual;

  // Spatial u-equation terms.
  std::vector<double> su(m, 0.0);
  for (int i = 0; i < m; ++i) {
    double s = 0.0;
    for (int j = 0; j < m; ++j) s += K[i * m + j] * pc[j];
    double flux_int = 0.0, src = 0.0;
    for (int q = 0; q < nq; ++q) {
      flux_int += quad.weights[q] * cfg.flux(uq[q]) * basis.derivative(q, i);
      src += quad.weights[q] * gq[q] * basis.value(q, i);
    }
    s -= flux_int;
    s -= cfg.gamma * M[i] * vc[i];
    s -= Fb.value * R[i] - Fa.value * L[i];
    s -= 0.5 * h * src;
    su[i] = s;
  }

  for (int i = 0; i < m; ++i) {
    switch (options.mode) {
      case ElementMode::spatial: res[U + i] = su[i]; break;
      case ElementMode::theta_step:
        res[U + i] = M[i] * (uc[i] - options.u_prev->element(e)[i]) + options.theta_dt * su[i];
        break;
      case ElementMode::aux_init:
        res[U + i] = M[i] * (uc[i] - options.u_prev->element(e)[i]);
        break;
    }
    double rv = -M[i] * uc[i] + vh_b * R[i] - vh_a * L[i];
    double rp = M[i] * pc[i];
    double rq = M[i] * qc[i] - (uh_b * R[i] - uh_a * L[i]);
    for (int j = 0; j < m; ++j) {
      rv -= K[i * m + j] * vc[j];
      rp += beta * K[i * m + j] * qc[j];
      rq += K[i * m + j] * uc[j];
    }
    rp -= beta * (qh_b * R[i] - qh_a * L[i]);
    res[V + i] = rv;
    res[P + i] = ps * rp;
    res[Q + i] = rq;
  }

  if (options.mode == ElementMode::aux_init) {
    tr[kFlux] = 0.5 * (uh_a - u_a);
    tr[b + kFlux] = 0.5 * (uh_b - u_b);
  } else {
    tr[kFlux] = -Fa.value;
    tr[b + kFlux] = Fb.value;
  }
  tr[kV] = vh_a;
  tr[b + kV] = -vh_b;
  if (beta_pos) {
    tr[kQ] = -qh_in;
    tr[b + kQ] = qh_b;
  } else if (beta_neg) {
    tr[kQ] = q_a;
    tr[b + kQ] = -qh_in;
  }

  if (!with_jacobian) return ev;

  DenseMatrix A(nl, nl), B(nl, ni), C(2 * b, nl), E(2 * b, ni);

  // u rows (spatial part first, then mode transform).
  const double ut_scale = options.mode == ElementMode::theta_step ? options.theta_dt : 1.0;
  if (options.mode != ElementMode::aux_init) {
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < m; ++j) {
        A(U + i, P + j) += ut_scale * (K[i * m + j] - (R[j] * R[i] - L[j] * L[i]));
        double nl_term = 0.0;
        for (int q = 0; q < nq; ++q) {
          nl_term += quad.weights[q] * cfg.flux_derivative(uq[q]) * basis.value(q, j) *
                     basis.derivative(q, i);
        }
        A(U + i, U + j) += ut_scale * (-nl_term - (Fb.d_u * R[j] * R[i] - Fa.d_u * L[j] * L[i]));
      }
      A(U + i, V + i) += ut_scale * (-cfg.gamma * M[i]);
      B(U + i, 0) += ut_scale * Fa.d_uhat * L[i];
      B(U + i, 1) += ut_scale * (-Fb.d_uhat * R[i]);
    }
  }
  if (options.mode != ElementMode::spatial) {
    for (int i = 0; i < m; ++i) A(U + i, U + i) += M[i];
  }

  for (int i = 0; i < m; ++i) {
    // v rows
    A(V + i, U + i) += -M[i];
    B(V + i, 2) += R[i];
    for (int j = 0; j < m; ++j) {
      A(V + i, V + j) += -K[i * m + j] - L[j] * L[i];
      if (beta_pos) A(V + i, Q + j) += -stab.tau_vq * L[j] * L[i];
    }
    if (beta_pos) B(V + i, 3) += stab.tau_vq * L[i];

    // p rows
    A(P + i, P + i) += ps * M[i];
    if (beta != 0.0) {
      for (int j = 0; j < m; ++j) A(P + i, Q + j) += ps * beta * K[i * m + j];
    }
    if (beta_pos) {
      B(P + i, 3) += ps * beta * L[i];
      for (int j = 0; j < m; ++j) {
        A(P + i, Q + j) += -ps * beta * R[j] * R[i];
        A(P + i, V + j) += ps * beta * stab.tau_qv * R[j] * R[i];
      }
      B(P + i, 2) += -ps * beta * stab.tau_qv * R[i];
    } else if (beta_neg) {
      B(P + i, 3) += -ps * beta * R[i];
      for (int j = 0; j < m; ++j) A(P + i, Q + j) += ps * beta * L[j] * L[i];
    }

    // q rows
    A(Q + i, Q + i) += M[i];
    for (int j = 0; j < m; ++j) A(Q + i, U + j) += K[i * m + j];
    B(Q + i, 1) += -R[i];
    B(Q + i, 0) += L[i];
  }

  // Trace rows.
  for (int j = 0; j < m; ++j) {
    if (options.mode == ElementMode::aux_init) {
      C(kFlux, U + j) = -0.5 * L[j];
      C(b + kFlux, U + j) = -0.5 * R[j];
    } else {
      C(kFlux, P + j) = -L[j];
      C(kFlux, U + j) = -Fa.d_u * L[j];
      C(b + kFlux, P + j) = R[j];
      C(b + kFlux, U + j) = Fb.d_u * R[j];
    }
    C(kV, V + j) = L[j];
    if (beta_pos) {
      C(kV, Q + j) = stab.tau_vq * L[j];
      C(b + kQ, Q + j) = R[j];
      C(b + kQ, V + j) = -stab.tau_qv * R[j];
    } else if (beta_neg) {
      C(kQ, Q + j) = L[j];
    }
  }
  if (options.mode == ElementMode::aux_init) {
    E(kFlux, 0) = 0.5;
    E(b + kFlux, 1) = 0.5;
  } else {
    E(kFlux, 0) = -Fa.d_uhat;
    E(b + kFlux, 1) = Fb.d_uhat;
  }
  E(b + kV, 2) = -1.0;
  if (beta_pos) {
    E(kV, 3) = -stab.tau_vq;
    E(kQ, 3) = -1.0;
    E(b + kQ, 2) = stab.tau_qv;
  } else if (beta_neg) {
    E(b + kQ, 3) = -1.0;
  }

  ev.d_residual_d_local = std::move(A);
  ev.d_residual_d_trace = std::move(B);
  ev.d_trace_d_local = std::move(C);
  ev.d_trace_d_trace = std::move(E);
  return ev;
}

std::vector<double> local_residual(const HdgDiscretization& disc, int e, const FieldState& state,
                                   std::span<const double> incoming, double time) {
  ElementOptions opts;
  opts.time = time;
  return evaluate_element(disc, e, state, incoming, opts, false).residual;
}

DenseMatrix local_jacobian(const HdgDiscretization& disc, int e, const FieldState& state,
                           std::span<const double> incoming, double time) {
  ElementOptions opts;
  opts.time = time;
  const auto ev = evaluate_element(disc, e, state, incoming, opts, true);
  const std::size_t nl = ev.d_residual_d_local.rows();
  const std::size_t ni = ev.d_residual_d_trace.cols();
  DenseMatrix J(nl, nl + ni);
  for (std::size_t i = 0; i < nl; ++i) {
    for (std::size_t j = 0; j < nl; ++j) J(i, j) = ev.d_residual_d_local(i, j);
    for (std::size_t j = 0; j < ni; ++j) J(i, nl + j) = ev.d_residual_d_trace(i, j);
  }
  return J;
}

namespace {

struct RowTarget {
  int block;  // -1: not a free row
  int comp;
};

/// Free-trace index for each incoming trace slot of element e.
std::array<int, 4> incoming_indices(const HdgDiscretization& disc, int e) {
  std::array<int, 4> idx{-1, -1, -1, -1};
  const int b = disc.trace_components();
  const auto slots = disc.incoming_slots();
  for (std::size_t l = 0; l < slots.size(); ++l) {
    const int node = slots[l].side == Side::left ? disc.left_node(e) : disc.right_node(e);
    if (auto blk = disc.block_of_node(node)) idx[l] = *blk * b + static_cast<int>(slots[l].component);
  }
  return idx;
}

DenseMatrix& block_at(BlockTridiagonalSystem& sys, int row_block, int col_block, bool wrap_element) {
  const int m = static_cast<int>(sys.n_blocks);
  if (row_block == col_block) return sys.diag[row_block];
  if (wrap_element) {
    // Coupling across the periodic seam x_0 == x_N.
    return (row_block == 0) ? sys.corner_top_right : sys.corner_bottom_left;
  }
  if (col_block == row_block + 1) return sys.upper[row_block];
  if (row_block == col_block + 1) return sys.lower[col_block];
  (void)m;
  throw UsageError("trace coupling outside the block-tridiagonal pattern");
}

void apply_pin(const HdgDiscretization& disc, BlockTridiagonalSystem& sys, const TraceState& traces,
               const TracePin& pin) {
  const int b = disc.trace_components();
  const auto blk = disc.block_of_node(pin.node);
  if (!blk) throw UsageError("trace pin on a fixed node");
  const int rb = *blk;
  const int c = static_cast<int>(pin.component);
  const int m = static_cast<int>(sys.n_blocks);
  auto zero_row = [&](DenseMatrix& mat) {
    if (mat.empty()) return;
    for (int j = 0; j < b; ++j) mat(c, j) = 0.0;
  };
  zero_row(sys.diag[rb]);
  if (rb + 1 < m) zero_row(sys.upper[rb]);
  if (rb > 0) zero_row(sys.lower[rb - 1]);
  if (sys.periodic && rb == 0) zero_row(sys.corner_top_right);
  if (sys.periodic && rb == m - 1) zero_row(sys.corner_bottom_left);
  sys.diag[rb](c, c) = 1.0;
  sys.rhs[rb * b + c] = -(disc.trace_value(traces, pin.node, pin.component) - pin.value);
}

std::atomic<std::uint64_t> g_condense_counter{0};

}  // namespace

CondensedBlocks condense(const HdgDiscretization& disc, const FieldState& state,
                         const TraceState& traces, const ElementOptions& options,
                         std::optional<TracePin> pin) {
  const int b = disc.trace_components();
  const int ne = disc.n_elements();
  const bool periodic = disc.mesh().periodic();
  const int ni = disc.n_incoming();

  CondensedBlocks out;
  out.system = BlockTridiagonalSystem::zeros(b, disc.n_free_blocks(), periodic);
  out.local_lu.reserve(ne);
  out.local_coupling.reserve(ne);
  out.local_rhs.reserve(ne);
  out.trace_index.reserve(ne);
  std::vector<double> free_residual(disc.n_free_traces(), 0.0);
  double local_norm = 0.0;

  for (int e = 0; e < ne; ++e) {
    const auto lam = disc.gather_traces(traces, e);
    auto ev = evaluate_element(disc, e, state, std::span<const double>(lam.data(), ni), options);
    for (double r : ev.residual) local_norm = std::max(local_norm, std::abs(r));

    LuFactorization lu;
    try {
      lu = LuFactorization(ev.d_residual_d_local);
    } catch (const SingularMatrixError&) {
      throw SingularElementError("condense: singular local block on element " + std::to_string(e), e);
    }
    DenseMatrix coupling = lu.solve(ev.d_residual_d_trace);
    std::vector<double> local_rhs = lu.solve(ev.residual);

    // S = E - C A^{-1} B,  r = T - C A^{-1} R
    DenseMatrix schur = ev.d_trace_d_trace;
    schur -= ev.d_trace_d_local * coupling;
    std::vector<double> cr = ev.d_trace_d_local * std::span<const double>(local_rhs);

    const std::array<int, 2> nodes{disc.left_node(e), disc.right_node(e)};
    const auto idx = incoming_indices(disc, e);
    const bool wrap = periodic && e == ne - 1;
    for (int side = 0; side < 2; ++side) {
      const auto rblk = disc.block_of_node(nodes[side]);
      if (!rblk) continue;
      for (int c = 0; c < b; ++c) {
        const int row = side * b + c;
        free_residual[*rblk * b + c] += ev.trace_residual[row];
        out.system.rhs[*rblk * b + c] -= ev.trace_residual[row] - cr[row];
        for (int l = 0; l < ni; ++l) {
          if (idx[l] < 0) continue;
          const int cblk = idx[l] / b;
          const int cc = idx[l] % b;
          block_at(out.system, *rblk, cblk, wrap && *rblk != cblk)(c, cc) += schur(row, l);
        }
      }
    }

    out.local_lu.push_back(std::move(lu));
    out.local_coupling.push_back(std::move(coupling));
    out.local_rhs.push_back(std::move(local_rhs));
    out.trace_index.push_back(idx);
  }

  if (pin) {
    apply_pin(disc, out.system, traces, *pin);
    const int row = *disc.block_of_node(pin->node) * b + static_cast<int>(pin->component);
    free_residual[row] = disc.trace_value(traces, pin->node, pin->component) - pin->value;
  }
  double trace_norm = 0.0;
  for (double r : free_residual) trace_norm = std::max(trace_norm, std::abs(r));
  out.residual_norm = std::max(local_norm, trace_norm);
  out.tag = fingerprint(state, traces) ^ (++g_condense_counter << 1);
  return out;
}

std::vector<std::vector<double>> recover_local(std::span<const double> trace_update,
                                               const CondensedBlocks& blocks) {
  if (blocks.empty()) throw UsageError("recover_local: condensed blocks are empty");
  const std::size_t n_free = blocks.system.block_size * blocks.system.n_blocks;
  if (trace_update.size() != n_free) {
    throw UsageError("recover_local: trace update length " + std::to_string(trace_update.size()) +
                     " does not match " + std::to_string(n_free) + " free traces");
  }
  std::vector<std::vector<double>> out(blocks.local_lu.size());
  for (std::size_t e = 0; e < out.size(); ++e) {
    const auto& cpl = blocks.local_coupling[e];
    const auto& idx = blocks.trace_index[e];
    std::vector<double> dx(cpl.rows());
    for (std::size_t i = 0; i < cpl.rows(); ++i) {
      double s = -blocks.local_rhs[e][i];
      for (std::size_t l = 0; l < cpl.cols(); ++l) {
        if (idx[l] >= 0) s -= cpl(i, l) * trace_update[idx[l]];
      }
      dx[i] = s;
    }
    out[e] = std::move(dx);
  }
  return out;
}

void apply_update(const HdgDiscretization& disc, std::span<const std::vector<double>> local_update,
                  std::span<const double> trace_update, double step, FieldState& state,
                  TraceState& traces) {
  const int m = disc.n_modes();
  for (int e = 0; e < disc.n_elements(); ++e) {
    const auto& dx = local_update[e];
    auto u = state.u.element(e);
    auto v = state.v.element(e);
    auto p = state.p.element(e);
    auto q = state.q.element(e);
    for (int j = 0; j < m; ++j) {
      u[j] += step * dx[j];
      v[j] += step * dx[m + j];
      p[j] += step * dx[2 * m + j];
      q[j] += step * dx[3 * m + j];
    }
  }
  auto packed = disc.pack_free_traces(traces);
  for (std::size_t i = 0; i < packed.size(); ++i) packed[i] += step * trace_update[i];
  disc.unpack_free_traces(packed, traces);
}

double residual_norm(const HdgDiscretization& disc, const FieldState& state,
                     const TraceState& traces, const ElementOptions& options,
                     std::optional<TracePin> pin) {
  const int b = disc.trace_components();
  const int ni = disc.n_incoming();
  std::vector<double> free_residual(disc.n_free_traces(), 0.0);
  double norm = 0.0;
  for (int e = 0; e < disc.n_elements(); ++e) {
    const auto lam = disc.gather_traces(traces, e);
    const auto ev =
        evaluate_element(disc, e, state, std::span<const double>(lam.data(), ni), options, false);
    for (double r : ev.residual) norm = std::max(norm, std::abs(r));
    const std::array<int, 2> nodes{disc.left_node(e), disc.right_node(e)};
    for (int side = 0; side < 2; ++side) {
      const auto blk = disc.block_of_node(nodes[side]);
      if (!blk) continue;
      for (int c = 0; c < b; ++c) free_residual[*blk * b + c] += ev.trace_residual[side * b + c];
    }
  }
  if (pin) {
    const int row = *disc.block_of_node(pin->node) * b + static_cast<int>(pin->component);
    free_residual[row] = disc.trace_value(traces, pin->node, pin->component) - pin->value;
  }
  for (double r : free_residual) norm = std::max(norm, std::abs(r));
  return norm;
}

InitialFields init_aux_fields(const HdgDiscretization& disc, const FieldCoeffs& u0, double time) {
  if (u0.n_elements() != disc.n_elements() || u0.n_modes() != disc.n_modes()) {
    throw UsageError("init_aux_fields: u0 dimensions do not match the discretization");
  }
  InitialFields init;
  init.state = FieldState::zeros(disc.n_elements(), disc.n_modes(), time);
  init.state.u = u0;
  init.traces = TraceState::zeros(disc.n_trace_nodes());
  disc.apply_boundary_data(init.traces, time);

  ElementOptions opts;
  opts.mode = ElementMode::aux_init;
  opts.time = time;
  opts.u_prev = &u0;
  std::optional<TracePin> pin;
  if (disc.mesh().periodic()) pin = TracePin{0, TraceComponent::v, 0.0};

  // With tau_vq tau_qv == 1 on a periodic mesh, a uniform shift of q_hat is
  // a second null direction of this system (the q rows do not see q_hat).
  // Its q transmission row at node 0 is then redundant and is replaced by
  // q_hat_0 = average of the one-sided q values there.
  const auto& cfg = disc.config();
  const auto& stab = disc.stab();
  const bool q_gauge = disc.mesh().periodic() && cfg.beta > 0.0 &&
                       std::abs(stab.tau_vq * stab.tau_qv - 1.0) <= 1e-10;

  auto solve = [&](std::optional<double> q_hat_0) {
    // Linear problem: one solve plus one refinement sweep.
    for (int it = 0; it < 2; ++it) {
      auto blocks = condense(disc, init.state, init.traces, opts, pin);
      if (q_hat_0) apply_pin(disc, blocks.system, init.traces, TracePin{0, TraceComponent::q, *q_hat_0});
      const auto dl = block_tridiag_solve(blocks.system);
      const auto dx = recover_local(dl, blocks);
      apply_update(disc, dx, dl, 1.0, init.state, init.traces);
    }
  };
  if (q_gauge) {
    solve(0.0);
    const int last = disc.n_elements() - 1;
    const auto& basis = disc.basis();
    double q_left = 0.0, q_right = 0.0;
    for (int j = 0; j < disc.n_modes(); ++j) {
      q_left += basis.left(j) * init.state.q.element(0)[j];
      q_right += basis.right(j) * init.state.q.element(last)[j];
    }
    solve(0.5 * (q_left + q_right));
  } else {
    solve(std::nullopt);
  }

  if (disc.mesh().periodic()) {
    const double mean = integral(init.state.v, disc.mesh()) / disc.mesh().length();
    for (int e = 0; e < disc.n_elements(); ++e) init.state.v.element(e)[0] -= mean;
    for (auto& x : init.traces.v_hat) x -= mean;
  }
  return init;
}

}  // namespace ostrovsky
