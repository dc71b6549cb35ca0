#include "ostrovsky/mesh_basis.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "ostrovsky/error.hpp"

namespace ostrovsky {

QuadRule gauss_legendre_rule(int n) {
  if (n < 1 || n > 32) {
    throw ConfigError("gauss_legendre_rule: point count " + std::to_string(n) +
                      " outside [1, 32]");
  }
  QuadRule rule;
  rule.points.resize(n);
  rule.weights.resize(n);
  const int half = (n + 1) / 2;
  for (int i = 0; i < half; ++i) {
    double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    LegendreValue p{};
    for (int it = 0; it < 100; ++it) {
      p = legendre_eval(n, x);
      const double dx = p.value / p.derivative;
      x -= dx;
      if (std::abs(dx) <= 1e-15) break;
    }
    p = legendre_eval(n, x);
    const double w = 2.0 / ((1.0 - x * x) * p.derivative * p.derivative);
    rule.points[i] = -x;
    rule.points[n - 1 - i] = x;
    rule.weights[i] = w;
    rule.weights[n - 1 - i] = w;
  }
  if (n % 2 == 1) rule.points[n / 2] = 0.0;
  return rule;
}

LegendreValue legendre_eval(int degree, double xi) {
  if (degree == 0) return {1.0, 0.0};
  double p_prev = 1.0;
  double p = xi;
  double dp_prev = 0.0;
  double dp = 1.0;
  for (int n = 1; n < degree; ++n) {
    const double p_next = ((2.0 * n + 1.0) * xi * p - n * p_prev) / (n + 1.0);
    // P'_{n+1} = P'_{n-1} + (2n+1) P_n
    const double dp_next = dp_prev + (2.0 * n + 1.0) * p;
    p_prev = p;
    p = p_next;
    dp_prev = dp;
    dp = dp_next;
  }
  return {p, dp};
}

Mesh::Mesh(std::vector<double> nodes, bool periodic)
    : nodes_(std::move(nodes)), periodic_(periodic) {
  if (nodes_.size() < 3) {
    throw ConfigError("mesh needs at least 2 elements");
  }
  sizes_.resize(nodes_.size() - 1);
  for (std::size_t i = 0; i + 1 < nodes_.size(); ++i) {
    sizes_[i] = nodes_[i + 1] - nodes_[i];
    if (!(sizes_[i] > 0.0)) {
      throw ConfigError("mesh nodes must be strictly increasing (element " +
                        std::to_string(i) + ")");
    }
  }
  h_ = *std::max_element(sizes_.begin(), sizes_.end());
}

Mesh Mesh::uniform(double x_left, double x_right, int n_elements, bool periodic) {
  if (n_elements < 2) {
    throw ConfigError("build_mesh: element count must be >= 2, got " +
                      std::to_string(n_elements));
  }
  if (!(x_left < x_right)) {
    throw ConfigError("build_mesh: x_left must be < x_right");
  }
  std::vector<double> nodes(n_elements + 1);
  const double dx = (x_right - x_left) / n_elements;
  for (int i = 0; i <= n_elements; ++i) nodes[i] = x_left + i * dx;
  nodes.back() = x_right;
  return Mesh(std::move(nodes), periodic);
}

Mesh Mesh::from_nodes(std::vector<double> nodes, bool periodic) {
  return Mesh(std::move(nodes), periodic);
}

double Mesh::element_size(int e) const {
  if (e < 0 || e >= n_elements()) {
    throw UsageError("element index " + std::to_string(e) + " out of range");
  }
  return sizes_[e];
}

double Mesh::to_physical(int e, double xi) const {
  return nodes_[e] + 0.5 * (xi + 1.0) * sizes_[e];
}

double Mesh::to_reference(int e, double x) const {
  return 2.0 * (x - nodes_[e]) / sizes_[e] - 1.0;
}

double Mesh::wrap(double x) const {
  if (!periodic_) return x;
  const double len = length();
  double y = std::fmod(x - x_left(), len);
  if (y < 0.0) y += len;
  if (y >= len) y = 0.0;
  return x_left() + y;
}

int Mesh::locate(double x) const {
  const double y = wrap(x);
  auto it = std::upper_bound(nodes_.begin(), nodes_.end(), y);
  int e = static_cast<int>(it - nodes_.begin()) - 1;
  return std::clamp(e, 0, n_elements() - 1);
}

Mesh build_mesh(double x_left, double x_right, int n_elements, bool periodic) {
  return Mesh::uniform(x_left, x_right, n_elements, periodic);
}

Basis::Basis(int degree, int quad_points)
    : degree_(degree), quad_(gauss_legendre_rule(quad_points > 0 ? quad_points : degree + 3)) {
  if (degree < 0 || degree > 12) {
    throw ConfigError("polynomial degree must lie in [0, 12], got " + std::to_string(degree));
  }
  const int nq = quad_.size();
  values_.resize(static_cast<std::size_t>(nq) * size());
  derivs_.resize(values_.size());
  for (int q = 0; q < nq; ++q) {
    for (int j = 0; j < size(); ++j) {
      const auto p = legendre_eval(j, quad_.points[q]);
      values_[q * size() + j] = p.value;
      derivs_[q * size() + j] = p.derivative;
    }
  }
}

std::span<double> FieldCoeffs::element(int e) {
  if (e < 0 || e >= n_elements_) {
    throw UsageError("element index " + std::to_string(e) + " out of range");
  }
  return std::span<double>(data_).subspan(static_cast<std::size_t>(e) * n_modes_, n_modes_);
}

std::span<const double> FieldCoeffs::element(int e) const {
  if (e < 0 || e >= n_elements_) {
    throw UsageError("element index " + std::to_string(e) + " out of range");
  }
  return std::span<const double>(data_).subspan(static_cast<std::size_t>(e) * n_modes_, n_modes_);
}

FieldCoeffs l2_project(const PointFunction& f, const Mesh& mesh, const Basis& basis) {
  FieldCoeffs out(mesh.n_elements(), basis.size());
  const auto& quad = basis.quad();
  for (int e = 0; e < mesh.n_elements(); ++e) {
    auto c = out.element(e);
    for (int q = 0; q < quad.size(); ++q) {
      const double fx = f(mesh.to_physical(e, quad.points[q]));
      for (int j = 0; j < basis.size(); ++j) {
        c[j] += quad.weights[q] * fx * basis.value(q, j);
      }
    }
    // (P_j, P_j) on [-1, 1] is 2/(2j+1)
    for (int j = 0; j < basis.size(); ++j) c[j] *= (2.0 * j + 1.0) / 2.0;
  }
  return out;
}

double eval_field(const FieldCoeffs& coeffs, int e, double xi) {
  const auto c = coeffs.element(e);
  if (c.empty()) return 0.0;
  // Clenshaw-free direct recurrence; degrees are small.
  double p_prev = 1.0;
  double p = xi;
  double sum = c[0];
  if (c.size() > 1) sum += c[1] * xi;
  for (std::size_t n = 1; n + 1 < c.size(); ++n) {
    const double p_next = ((2.0 * n + 1.0) * xi * p - n * p_prev) / (n + 1.0);
    sum += c[n + 1] * p_next;
    p_prev = p;
    p = p_next;
  }
  return sum;
}

double eval_field_derivative(const FieldCoeffs& coeffs, int e, double xi) {
  const auto c = coeffs.element(e);
  double sum = 0.0;
  for (std::size_t j = 1; j < c.size(); ++j) {
    sum += c[j] * legendre_eval(static_cast<int>(j), xi).derivative;
  }
  return sum;
}

double eval_at(const FieldCoeffs& coeffs, const Mesh& mesh, double x) {
  const int e = mesh.locate(x);
  const double xi = std::clamp(mesh.to_reference(e, mesh.wrap(x)), -1.0, 1.0);
  return eval_field(coeffs, e, xi);
}

double l2_error(const FieldCoeffs& coeffs, const PointFunction& exact, const Mesh& mesh,
                const Basis& basis, int oversample) {
  if (oversample < basis.degree() + 2) {
    throw ConfigError("l2_error: oversample must be >= k+2");
  }
  const QuadRule rule = gauss_legendre_rule(oversample);
  double sum = 0.0;
  for (int e = 0; e < mesh.n_elements(); ++e) {
    const double jac = 0.5 * mesh.element_size(e);
    for (int q = 0; q < rule.size(); ++q) {
      const double xi = rule.points[q];
      const double diff = eval_field(coeffs, e, xi) - exact(mesh.to_physical(e, xi));
      sum += rule.weights[q] * jac * diff * diff;
    }
  }
  return std::sqrt(sum);
}

double l2_norm(const FieldCoeffs& coeffs, const Mesh& mesh) {
  double sum = 0.0;
  for (int e = 0; e < coeffs.n_elements(); ++e) {
    const auto c = coeffs.element(e);
    const double h = mesh.element_size(e);
    for (std::size_t j = 0; j < c.size(); ++j) sum += h / (2.0 * j + 1.0) * c[j] * c[j];
  }
  return std::sqrt(sum);
}

double integral(const FieldCoeffs& coeffs, const Mesh& mesh) {
  double sum = 0.0;
  for (int e = 0; e < coeffs.n_elements(); ++e) {
    sum += mesh.element_size(e) * coeffs.element(e)[0];
  }
  return sum;
}

void remove_mean(FieldCoeffs& coeffs, const Mesh& mesh) {
  const double mean = integral(coeffs, mesh) / mesh.length();
  for (int e = 0; e < coeffs.n_elements(); ++e) coeffs.element(e)[0] -= mean;
}

}  // namespace ostrovsky
