#pragma once

#include <functional>
#include <span>
#include <vector>

namespace ostrovsky {

using PointFunction = std::function<double(double)>;

/// Gauss-Legendre nodes and weights on [-1, 1].
struct QuadRule {
  std::vector<double> points;
  std::vector<double> weights;

  int size() const { return static_cast<int>(points.size()); }
};

/// n-point Gauss-Legendre rule, exact for polynomials of degree 2n-1. 1 <= n <= 32.
QuadRule gauss_legendre_rule(int n);

struct LegendreValue {
  double value;
  double derivative;
};

/// P_degree and P_degree' at xi via the three-term recurrence.
LegendreValue legendre_eval(int degree, double xi);

/// Partition x_0 < x_1 < ... < x_N of [x_left, x_right].
///
/// Element e (0-based) is (x_e, x_{e+1}); the outward normal is -1 at its left
/// node and +1 at its right node. In periodic meshes node N is identified
/// with node 0.
class Mesh {
 public:
  static Mesh uniform(double x_left, double x_right, int n_elements, bool periodic);
  static Mesh from_nodes(std::vector<double> nodes, bool periodic);

  int n_elements() const { return static_cast<int>(sizes_.size()); }
  double x_left() const { return nodes_.front(); }
  double x_right() const { return nodes_.back(); }
  double length() const { return x_right() - x_left(); }
  bool periodic() const { return periodic_; }
  /// max element size
  double h() const { return h_; }

  std::span<const double> nodes() const { return nodes_; }
  std::span<const double> element_sizes() const { return sizes_; }
  double element_size(int e) const;

  double to_physical(int e, double xi) const;
  double to_reference(int e, double x) const;
  /// Element containing x (periodic meshes wrap x into the domain first).
  int locate(double x) const;
  /// x wrapped into [x_left, x_right) for periodic meshes; unchanged otherwise.
  double wrap(double x) const;

 private:
  Mesh(std::vector<double> nodes, bool periodic);

  std::vector<double> nodes_;
  std::vector<double> sizes_;
  double h_ = 0.0;
  bool periodic_ = false;
};

Mesh build_mesh(double x_left, double x_right, int n_elements, bool periodic);

/// Legendre modal basis P_0..P_k on the reference element, tabulated at the
/// Gauss points of the scheme quadrature (k+3 points unless overridden).
class Basis {
 public:
  explicit Basis(int degree, int quad_points = 0);

  int degree() const { return degree_; }
  int size() const { return degree_ + 1; }
  const QuadRule& quad() const { return quad_; }

  double value(int q, int j) const { return values_[q * size() + j]; }
  double derivative(int q, int j) const { return derivs_[q * size() + j]; }

  /// P_j(-1) and P_j(+1).
  double left(int j) const { return (j % 2 == 0) ? 1.0 : -1.0; }
  double right(int) const { return 1.0; }

  /// (P_j, P_j) over a physical element of length h.
  double mass(int j, double h) const { return h / (2.0 * j + 1.0); }

 private:
  int degree_;
  QuadRule quad_;
  std::vector<double> values_;
  std::vector<double> derivs_;
};

/// Modal coefficients of one scalar field, n_modes per element.
class FieldCoeffs {
 public:
  FieldCoeffs() = default;
  FieldCoeffs(int n_elements, int n_modes)
      : n_elements_(n_elements), n_modes_(n_modes),
        data_(static_cast<std::size_t>(n_elements) * n_modes, 0.0) {}

  int n_elements() const { return n_elements_; }
  int n_modes() const { return n_modes_; }

  std::span<double> element(int e);
  std::span<const double> element(int e) const;
  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  bool operator==(const FieldCoeffs&) const = default;

 private:
  int n_elements_ = 0;
  int n_modes_ = 0;
  std::vector<double> data_;
};

FieldCoeffs l2_project(const PointFunction& f, const Mesh& mesh, const Basis& basis);

/// Value of the field on element e at reference coordinate xi.
double eval_field(const FieldCoeffs& coeffs, int e, double xi);
/// Derivative with respect to the reference coordinate.
double eval_field_derivative(const FieldCoeffs& coeffs, int e, double xi);
/// Value at a physical point; at nodes the element to the right wins.
double eval_at(const FieldCoeffs& coeffs, const Mesh& mesh, double x);

/// sqrt(sum_i int_{I_i} (u_h - exact)^2) with an `oversample`-point Gauss rule.
double l2_error(const FieldCoeffs& coeffs, const PointFunction& exact, const Mesh& mesh,
                const Basis& basis, int oversample);

double l2_norm(const FieldCoeffs& coeffs, const Mesh& mesh);
/// int u_h dx
double integral(const FieldCoeffs& coeffs, const Mesh& mesh);
/// Shift the constant mode so that int u_h dx = 0.
void remove_mean(FieldCoeffs& coeffs, const Mesh& mesh);

}  // namespace ostrovsky
