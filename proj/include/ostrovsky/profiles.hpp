#pragma once

#include <string>
#include <vector>

#include "ostrovsky/hdg_operator.hpp"
#include "ostrovsky/linalg.hpp"
#include "ostrovsky/mesh_basis.hpp"

namespace ostrovsky {

// Smooth manufactured solution on (0, 2 pi):
//   u = e^{-t} sin x, v = e^{-t}(1 - cos x), q = e^{-t} cos x, p = -beta e^{-t} sin x.
struct ManufacturedCase {
  double alpha = 1.0;
  double beta = 0.5;
  double gamma = 1.0;
  double x_left = 0.0;
  double x_right = 6.283185307179586;

  double u(double x, double t) const;
  double v(double x, double t) const;
  double q(double x, double t) const;
  double p(double x, double t) const;
  double source(double x, double t) const;

  /// Dirichlet data matching the exact solution for the sign of beta.
  BoundaryData boundary_data() const;
  ProblemConfig problem_config() const;
};

double manufactured_source(double x, double t, double alpha, double beta, double gamma);

/// beta kappa^2 - c_w + gamma / kappa^2; throws ConfigError at kappa == 0.
double linear_symbol(double kappa, double beta, double gamma, double c_w);

struct PetviashviliConfig {
  double exponent = 2.0;
  double relaxation = 0.8;
  double tolerance = 1e-10;
  int max_iterations = 500;
  /// Consecutive residual increases tolerated before giving up.
  int divergence_window = 20;

  void validate() const;
};

struct SolitaryParams {
  double alpha = 2.0;
  double beta = 1.0;
  double gamma = 0.25;
  double c_w = -0.75;
  double length = 80.0;
  int fourier_points = 512;
};

/// Periodic traveling-wave profile sampled on K points of (0, L), stored so
/// that its extremum sits at x = 0.
class SolitaryProfile {
 public:
  SolitaryProfile(SolitaryParams params, std::vector<double> values, double residual,
                  int iterations, double amplitude_factor, std::vector<double> history);

  const SolitaryParams& params() const { return params_; }
  double length() const { return params_.length; }
  double speed() const { return params_.c_w; }
  int size() const { return static_cast<int>(values_.size()); }
  double grid_point(int j) const { return j * params_.length / size(); }
  const std::vector<double>& values() const { return values_; }
  double residual() const { return residual_; }
  int iterations() const { return iterations_; }
  /// Last amplitude-correction factor M_n.
  double amplitude_factor() const { return amplitude_factor_; }
  const std::vector<double>& residual_history() const { return history_; }
  double max_abs() const;

  /// Trigonometric interpolant at any x (periodic).
  double evaluate(double x) const;
  /// Fourier coefficients divided by K.
  const ComplexVector& coefficients() const { return coeffs_; }

 private:
  SolitaryParams params_;
  std::vector<double> values_;
  ComplexVector coeffs_;
  double residual_;
  int iterations_;
  double amplitude_factor_;
  std::vector<double> history_;
};

/// Fourier residual max |symbol U_hat + F_hat| / K over nonzero modes.
double profile_residual(const SolitaryParams& params, const std::vector<double>& values);

/// Throws PetviashviliError on divergence or iteration exhaustion.
SolitaryProfile petviashvili_solve(const SolitaryParams& params,
                                   const PetviashviliConfig& cfg = {});

/// Peakon initial datum, period 1, mean zero.
double peakon_u0(double x);
/// Derivative of peakon_u0 (one-sided from the right at the corner).
double peakon_q0(double x);
/// Mean-zero periodic antiderivative of peakon_u0.
double peakon_v0(double x);
/// Exact Ostrovsky-Hunter translate u0(x - t/36) for alpha = gamma = 1.
double oh_exact(double x, double t);

/// L2 projection of x -> U(x - x0) onto the periodic mesh over (0, L),
/// shifted to zero mean.
FieldCoeffs profile_to_initial(const SolitaryProfile& profile, double x0, const Mesh& mesh,
                               const Basis& basis);

/// x -> U(x - x0 - c_w t), periodically wrapped.
PointFunction traveling_reference(const SolitaryProfile& profile, double c_w, double t,
                                  double x0 = 0.0);

/// Two-column CSV "x,U" of the grid values.
void write_profile_csv(const SolitaryProfile& profile, const std::string& path);

}  // namespace ostrovsky
