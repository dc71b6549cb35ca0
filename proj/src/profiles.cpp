#include "ostrovsky/profiles.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "ostrovsky/error.hpp"

namespace ostrovsky {

double ManufacturedCase::u(double x, double t) const { return std::exp(-t) * std::sin(x); }
double ManufacturedCase::v(double x, double t) const { return std::exp(-t) * (1.0 - std::cos(x)); }
double ManufacturedCase::q(double x, double t) const { return std::exp(-t) * std::cos(x); }
double ManufacturedCase::p(double x, double t) const { return -beta * std::exp(-t) * std::sin(x); }

double ManufacturedCase::source(double x, double t) const {
  return manufactured_source(x, t, alpha, beta, gamma);
}

BoundaryData ManufacturedCase::boundary_data() const {
  BoundaryData bc;
  const ManufacturedCase self = *this;
  bc.u_left = [self](double t) { return self.u(self.x_left, t); };
  bc.u_right = [self](double t) { return self.u(self.x_right, t); };
  bc.v_right = [self](double t) { return self.v(self.x_right, t); };
  bc.q_left = [self](double t) { return self.q(self.x_left, t); };
  bc.q_right = [self](double t) { return self.q(self.x_right, t); };
  return bc;
}

ProblemConfig ManufacturedCase::problem_config() const {
  ProblemConfig cfg;
  cfg.alpha = alpha;
  cfg.beta = beta;
  cfg.gamma = gamma;
  cfg.regime = beta < 0.0 ? BoundaryRegime::dirichlet_beta_neg : BoundaryRegime::dirichlet_beta_pos;
  cfg.degenerate_dispersion = beta == 0.0;
  const ManufacturedCase self = *this;
  cfg.source = [self](double x, double t) { return self.source(x, t); };
  cfg.bc = boundary_data();
  return cfg;
}

double manufactured_source(double x, double t, double alpha, double beta, double gamma) {
  const double e = std::exp(-t);
  const double s = std::sin(x);
  const double c = std::cos(x);
  return -e * s + beta * e * c + alpha * e * e * s * c - gamma * e * (1.0 - c);
}

double linear_symbol(double kappa, double beta, double gamma, double c_w) {
  if (kappa == 0.0) throw ConfigError("linear_symbol: the zero mode has no symbol");
  return beta * kappa * kappa - c_w + gamma / (kappa * kappa);
}

void PetviashviliConfig::validate() const {
  if (!(relaxation > 0.0 && relaxation <= 1.0)) throw ConfigError("relaxation must lie in (0, 1]");
  if (!(exponent > 1.0)) throw ConfigError("Petviashvili exponent must be > 1");
  if (!(tolerance > 0.0)) throw ConfigError("Petviashvili tolerance must be > 0");
  if (max_iterations < 1) throw ConfigError("max_iterations must be >= 1");
  if (divergence_window < 1) throw ConfigError("divergence_window must be >= 1");
}

namespace {

double wavenumber(int m, int K, double L) {
  const int mm = m <= K / 2 ? m : m - K;
  return 2.0 * std::numbers::pi * mm / L;
}

std::vector<double> symbols(const SolitaryParams& p) {
  const int K = p.fourier_points;
  std::vector<double> s(K, 0.0);
  double largest = 0.0;
  for (int m = 1; m < K; ++m) {
    s[m] = linear_symbol(wavenumber(m, K, p.length), p.beta, p.gamma, p.c_w);
    largest = std::max(largest, std::abs(s[m]));
  }
  for (int m = 1; m < K; ++m) {
    if (std::abs(s[m]) <= 1e-10 * largest) {
      throw ConfigError("linear symbol vanishes on the Fourier grid; choose c_w < 2 sqrt(beta gamma)");
    }
  }
  return s;
}

void validate_params(const SolitaryParams& p) {
  if (!is_power_of_two(static_cast<std::size_t>(std::max(p.fourier_points, 0))) ||
      p.fourier_points < 4) {
    throw ConfigError("fourier_points must be a power of two >= 4");
  }
  if (!(p.length > 0.0)) throw ConfigError("profile length must be > 0");
  if (!(p.alpha != 0.0)) throw ConfigError("alpha must be nonzero");
}

double fourier_residual(const FftPlan& plan, const std::vector<double>& sym, double alpha,
                        const ComplexVector& u_hat, const std::vector<double>& values) {
  const int K = static_cast<int>(values.size());
  ComplexVector f(K);
  for (int j = 0; j < K; ++j) f[j] = 0.5 * alpha * values[j] * values[j];
  plan.forward(f);
  double r = 0.0;
  for (int m = 1; m < K; ++m) r = std::max(r, std::abs(sym[m] * u_hat[m] + f[m]) / K);
  return r;
}

}  // namespace

double profile_residual(const SolitaryParams& params, const std::vector<double>& values) {
  validate_params(params);
  if (static_cast<int>(values.size()) != params.fourier_points) {
    throw UsageError("profile_residual: value count does not match fourier_points");
  }
  const FftPlan plan(values.size());
  const auto sym = symbols(params);
  ComplexVector u_hat(values.begin(), values.end());
  plan.forward(u_hat);
  return fourier_residual(plan, sym, params.alpha, u_hat, values);
}

SolitaryProfile::SolitaryProfile(SolitaryParams params, std::vector<double> values, double residual,
                                 int iterations, double amplitude_factor,
                                 std::vector<double> history)
    : params_(params),
      values_(std::move(values)),
      residual_(residual),
      iterations_(iterations),
      amplitude_factor_(amplitude_factor),
      history_(std::move(history)) {
  if (static_cast<int>(values_.size()) != params_.fourier_points ||
      !is_power_of_two(values_.size())) {
    throw ConfigError("solitary profile needs fourier_points (a power of two) values");
  }
  coeffs_.assign(values_.begin(), values_.end());
  FftPlan(values_.size()).forward(coeffs_);
  for (auto& c : coeffs_) c /= static_cast<double>(values_.size());
}

double SolitaryProfile::max_abs() const {
  double m = 0.0;
  for (double v : values_) m = std::max(m, std::abs(v));
  return m;
}

double SolitaryProfile::evaluate(double x) const {
  const int K = size();
  const double base = 2.0 * std::numbers::pi / params_.length;
  double sum = coeffs_[0].real();
  for (int m = 1; m < K / 2; ++m) {
    const double phase = base * m * x;
    sum += 2.0 * (coeffs_[m].real() * std::cos(phase) - coeffs_[m].imag() * std::sin(phase));
  }
  sum += coeffs_[K / 2].real() * std::cos(base * (K / 2) * x);
  return sum;
}

SolitaryProfile petviashvili_solve(const SolitaryParams& params, const PetviashviliConfig& cfg) {
  validate_params(params);
  cfg.validate();
  const int K = params.fourier_points;
  const double L = params.length;
  const auto sym = symbols(params);
  const FftPlan plan(K);

  // sech^2 seed from the KdV balance, centred in the box.
  const double amp = 3.0 * std::abs(params.c_w) / params.alpha;
  const double width = std::sqrt(4.0 * std::abs(params.beta) / std::max(std::abs(params.c_w), 1e-300));
  if (!(width > 0.0) || !std::isfinite(width)) {
    throw ConfigError("seed width undefined: need beta != 0 and c_w != 0");
  }
  std::vector<double> u(K);
  for (int j = 0; j < K; ++j) {
    const double s = 1.0 / std::cosh((j * L / K - 0.5 * L) / width);
    u[j] = amp * s * s;
  }
  auto subtract_mean = [](std::vector<double>& w) {
    double mean = 0.0;
    for (double x : w) mean += x;
    mean /= static_cast<double>(w.size());
    for (double& x : w) x -= mean;
  };
  subtract_mean(u);

  std::vector<double> history;
  ComplexVector u_hat(K), f_hat(K);
  double factor = 0.0;
  int increases = 0;
  int iterations = 0;
  for (;;) {
    for (int j = 0; j < K; ++j) {
      u_hat[j] = u[j];
      f_hat[j] = 0.5 * params.alpha * u[j] * u[j];
    }
    plan.forward(u_hat);
    plan.forward(f_hat);
    double residual = 0.0;
    double num = 0.0, den = 0.0;
    for (int m = 1; m < K; ++m) {
      residual = std::max(residual, std::abs(sym[m] * u_hat[m] + f_hat[m]) / K);
      num += sym[m] * std::norm(u_hat[m]);
      den += std::real(-f_hat[m] * std::conj(u_hat[m]));
    }
    factor = num / den;
    if (!history.empty()) increases = residual > history.back() ? increases + 1 : 0;
    history.push_back(residual);
    if (!std::isfinite(residual) || !std::isfinite(factor)) {
      throw PetviashviliError("Petviashvili iteration produced a non-finite value", history);
    }
    if (residual <= cfg.tolerance) break;
    if (increases >= cfg.divergence_window) {
      throw PetviashviliError("Petviashvili iteration diverged", history);
    }
    if (iterations >= cfg.max_iterations) {
      throw PetviashviliError("Petviashvili iteration hit max_iterations", history);
    }

    const double mp = std::pow(std::abs(factor), cfg.exponent);
    ComplexVector next(K);
    next[0] = 0.0;
    for (int m = 1; m < K; ++m) next[m] = -mp * f_hat[m] / sym[m];
    plan.inverse(next);
    for (int j = 0; j < K; ++j) {
      u[j] = (1.0 - cfg.relaxation) * u[j] + cfg.relaxation * next[j].real();
    }
    subtract_mean(u);
    ++iterations;
  }

  // Move the extremum to x = 0 by an exact circular shift of the grid.
  int peak = 0;
  for (int j = 1; j < K; ++j) {
    if (std::abs(u[j]) > std::abs(u[peak])) peak = j;
  }
  std::rotate(u.begin(), u.begin() + peak, u.end());
  const double residual = history.back();
  return SolitaryProfile(params, std::move(u), residual, iterations, factor, std::move(history));
}

double peakon_u0(double x) {
  double y = x - std::floor(x);
  const double s = y - 0.5;
  return y <= 0.5 ? s * s / 6.0 + s / 6.0 + 1.0 / 36.0 : s * s / 6.0 - s / 6.0 + 1.0 / 36.0;
}

double peakon_q0(double x) {
  const double y = x - std::floor(x);
  const double s = y - 0.5;
  return y < 0.5 ? s / 3.0 + 1.0 / 6.0 : s / 3.0 - 1.0 / 6.0;
}

double peakon_v0(double x) {
  // Antiderivative from 0; both branches are cubics in s = y - 1/2.
  const double y = x - std::floor(x);
  const double s = y - 0.5;
  auto left = [](double t) { return t * t * t / 18.0 + t * t / 12.0 + t / 36.0; };
  auto right = [](double t) { return t * t * t / 18.0 - t * t / 12.0 + t / 36.0; };
  const double at_corner = left(0.0) - left(-0.5);
  // The antiderivative from 0 already has zero mean over a period.
  return y <= 0.5 ? left(s) - left(-0.5) : at_corner + right(s) - right(0.0);
}

double oh_exact(double x, double t) { return peakon_u0(x - t / 36.0); }

FieldCoeffs profile_to_initial(const SolitaryProfile& profile, double x0, const Mesh& mesh,
                               const Basis& basis) {
  const double L = profile.length();
  if (!mesh.periodic()) throw ConfigError("profile_to_initial: mesh must be periodic");
  if (std::abs(mesh.x_left()) > 1e-12 * L || std::abs(mesh.x_right() - L) > 1e-9 * L) {
    throw ConfigError("profile_to_initial: mesh domain must be (0, L) with L = profile length");
  }
  FieldCoeffs c = l2_project([&](double x) { return profile.evaluate(x - x0); }, mesh, basis);
  remove_mean(c, mesh);
  return c;
}

PointFunction traveling_reference(const SolitaryProfile& profile, double c_w, double t, double x0) {
  const double shift = x0 + c_w * t;
  return [profile, shift](double x) { return profile.evaluate(x - shift); };
}

void write_profile_csv(const SolitaryProfile& profile, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << "x,U\n";
  char line[96];
  for (int j = 0; j < profile.size(); ++j) {
    std::snprintf(line, sizeof line, "%.10g,%.16e\n", profile.grid_point(j), profile.values()[j]);
    out << line;
  }
  if (!out) throw IoError("write failed for '" + path + "'");
}

}  // namespace ostrovsky
