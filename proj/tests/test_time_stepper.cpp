#include <algorithm>
#include <cmath>
#include <numbers>

#include "doctest.h"
#include "ostrovsky/error.hpp"
#include "ostrovsky/profiles.hpp"
#include "ostrovsky/time_stepper.hpp"
#include "support/oracles.hpp"

using namespace ostrovsky;
using doctest::Approx;

namespace {

HdgDiscretization periodic_disc(int n, int k, double alpha = 1.0, double beta = 0.5) {
  ProblemConfig p;
  p.alpha = alpha;
  p.beta = beta;
  p.regime = BoundaryRegime::periodic;
  return HdgDiscretization(Mesh::uniform(0.0, 2.0 * std::numbers::pi, n, true), Basis(k), p,
                           StabParams::defaults(beta, p.gamma));
}

}  // namespace

TEST_CASE("step count and validation") {
  ThetaConfig c;
  c.t_final = 1.0;
  c.dt = 0.3;
  CHECK(c.n_steps() == 4);
  CHECK(c.effective_dt() == Approx(0.25));
  c.dt = 0.25;
  CHECK(c.n_steps() == 4);
  CHECK(c.effective_dt() == 0.25);
  c.t_final = 0.0;
  CHECK(c.n_steps() == 0);
  CHECK_NOTHROW(c.validate());

  ThetaConfig bad;
  bad.theta = 0.4;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad.theta = 1.0;
  bad.dt = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad.dt = 0.1;
  bad.newton_max_iter = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("energy and mass of simple fields") {
  const auto disc = periodic_disc(32, 3);
  FieldState s = FieldState::zeros(32, 4);
  s.u = l2_project([](double x) { return std::sin(x); }, disc.mesh(), disc.basis());
  const auto cq = conserved_quantities(disc, s);
  CHECK(cq.energy == Approx(std::numbers::pi).epsilon(1e-9));
  CHECK(std::abs(cq.mass) < 1e-13);
  CHECK(discrete_energy(s, disc.mesh()) == Approx(0.5 * std::numbers::pi).epsilon(1e-9));

  const Mesh unit = Mesh::uniform(0.0, 1.0, 5, false);
  FieldState one = FieldState::zeros(5, 2);
  one.u = l2_project([](double) { return 1.0; }, unit, Basis(1));
  CHECK(discrete_energy(one, unit) == Approx(0.5));
  const auto rec = make_diagnostics(periodic_disc(5, 1), one, 3, 2, 1e-12);
  CHECK(rec.step == 3);
  CHECK(rec.newton_iterations == 2);
  CHECK(rec.newton_final_residual == 1e-12);
}

TEST_CASE("zero final time returns the initial data") {
  const auto disc = periodic_disc(8, 2);
  ThetaConfig c;
  c.t_final = 0.0;
  const auto res = run_simulation(disc, [](double x) { return std::cos(2.0 * x); }, c);
  CHECK(res.steps == 0);
  REQUIRE(res.diagnostics.size() == 1);
  CHECK(res.diagnostics[0].time == 0.0);
  const auto u0 = l2_project([](double x) { return std::cos(2.0 * x); }, disc.mesh(), disc.basis());
  for (std::size_t i = 0; i < u0.data().size(); ++i) CHECK(res.state.u.data()[i] == Approx(u0.data()[i]));
}

TEST_CASE("backward Euler dissipates energy") {
  const auto disc = periodic_disc(16, 2);
  ThetaConfig c;
  c.theta = 1.0;
  c.dt = 0.05;
  c.t_final = 2.0;
  const auto res = run_simulation(disc, [](double x) { return std::sin(x) + 0.5 * std::cos(2.0 * x); }, c);
  REQUIRE(res.diagnostics.size() == static_cast<std::size_t>(res.steps + 1));
  for (std::size_t i = 1; i < res.diagnostics.size(); ++i) {
    CHECK(res.diagnostics[i].energy <= res.diagnostics[i - 1].energy + 1e-12);
    CHECK(std::abs(res.diagnostics[i].mass) < 1e-10);
    CHECK(res.diagnostics[i].newton_final_residual <= c.newton_tol);
  }
}

TEST_CASE("condensed step matches the dense Newton step") {
  std::mt19937_64 rng(3);
  const auto disc = periodic_disc(4, 2);
  const auto u0 = l2_project([](double x) { return 0.5 * std::sin(x); }, disc.mesh(), disc.basis());
  const auto init = init_aux_fields(disc, u0);
  ThetaConfig c;
  c.theta = 0.6;
  c.dt = 0.1;
  const auto fast = theta_step(disc, init.state, init.traces, c, 0.1);
  const auto dense = oracle::dense_theta_step(disc, init.state, init.traces, 0.6, 0.1);
  for (std::size_t i = 0; i < fast.state.u.data().size(); ++i)
    CHECK(fast.state.u.data()[i] == Approx(dense.state.u.data()[i]).epsilon(1e-9));
  CHECK(fast.state.time == Approx(0.1));
}

TEST_CASE("Newton failures are reported") {
  const auto disc = periodic_disc(8, 2);
  const auto u0 = l2_project([](double x) { return std::sin(x); }, disc.mesh(), disc.basis());
  const auto init = init_aux_fields(disc, u0);
  ThetaConfig c;
  c.newton_tol = 1e-300;
  c.newton_max_iter = 1;
  try {
    (void)theta_step(disc, init.state, init.traces, c, 0.1, 7);
    FAIL("expected StepFailure");
  } catch (const StepFailure& e) {
    CHECK(e.step() == 7);
    CHECK(e.last_residual() > 0.0);
  }
}

TEST_CASE("a nearly linear problem needs a single Newton correction") {
  const auto disc = periodic_disc(8, 2, 1e-12);
  const auto u0 = l2_project([](double x) { return std::sin(x); }, disc.mesh(), disc.basis());
  const auto init = init_aux_fields(disc, u0);
  ThetaConfig c;
  const auto r = theta_step(disc, init.state, init.traces, c, 0.1);
  CHECK(r.diagnostics.newton_iterations <= 2);
}

TEST_CASE("Crank-Nicolson manufactured solution") {
  ManufacturedCase mc;
  const int n = 32, k = 1;
  const HdgDiscretization disc(Mesh::uniform(mc.x_left, mc.x_right, n, false), Basis(k), mc.problem_config(),
                               StabParams::defaults(mc.beta, mc.gamma));
  ThetaConfig c;
  c.theta = 0.5;
  c.dt = 1e-3;
  c.t_final = 0.5;
  int observed = 0;
  std::vector<int> observed_steps;
  SimulationOptions opts;
  opts.observe_every = 100;
  opts.observe_times = {0.2505};
  opts.observers.push_back([&](int step, double, const FieldState&, const TraceState&) {
    ++observed;
    observed_steps.push_back(step);
  });
  const auto res = run_simulation(disc, [&](double x) { return mc.u(x, 0.0); }, c, opts);
  CHECK(res.steps == 500);
  const double err = l2_error(res.state.u, [&](double x) { return mc.u(x, 0.5); }, disc.mesh(), disc.basis(), 8);
  CHECK(err == Approx(1.670e-3).epsilon(0.25));
  CHECK(observed == 7);
  CHECK(observed_steps.front() == 0);
  CHECK(observed_steps.back() == 500);
  CHECK(std::find(observed_steps.begin(), observed_steps.end(), 251) != observed_steps.end());
}
