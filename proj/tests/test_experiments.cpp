#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "ostrovsky/error.hpp"
#include "ostrovsky/experiments.hpp"

using namespace ostrovsky;
using doctest::Approx;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string first_line(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  std::getline(in, line);
  return line;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

RunConfig tiny_custom() {
  RunConfig c = default_config(ExperimentKind::custom);
  c.t_final = 0.1;
  c.dt = 0.05;
  c.elements = {8};
  c.degrees = {1};
  c.snapshot_times = {0.05};
  return c;
}

}  // namespace

TEST_CASE("defaults parse and validate") {
  for (auto kind : {ExperimentKind::convergence, ExperimentKind::soliton, ExperimentKind::peakon_limit,
                    ExperimentKind::custom}) {
    const RunConfig d = default_config(kind);
    CHECK_NOTHROW(d.validate());
    CHECK(parse_config({}, kind) == d);
    CHECK(parse_config(to_key_values(d)) == d);
  }
  const auto conv = default_config(ExperimentKind::convergence);
  CHECK(conv.degrees == std::vector<int>{1, 2, 3});
  CHECK(conv.elements == std::vector<int>{2, 4, 8, 16, 32});
  const auto sol = default_config(ExperimentKind::soliton);
  CHECK(sol.x_right == 80.0);
  CHECK(sol.resolved_shift() == 40.0);
  CHECK(default_config(ExperimentKind::peakon_limit).betas.size() == 4);
  CHECK(experiment_kind_from_string("peakon-limit") == ExperimentKind::peakon_limit);
  CHECK_THROWS_AS(experiment_kind_from_string("bogus"), ConfigError);
}

TEST_CASE("configuration errors name the key") {
  auto message = [](const KeyValues& kv, std::optional<ExperimentKind> kind) {
    try {
      (void)parse_config(kv, kind);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  const auto conv = ExperimentKind::convergence;
  CHECK(message({{"problem.beta", "-0.5"}}, conv).find("problem.beta") != std::string::npos);
  CHECK(message({{"problem.nonsense", "1"}}, conv).find("problem.nonsense") != std::string::npos);
  CHECK(message({{"time.dt", "fast"}}, conv).find("time.dt") != std::string::npos);
  CHECK(message({{"mesh.elements", "8"}}, conv).find("mesh.elements") != std::string::npos);
  CHECK(message({{"mesh.degree", "1,x"}}, conv).find("mesh.degree") != std::string::npos);
  CHECK(message({{"time.theta", "0.3"}}, conv).find("time.theta") != std::string::npos);
  CHECK(message({{"peakon.betas", ""}}, ExperimentKind::peakon_limit).find("peakon.betas") != std::string::npos);
  CHECK(message({{"soliton.fourier_points", "500"}}, ExperimentKind::soliton).find("soliton.fourier_points") !=
        std::string::npos);
  CHECK(message({{"stabilization.preset", "conservative"}, {"problem.beta", "0"},
                 {"problem.bc_regime", "periodic"}, {"problem.initial_condition", "sine"}},
                ExperimentKind::custom) != "no error");
  CHECK(message({{"problem.initial_condition", "square"}}, ExperimentKind::custom)
            .find("problem.initial_condition") != std::string::npos);
}

TEST_CASE("stabilization overrides") {
  RunConfig c = parse_config({{"stabilization.tau_f", "tilde"}, {"stabilization.tau_vq", "0.1"}},
                             ExperimentKind::custom);
  const auto s = c.stabilization(c.beta);
  CHECK(s.tau_f_mode == TauFMode::adaptive);
  CHECK(s.tau_vq == 0.1);
  CHECK(s.tau_qv == Approx(0.9 * std::sqrt(c.gamma / c.beta)));
  const auto cons = parse_config({{"stabilization.preset", "conservative"}}, ExperimentKind::custom);
  CHECK(cons.stabilization(cons.beta).is_conservative(cons.problem(cons.beta)));
  const auto oh = default_config(ExperimentKind::peakon_limit);
  CHECK(oh.problem(0.0).degenerate_dispersion);
  CHECK_FALSE(oh.problem(1e-4).degenerate_dispersion);
}

TEST_CASE("step size rules") {
  RunConfig c = default_config(ExperimentKind::convergence);
  c.dt_rule = DtRule::mesh_power;
  c.dt_factor = 0.01;
  const double h = 0.5;
  CHECK(c.theta_config(h, 2).dt == Approx(0.01 * 0.125));
  c.dt_rule = DtRule::fixed;
  CHECK(c.theta_config(h, 2).dt == c.dt);
  CHECK(c.theta_config(h, 2).t_final == c.t_final);
}

TEST_CASE("INI input") {
  const auto kv = read_ini_string(
      "; comment\n[run]\nkind = custom\n[time]\ndt = 0.02 \n# another\n[mesh]\nelements = 16\n");
  CHECK(kv.at("time.dt") == "0.02");
  const RunConfig c = parse_config(kv);
  CHECK(c.kind == ExperimentKind::custom);
  CHECK(c.dt == 0.02);
  CHECK(c.elements == std::vector<int>{16});
  CHECK_THROWS_AS(read_ini_string("dt = 1\n"), ConfigError);
  CHECK_THROWS_AS(read_ini_file("/nonexistent/config.ini"), Error);

  TempDir dir("ostrovsky_ini_test");
  fs::create_directories(dir.path);
  const auto file = dir.path / "run.ini";
  std::ofstream(file) << "[time]\nt_final = 3\n";
  const RunConfig f = parse_config_file(file.string(), {{"time.dt", "0.5"}}, ExperimentKind::custom);
  CHECK(f.t_final == 3.0);
  CHECK(f.dt == 0.5);
}

TEST_CASE("manifest round trip") {
  for (auto kind : {ExperimentKind::convergence, ExperimentKind::soliton, ExperimentKind::peakon_limit,
                    ExperimentKind::custom}) {
    RunConfig c = default_config(kind);
    c.seed = 42;
    c.tau_pu = 1.5;
    const std::string text = manifest_json(c);
    CHECK(parse_manifest(text) == c);
    const auto j = nlohmann::json::parse(text);
    CHECK(j.at("version") == kLibraryVersion);
    CHECK(j.at("experiment") == to_string(kind));
  }
  ExperimentResults r;
  r.summary["bad"] = NAN;
  r.failures.push_back("row failed");
  const auto j = nlohmann::json::parse(manifest_json(default_config(ExperimentKind::custom), &r, {"a.csv"}));
  CHECK(j.at("summary").at("bad").is_null());
  CHECK(j.at("failures").size() == 1);
  CHECK(j.at("outputs")[0] == "a.csv");
  CHECK_THROWS_AS(parse_manifest("{not json"), ConfigError);
}

TEST_CASE("rates") {
  ConvergenceTable t;
  t.rows = {{1, 4, 1.0}, {1, 8, 0.25}, {1, 16, 0.0625}, {2, 4, 0.1}, {2, 12, 0.1 / 27.0}};
  compute_rates(t);
  CHECK(std::isnan(t.rows[0].rate));
  CHECK(t.rows[1].rate == Approx(2.0).epsilon(1e-12));
  CHECK(t.rows[2].rate == Approx(2.0).epsilon(1e-12));
  CHECK(std::isnan(t.rows[3].rate));
  CHECK(t.rows[4].rate == Approx(3.0).epsilon(1e-12));
  CHECK(format_number(0.5) == "5.0000000000e-01");
  CHECK(format_number(NAN) == "nan");
}

TEST_CASE("sampling and peak tracking") {
  const Mesh mesh = Mesh::uniform(0.0, 10.0, 20, true);
  const Basis basis(3);
  const auto u = l2_project([](double x) { return std::exp(-(x - 3.3) * (x - 3.3)); }, mesh, basis);
  const auto snap = sample_snapshot("s", u, mesh, 1.5);
  CHECK(snap.x.size() == 160);
  CHECK(snap.x.front() == 0.0);
  CHECK(snap.x[7] == Approx(0.5));
  CHECK(snap.time == 1.5);
  const auto peak = locate_peak(u, mesh, 0.0);
  CHECK(peak.position == Approx(3.3).epsilon(1e-3));
  CHECK(peak.amplitude == Approx(1.0).epsilon(1e-3));

  std::vector<PeakSample> samples;
  for (int i = 0; i < 10; ++i) {
    const double t = i;
    samples.push_back({t, std::fmod(7.0 + 0.75 * t, 10.0), 1.0});
  }
  CHECK(fitted_speed(samples, 10.0) == Approx(0.75));
  for (auto& s : samples) s.position = std::fmod(7.0 - 0.75 * s.time + 100.0, 10.0);
  CHECK(fitted_speed(samples, 10.0) == Approx(-0.75));
}

TEST_CASE("output files") {
  SUBCASE("empty results write only the manifest") {
    TempDir dir("ostrovsky_emit_empty");
    const auto files = emit_outputs(default_config(ExperimentKind::custom), ExperimentResults{}, dir.path.string());
    CHECK(files == std::vector<std::string>{"manifest.json"});
    CHECK(fs::exists(dir.path / "manifest.json"));
  }
  SUBCASE("custom run is reproducible byte for byte") {
    TempDir a("ostrovsky_emit_a"), b("ostrovsky_emit_b");
    const RunConfig c = tiny_custom();
    const auto ra = run_experiment(c);
    const auto fa = emit_outputs(c, ra, a.path.string());
    const auto fb = emit_outputs(c, run_experiment(c), b.path.string());
    REQUIRE(fa == fb);
    CHECK(fa.back() == "manifest.json");
    for (const auto& f : fa) CHECK(slurp(a.path / f) == slurp(b.path / f));
    bool snapshot_seen = false, diagnostics_seen = false;
    for (const auto& f : fa) {
      const std::string head = first_line(a.path / f);
      if (f.rfind("snapshot", 0) == 0) {
        snapshot_seen = true;
        CHECK(head == "x,u");
      }
      if (f.rfind("diagnostics", 0) == 0) {
        diagnostics_seen = true;
        CHECK(head == "step,time,energy,mass,newton_iters");
      }
    }
    CHECK(snapshot_seen);
    CHECK(diagnostics_seen);
    CHECK(ra.failures.empty());
  }
  SUBCASE("convergence table header") {
    TempDir dir("ostrovsky_emit_conv");
    RunConfig c = default_config(ExperimentKind::convergence);
    c.degrees = {1};
    c.elements = {2, 4};
    c.dt = 0.05;
    c.t_final = 0.1;
    const auto r = run_experiment(c);
    REQUIRE(r.convergence);
    CHECK(r.convergence->rows.size() == 2);
    emit_outputs(c, r, dir.path.string());
    CHECK(first_line(dir.path / "convergence.csv") == "k,Ne,error,rate");
  }
  SUBCASE("unwritable directory") {
    CHECK_THROWS_AS(emit_outputs(tiny_custom(), ExperimentResults{}, "/proc/ostrovsky/out"), IoError);
  }
}

TEST_CASE("soliton run at zero final time reproduces the profile") {
  RunConfig c = default_config(ExperimentKind::soliton);
  c.t_final = 0.0;
  c.fourier_points = 256;
  c.snapshot_times = {0.0};
  double coarse = 0.0;
  for (int n : {128, 256}) {
    c.elements = {n};
    const auto r = run_soliton(c);
    CHECK(r.failures.empty());
    CHECK(r.summary.at("petviashvili_residual") <= 1e-10);
    const double err = r.summary.at("final_shape_error");
    if (coarse > 0.0) CHECK(err < coarse / 6.0);
    coarse = err;
  }
  CHECK(coarse < 5e-4);
}
