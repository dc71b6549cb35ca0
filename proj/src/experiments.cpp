#include "ostrovsky/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include "json.hpp"

#include "ostrovsky/error.hpp"

namespace ostrovsky {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  try {
    std::size_t pos = 0;
    const double v = std::stod(t, &pos);
    if (pos != t.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + text + "'");
  }
}

long long to_integer(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(t, &pos);
    if (pos != t.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected an integer, got '" + text + "'");
  }
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<double> to_double_list(const std::string& key, const std::string& text) {
  std::vector<double> out;
  for (const auto& item : split_list(text)) out.push_back(to_double(key, item));
  return out;
}

std::vector<int> to_int_list(const std::string& key, const std::string& text) {
  std::vector<int> out;
  for (const auto& item : split_list(text)) out.push_back(static_cast<int>(to_integer(key, item)));
  return out;
}

template <class T, class F>
std::string join(const std::vector<T>& xs, F&& fmt) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ",";
    out += fmt(xs[i]);
  }
  return out;
}

std::string optional_text(const std::optional<double>& v) { return v ? fmt17(*v) : "auto"; }

std::optional<double> to_optional(const std::string& key, const std::string& text) {
  if (trim(text) == "auto") return std::nullopt;
  return to_double(key, text);
}

const char* dt_rule_name(DtRule r) { return r == DtRule::fixed ? "fixed" : "mesh_power"; }

}  // namespace

const char* to_string(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::convergence: return "convergence";
    case ExperimentKind::soliton: return "soliton";
    case ExperimentKind::peakon_limit: return "peakon_limit";
    case ExperimentKind::custom: return "custom";
  }
  return "unknown";
}

ExperimentKind experiment_kind_from_string(const std::string& name) {
  const std::string n = trim(name);
  if (n == "convergence") return ExperimentKind::convergence;
  if (n == "soliton") return ExperimentKind::soliton;
  if (n == "peakon_limit" || n == "peakon-limit") return ExperimentKind::peakon_limit;
  if (n == "custom") return ExperimentKind::custom;
  throw ConfigError("run.kind: unknown experiment '" + name + "'");
}

RunConfig default_config(ExperimentKind kind) {
  RunConfig c;
  c.kind = kind;
  switch (kind) {
    case ExperimentKind::convergence:
      c.degrees = {1, 2, 3};
      break;
    case ExperimentKind::soliton:
      c.alpha = 2.0;
      c.beta = 1.0;
      c.gamma = 0.25;
      c.regime = BoundaryRegime::periodic;
      c.x_left = 0.0;
      c.x_right = 80.0;
      c.initial_condition = "soliton";
      c.dt = 0.05;
      c.t_final = 20.0;
      c.degrees = {2};
      c.elements = {256};
      c.snapshot_times = {0.0, 5.0, 10.0, 15.0, 20.0};
      break;
    case ExperimentKind::peakon_limit:
      c.alpha = 1.0;
      c.beta = 0.0;
      c.gamma = 1.0;
      c.regime = BoundaryRegime::periodic;
      c.x_left = 0.0;
      c.x_right = 1.0;
      c.initial_condition = "peakon";
      c.dt = 0.005;
      c.t_final = 2.0;
      c.degrees = {2};
      c.elements = {32};
      c.betas = {0.0, 1e-4, 1e-5, 1e-6};
      break;
    case ExperimentKind::custom:
      c.regime = BoundaryRegime::periodic;
      c.initial_condition = "sine";
      c.t_final = 1.0;
      c.dt = 0.01;
      c.degrees = {2};
      c.elements = {32};
      break;
  }
  return c;
}

void RunConfig::validate() const {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  require(alpha > 0.0, "problem.alpha: must be > 0");
  require(gamma > 0.0, "problem.gamma: must be > 0");
  require(x_left < x_right, "problem.x_left: must be < problem.x_right");
  require(theta >= 0.5 && theta <= 1.0, "time.theta: must lie in [0.5, 1]");
  require(dt > 0.0, "time.dt: must be > 0");
  require(dt_factor > 0.0, "time.dt_factor: must be > 0");
  require(t_final >= 0.0, "time.t_final: must be >= 0");
  require(newton_tol > 0.0, "time.newton_tol: must be > 0");
  require(newton_max_iter >= 1, "time.newton_max_iter: must be >= 1");
  require(!degrees.empty(), "mesh.degree: at least one degree required");
  for (int k : degrees) require(k >= 0 && k <= 12, "mesh.degree: must lie in [0, 12]");
  require(!elements.empty(), "mesh.elements: at least one element count required");
  for (int n : elements) require(n >= 2, "mesh.elements: element counts must be >= 2");
  require(threads >= 1, "run.threads: must be >= 1");
  require(stab_preset == "default" || stab_preset == "conservative",
          "stabilization.preset: must be 'default' or 'conservative'");
  for (double t : snapshot_times) require(t >= 0.0 && t <= t_final + 1e-12, "run.snapshot_times: outside [0, t_final]");

  const bool periodic = regime == BoundaryRegime::periodic;
  switch (kind) {
    case ExperimentKind::convergence:
      require(elements.size() >= 2, "mesh.elements: convergence needs at least 2 resolutions");
      require(!periodic, "problem.bc_regime: convergence uses Dirichlet data");
      require(initial_condition == "manufactured", "problem.initial_condition: convergence requires 'manufactured'");
      break;
    case ExperimentKind::soliton:
      require(periodic, "problem.bc_regime: soliton requires periodic");
      require(x_left == 0.0, "problem.x_left: soliton box must start at 0");
      require(fourier_points >= 4 && is_power_of_two(static_cast<std::size_t>(fourier_points)),
              "soliton.fourier_points: must be a power of two >= 4");
      require(relaxation > 0.0 && relaxation <= 1.0, "soliton.relaxation: must lie in (0, 1]");
      require(exponent > 1.0, "soliton.exponent: must be > 1");
      require(petviashvili_tol > 0.0, "soliton.tolerance: must be > 0");
      require(petviashvili_max_iter >= 1, "soliton.max_iterations: must be >= 1");
      break;
    case ExperimentKind::peakon_limit: {
      require(periodic, "problem.bc_regime: peakon_limit requires periodic");
      require(!betas.empty(), "peakon.betas: need a beta list including 0 or a minimum beta");
      for (double b : betas) require(b >= 0.0, "peakon.betas: values must be >= 0");
      require(std::abs((x_right - x_left) - 1.0) < 1e-12, "problem.x_right: peakon domain must have length 1");
      break;
    }
    case ExperimentKind::custom: {
      static const std::set<std::string> ics{"manufactured", "sine", "gaussian", "peakon", "soliton"};
      require(ics.count(initial_condition) == 1, "problem.initial_condition: unknown '" + initial_condition + "'");
      if (initial_condition == "manufactured") require(!periodic, "problem.bc_regime: manufactured data are Dirichlet");
      if (initial_condition == "soliton") require(periodic && x_left == 0.0, "problem.initial_condition: soliton needs a periodic box (0, L)");
      break;
    }
  }

  // Sign and degenerate-dispersion checks per run.
  std::vector<double> run_betas = kind == ExperimentKind::peakon_limit ? betas : std::vector<double>{beta};
  for (double b : run_betas) {
    try {
      const ProblemConfig p = problem(b);
      p.validate();
      stabilization(b).validate(p);
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("problem.beta: ") + e.what());
    }
  }
}

ProblemConfig RunConfig::problem(double beta_value) const {
  ProblemConfig p;
  p.alpha = alpha;
  p.beta = beta_value;
  p.gamma = gamma;
  p.regime = regime;
  p.degenerate_dispersion = beta_value == 0.0;
  return p;
}

StabParams RunConfig::stabilization(double beta_value) const {
  StabParams s = stab_preset == "conservative" ? StabParams::conservative(beta_value, gamma)
                                               : StabParams::defaults(beta_value, gamma);
  if (tau_pu) s.tau_pu = *tau_pu;
  if (tau_vq) s.tau_vq = *tau_vq;
  if (tau_qv) s.tau_qv = *tau_qv;
  if (tau_f_tilde) {
    s.tau_f_mode = TauFMode::adaptive;
  } else if (tau_f) {
    s.tau_f_mode = TauFMode::constant;
    s.tau_f = *tau_f;
  }
  return s;
}

ThetaConfig RunConfig::theta_config(double h, int degree) const {
  ThetaConfig t;
  t.theta = theta;
  t.dt = dt_rule == DtRule::fixed ? dt : dt_factor * std::pow(h, degree + 1);
  t.t_final = t_final;
  t.newton_tol = newton_tol;
  t.newton_max_iter = newton_max_iter;
  return t;
}

PetviashviliConfig RunConfig::petviashvili() const {
  PetviashviliConfig p;
  p.exponent = exponent;
  p.relaxation = relaxation;
  p.tolerance = petviashvili_tol;
  p.max_iterations = petviashvili_max_iter;
  return p;
}

std::vector<std::string> known_keys() {
  return {"run.kind",           "run.output",          "run.snapshot_times",     "run.seed",
          "run.threads",        "problem.alpha",       "problem.beta",           "problem.gamma",
          "problem.bc_regime",  "problem.x_left",      "problem.x_right",        "problem.initial_condition",
          "stabilization.preset", "stabilization.tau_pu", "stabilization.tau_vq", "stabilization.tau_qv",
          "stabilization.tau_f", "time.theta",         "time.dt",                "time.dt_rule",
          "time.dt_factor",     "time.t_final",        "time.newton_tol",        "time.newton_max_iter",
          "mesh.degree",        "mesh.elements",       "soliton.c_w",            "soliton.fourier_points",
          "soliton.shift",      "soliton.relaxation",  "soliton.exponent",       "soliton.tolerance",
          "soliton.max_iterations", "peakon.betas"};
}

KeyValues to_key_values(const RunConfig& c) {
  KeyValues kv;
  kv["run.kind"] = to_string(c.kind);
  kv["run.output"] = c.output_dir;
  kv["run.snapshot_times"] = join(c.snapshot_times, fmt17);
  kv["run.seed"] = std::to_string(c.seed);
  kv["run.threads"] = std::to_string(c.threads);
  kv["problem.alpha"] = fmt17(c.alpha);
  kv["problem.beta"] = fmt17(c.beta);
  kv["problem.gamma"] = fmt17(c.gamma);
  kv["problem.bc_regime"] = to_string(c.regime);
  kv["problem.x_left"] = fmt17(c.x_left);
  kv["problem.x_right"] = fmt17(c.x_right);
  kv["problem.initial_condition"] = c.initial_condition;
  kv["stabilization.preset"] = c.stab_preset;
  kv["stabilization.tau_pu"] = optional_text(c.tau_pu);
  kv["stabilization.tau_vq"] = optional_text(c.tau_vq);
  kv["stabilization.tau_qv"] = optional_text(c.tau_qv);
  kv["stabilization.tau_f"] = c.tau_f_tilde ? "tilde" : optional_text(c.tau_f);
  kv["time.theta"] = fmt17(c.theta);
  kv["time.dt"] = fmt17(c.dt);
  kv["time.dt_rule"] = dt_rule_name(c.dt_rule);
  kv["time.dt_factor"] = fmt17(c.dt_factor);
  kv["time.t_final"] = fmt17(c.t_final);
  kv["time.newton_tol"] = fmt17(c.newton_tol);
  kv["time.newton_max_iter"] = std::to_string(c.newton_max_iter);
  kv["mesh.degree"] = join(c.degrees, [](int k) { return std::to_string(k); });
  kv["mesh.elements"] = join(c.elements, [](int n) { return std::to_string(n); });
  kv["soliton.c_w"] = fmt17(c.c_w);
  kv["soliton.fourier_points"] = std::to_string(c.fourier_points);
  kv["soliton.shift"] = optional_text(c.shift);
  kv["soliton.relaxation"] = fmt17(c.relaxation);
  kv["soliton.exponent"] = fmt17(c.exponent);
  kv["soliton.tolerance"] = fmt17(c.petviashvili_tol);
  kv["soliton.max_iterations"] = std::to_string(c.petviashvili_max_iter);
  kv["peakon.betas"] = join(c.betas, fmt17);
  return kv;
}

KeyValues read_ini_string(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  KeyValues kv;
  for (const auto& [section, body] : tree) {
    if (body.empty()) {
      throw ConfigError("key '" + section + "' must appear inside a [section]");
    }
    for (const auto& [key, value] : body) kv[section + "." + key] = trim(value.data());
  }
  return kv;
}

KeyValues read_ini_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return read_ini_string(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

RunConfig parse_config(const KeyValues& values, std::optional<ExperimentKind> kind) {
  const auto keys = known_keys();
  const std::set<std::string> allowed(keys.begin(), keys.end());
  for (const auto& [k, v] : values) {
    if (allowed.count(k) == 0) throw ConfigError("unknown key '" + k + "'");
  }
  ExperimentKind resolved;
  if (auto it = values.find("run.kind"); it != values.end()) {
    resolved = experiment_kind_from_string(it->second);
    if (kind && *kind != resolved) {
      throw ConfigError(std::string("run.kind: file says '") + to_string(resolved) +
                        "' but the command selects '" + to_string(*kind) + "'");
    }
  } else if (kind) {
    resolved = *kind;
  } else {
    throw ConfigError("run.kind: missing experiment kind");
  }

  RunConfig c = default_config(resolved);
  for (const auto& [key, v] : values) {
    if (key == "run.kind") continue;
    if (key == "run.output") c.output_dir = v;
    else if (key == "run.snapshot_times") c.snapshot_times = to_double_list(key, v);
    else if (key == "run.seed") c.seed = static_cast<std::uint64_t>(to_integer(key, v));
    else if (key == "run.threads") c.threads = static_cast<int>(to_integer(key, v));
    else if (key == "problem.alpha") c.alpha = to_double(key, v);
    else if (key == "problem.beta") c.beta = to_double(key, v);
    else if (key == "problem.gamma") c.gamma = to_double(key, v);
    else if (key == "problem.bc_regime") {
      try {
        c.regime = boundary_regime_from_string(trim(v));
      } catch (const ConfigError& e) {
        throw ConfigError(key + ": " + e.what());
      }
    } else if (key == "problem.x_left") c.x_left = to_double(key, v);
    else if (key == "problem.x_right") c.x_right = to_double(key, v);
    else if (key == "problem.initial_condition") c.initial_condition = trim(v);
    else if (key == "stabilization.preset") c.stab_preset = trim(v);
    else if (key == "stabilization.tau_pu") c.tau_pu = to_optional(key, v);
    else if (key == "stabilization.tau_vq") c.tau_vq = to_optional(key, v);
    else if (key == "stabilization.tau_qv") c.tau_qv = to_optional(key, v);
    else if (key == "stabilization.tau_f") {
      c.tau_f_tilde = trim(v) == "tilde";
      c.tau_f = c.tau_f_tilde ? std::nullopt : to_optional(key, v);
    } else if (key == "time.theta") c.theta = to_double(key, v);
    else if (key == "time.dt") c.dt = to_double(key, v);
    else if (key == "time.dt_rule") {
      const std::string r = trim(v);
      if (r == "fixed") c.dt_rule = DtRule::fixed;
      else if (r == "mesh_power") c.dt_rule = DtRule::mesh_power;
      else throw ConfigError(key + ": expected 'fixed' or 'mesh_power', got '" + v + "'");
    } else if (key == "time.dt_factor") c.dt_factor = to_double(key, v);
    else if (key == "time.t_final") c.t_final = to_double(key, v);
    else if (key == "time.newton_tol") c.newton_tol = to_double(key, v);
    else if (key == "time.newton_max_iter") c.newton_max_iter = static_cast<int>(to_integer(key, v));
    else if (key == "mesh.degree") c.degrees = to_int_list(key, v);
    else if (key == "mesh.elements") c.elements = to_int_list(key, v);
    else if (key == "soliton.c_w") c.c_w = to_double(key, v);
    else if (key == "soliton.fourier_points") c.fourier_points = static_cast<int>(to_integer(key, v));
    else if (key == "soliton.shift") c.shift = to_optional(key, v);
    else if (key == "soliton.relaxation") c.relaxation = to_double(key, v);
    else if (key == "soliton.exponent") c.exponent = to_double(key, v);
    else if (key == "soliton.tolerance") c.petviashvili_tol = to_double(key, v);
    else if (key == "soliton.max_iterations") c.petviashvili_max_iter = static_cast<int>(to_integer(key, v));
    else if (key == "peakon.betas") c.betas = to_double_list(key, v);
  }
  // Default snapshot times follow a shortened run; explicit ones are checked.
  if (values.count("run.snapshot_times") == 0) {
    std::erase_if(c.snapshot_times, [&](double t) { return t > c.t_final; });
  }
  c.validate();
  return c;
}

RunConfig parse_config_file(const std::string& path, const KeyValues& overrides,
                            std::optional<ExperimentKind> kind) {
  KeyValues kv = read_ini_file(path);
  for (const auto& [k, v] : overrides) kv[k] = v;
  return parse_config(kv, kind);
}

void compute_rates(ConvergenceTable& table) {
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    auto& row = table.rows[i];
    row.rate = kNaN;
    if (i == 0) continue;
    const auto& prev = table.rows[i - 1];
    if (prev.degree != row.degree || !prev.ok || !row.ok) continue;
    if (prev.error <= 0.0 || row.error <= 0.0) continue;
    if (row.n_elements == 2 * prev.n_elements) {
      row.rate = std::log2(prev.error / row.error);
    } else {
      row.rate = std::log(prev.error / row.error) /
                 std::log(static_cast<double>(row.n_elements) / prev.n_elements);
    }
  }
}

std::string format_number(double value) {
  if (std::isnan(value)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10e", value);
  return buf;
}

Snapshot sample_snapshot(const std::string& name, const FieldCoeffs& u, const Mesh& mesh,
                         double time) {
  constexpr int kPerElement = 8;
  Snapshot s;
  s.name = name;
  s.time = time;
  for (int e = 0; e < mesh.n_elements(); ++e) {
    for (int i = 0; i < kPerElement; ++i) {
      const double xi = -1.0 + 2.0 * i / (kPerElement - 1);
      s.x.push_back(mesh.to_physical(e, xi));
      s.u.push_back(eval_field(u, e, xi));
    }
  }
  return s;
}

PeakSample locate_peak(const FieldCoeffs& u, const Mesh& mesh, double time) {
  int best_e = 0;
  double best_xi = -1.0, best = -1.0;
  constexpr int kSamples = 16;
  for (int e = 0; e < mesh.n_elements(); ++e) {
    for (int i = 0; i < kSamples; ++i) {
      const double xi = -1.0 + 2.0 * (i + 0.5) / kSamples;
      const double a = std::abs(eval_field(u, e, xi));
      if (a > best) {
        best = a;
        best_e = e;
        best_xi = xi;
      }
    }
  }
  // Parabola through three neighbouring samples in reference coordinates.
  const double d = 2.0 / kSamples;
  const double xm = std::max(-1.0, best_xi - d), xp = std::min(1.0, best_xi + d);
  const double fm = eval_field(u, best_e, xm), f0 = eval_field(u, best_e, best_xi),
               fp = eval_field(u, best_e, xp);
  double xi_star = best_xi;
  const double denom = fm - 2.0 * f0 + fp;
  if (xp - best_xi == d && best_xi - xm == d && std::abs(denom) > 0.0) {
    xi_star = std::clamp(best_xi + 0.5 * d * (fm - fp) / denom, -1.0, 1.0);
  }
  PeakSample p;
  p.time = time;
  p.position = mesh.to_physical(best_e, xi_star);
  p.amplitude = eval_field(u, best_e, xi_star);
  return p;
}

double fitted_speed(const std::vector<PeakSample>& samples, double period) {
  if (samples.size() < 2) return kNaN;
  std::vector<double> pos(samples.size());
  pos[0] = samples[0].position;
  for (std::size_t i = 1; i < samples.size(); ++i) {
    double d = samples[i].position - samples[i - 1].position;
    if (period > 0.0) d -= period * std::round(d / period);
    pos[i] = pos[i - 1] + d;
  }
  double st = 0.0, sx = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    st += samples[i].time;
    sx += pos[i];
  }
  const double n = static_cast<double>(samples.size());
  st /= n;
  sx /= n;
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    num += (samples[i].time - st) * (pos[i] - sx);
    den += (samples[i].time - st) * (samples[i].time - st);
  }
  return den > 0.0 ? num / den : kNaN;
}

namespace {

std::string tag_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

std::set<int> snapshot_steps(const RunConfig& cfg, const ThetaConfig& tc) {
  std::set<int> steps;
  const double dt = tc.effective_dt();
  for (double t : cfg.snapshot_times) steps.insert(tc.n_steps() > 0 ? static_cast<int>(std::lround(t / dt)) : 0);
  return steps;
}

struct CaseOutcome {
  ConvergenceRow row;
  DiagnosticsSeries diagnostics;
  StabParams stab;
};

CaseOutcome run_convergence_case(const RunConfig& cfg, int k, int n) {
  CaseOutcome out;
  out.row.degree = k;
  out.row.n_elements = n;
  out.diagnostics.name = "diagnostics_k" + std::to_string(k) + "_Ne" + std::to_string(n);
  ManufacturedCase mc;
  mc.alpha = cfg.alpha;
  mc.beta = cfg.beta;
  mc.gamma = cfg.gamma;
  mc.x_left = cfg.x_left;
  mc.x_right = cfg.x_right;
  ProblemConfig p = mc.problem_config();
  p.regime = cfg.regime;
  out.stab = cfg.stabilization(cfg.beta);
  try {
    const Mesh mesh = Mesh::uniform(cfg.x_left, cfg.x_right, n, false);
    const Basis basis(k);
    const HdgDiscretization disc(mesh, basis, p, out.stab);
    const ThetaConfig tc = cfg.theta_config(mesh.h(), k);
    const auto sim = run_simulation(disc, [&](double x) { return mc.u(x, 0.0); }, tc);
    out.row.error = l2_error(sim.state.u, [&](double x) { return mc.u(x, sim.state.time); }, mesh,
                             basis, 2 * (k + 3));
    out.diagnostics.records = sim.diagnostics;
  } catch (const Error& e) {
    out.row.ok = false;
    out.row.error = kNaN;
    out.row.failure = e.what();
  }
  return out;
}

}  // namespace

ExperimentResults run_convergence(const RunConfig& cfg) {
  cfg.validate();
  ExperimentResults res;
  std::vector<std::pair<int, int>> cases;
  for (int k : cfg.degrees) {
    for (int n : cfg.elements) cases.emplace_back(k, n);
  }
  std::vector<CaseOutcome> outcomes(cases.size());
  if (cfg.threads > 1) {
    for (std::size_t start = 0; start < cases.size(); start += cfg.threads) {
      std::vector<std::future<CaseOutcome>> batch;
      const std::size_t stop = std::min(cases.size(), start + static_cast<std::size_t>(cfg.threads));
      for (std::size_t i = start; i < stop; ++i) {
        batch.push_back(std::async(std::launch::async, run_convergence_case, std::cref(cfg),
                                   cases[i].first, cases[i].second));
      }
      for (std::size_t i = start; i < stop; ++i) outcomes[i] = batch[i - start].get();
    }
  } else {
    for (std::size_t i = 0; i < cases.size(); ++i) {
      outcomes[i] = run_convergence_case(cfg, cases[i].first, cases[i].second);
    }
  }
  ConvergenceTable table;
  for (auto& o : outcomes) {
    if (!o.row.ok) {
      res.failures.push_back("k=" + std::to_string(o.row.degree) + " Ne=" +
                             std::to_string(o.row.n_elements) + ": " + o.row.failure);
    }
    table.rows.push_back(o.row);
    res.diagnostics.push_back(std::move(o.diagnostics));
  }
  compute_rates(table);
  res.convergence = std::move(table);
  res.resolved_stabilization["default"] = cfg.stabilization(cfg.beta);
  return res;
}

ExperimentResults run_soliton(const RunConfig& cfg) {
  cfg.validate();
  ExperimentResults res;
  SolitaryParams sp;
  sp.alpha = cfg.alpha;
  sp.beta = cfg.beta;
  sp.gamma = cfg.gamma;
  sp.c_w = cfg.c_w;
  sp.length = cfg.x_right - cfg.x_left;
  sp.fourier_points = cfg.fourier_points;
  const SolitaryProfile profile = petviashvili_solve(sp, cfg.petviashvili());

  CsvTable prof{"profile", {"x", "U"}, {}};
  for (int j = 0; j < profile.size(); ++j) prof.rows.push_back({profile.grid_point(j), profile.values()[j]});
  res.tables.push_back(std::move(prof));
  res.summary["petviashvili_iterations"] = profile.iterations();
  res.summary["petviashvili_residual"] = profile.residual();
  res.summary["profile_max_abs"] = profile.max_abs();

  const int k = cfg.degrees.front();
  const int n = cfg.elements.front();
  const Mesh mesh = Mesh::uniform(0.0, sp.length, n, true);
  const Basis basis(k);
  const StabParams stab = cfg.stabilization(cfg.beta);
  res.resolved_stabilization["default"] = stab;
  const HdgDiscretization disc(mesh, basis, cfg.problem(cfg.beta), stab);
  const ThetaConfig tc = cfg.theta_config(mesh.h(), k);
  const double x0 = cfg.resolved_shift();
  const FieldCoeffs u0 = profile_to_initial(profile, x0, mesh, basis);

  double norm_u = 0.0;
  for (double v : profile.values()) norm_u += v * v;
  norm_u = std::sqrt(norm_u * sp.length / profile.size());

  const auto snaps = snapshot_steps(cfg, tc);
  const int track_every = std::max(1, static_cast<int>(std::lround(1.0 / tc.effective_dt())));
  std::vector<PeakSample> peaks;
  CsvTable shape{"shape_error", {"time", "shape_error", "peak_position", "amplitude"}, {}};
  SimulationOptions so;
  so.observe_every = 1;
  so.observers.push_back([&](int step, double t, const FieldState& st, const TraceState&) {
    const bool snap = snaps.count(step) > 0;
    if (step % track_every == 0 || snap || step == tc.n_steps()) peaks.push_back(locate_peak(st.u, mesh, t));
    if (!snap) return;
    const double err = l2_error(st.u, traveling_reference(profile, cfg.c_w, t, x0), mesh, basis,
                                2 * (k + 3)) / norm_u;
    const auto& pk = peaks.back();
    shape.rows.push_back({t, err, pk.position, pk.amplitude});
    res.snapshots.push_back(sample_snapshot("snapshot_t" + tag_number(t), st.u, mesh, t));
  });
  const auto sim = run_simulation(disc, u0, tc, so);

  const double final_err = l2_error(sim.state.u, traveling_reference(profile, cfg.c_w, sim.state.time, x0),
                                    mesh, basis, 2 * (k + 3)) / norm_u;
  const double speed = fitted_speed(peaks, sp.length);
  res.summary["final_shape_error"] = final_err;
  res.summary["fitted_speed"] = speed;
  res.summary["speed_relative_error"] = std::abs(speed - cfg.c_w) / std::abs(cfg.c_w);
  res.summary["profile_l2_norm"] = norm_u;
  res.tables.push_back(std::move(shape));
  CsvTable track{"peak_track", {"time", "peak_position", "amplitude"}, {}};
  for (const auto& p : peaks) track.rows.push_back({p.time, p.position, p.amplitude});
  res.tables.push_back(std::move(track));

  Snapshot ref;
  ref.name = "reference_t" + tag_number(sim.state.time);
  ref.time = sim.state.time;
  const auto ref_fn = traveling_reference(profile, cfg.c_w, sim.state.time, x0);
  const auto grid = sample_snapshot("", sim.state.u, mesh, sim.state.time);
  ref.x = grid.x;
  for (double x : ref.x) ref.u.push_back(ref_fn(x));
  res.snapshots.push_back(std::move(ref));
  res.diagnostics.push_back({"diagnostics", sim.diagnostics});
  return res;
}

ExperimentResults run_peakon_limit(const RunConfig& cfg) {
  cfg.validate();
  ExperimentResults res;
  const int k = cfg.degrees.front();
  const Basis basis(k);
  auto exact_at = [](double t) { return [t](double x) { return oh_exact(x, t); }; };

  auto run_one = [&](double beta, int n, bool record) -> std::optional<double> {
    const Mesh mesh = Mesh::uniform(cfg.x_left, cfg.x_right, n, true);
    const StabParams stab = cfg.stabilization(beta);
    const HdgDiscretization disc(mesh, basis, cfg.problem(beta), stab);
    const ThetaConfig tc = cfg.theta_config(mesh.h(), k);
    const std::string tag = "beta" + tag_number(beta) + "_Ne" + std::to_string(n);
    res.resolved_stabilization[tag] = stab;
    try {
      const auto snaps = snapshot_steps(cfg, tc);
      SimulationOptions so;
      if (record) {
        so.observers.push_back([&](int step, double t, const FieldState& st, const TraceState&) {
          if (snaps.count(step)) res.snapshots.push_back(sample_snapshot("snapshot_" + tag + "_t" + tag_number(t), st.u, mesh, t));
        });
      }
      const auto sim = run_simulation(disc, [&](double x) { return peakon_u0(x - cfg.x_left); }, tc, so);
      const double d = l2_error(sim.state.u, [&](double x) { return oh_exact(x - cfg.x_left, sim.state.time); },
                                mesh, basis, 2 * (k + 3));
      if (record) {
        res.snapshots.push_back(sample_snapshot("snapshot_" + tag, sim.state.u, mesh, sim.state.time));
        res.diagnostics.push_back({"diagnostics_" + tag, sim.diagnostics});
      }
      return d;
    } catch (const Error& e) {
      res.failures.push_back(tag + ": " + e.what());
      return std::nullopt;
    }
  };

  const int n0 = cfg.elements.front();
  for (double beta : cfg.betas) {
    const auto d = run_one(beta, n0, true);
    res.limit.emplace_back(beta, d ? *d : kNaN);
  }
  {
    const Mesh mesh = Mesh::uniform(cfg.x_left, cfg.x_right, n0, true);
    const auto init = l2_project([](double x) { return peakon_u0(x); }, mesh, basis);
    res.snapshots.push_back(sample_snapshot("snapshot_initial", init, mesh, 0.0));
    Snapshot ref = sample_snapshot("snapshot_oh_reference", init, mesh, cfg.t_final);
    const auto f = exact_at(cfg.t_final);
    for (std::size_t i = 0; i < ref.x.size(); ++i) ref.u[i] = f(ref.x[i] - cfg.x_left);
    res.snapshots.push_back(std::move(ref));
  }
  if (cfg.elements.size() > 1) {
    const double beta_min = *std::min_element(cfg.betas.begin(), cfg.betas.end());
    ConvergenceTable refine;
    for (int n : cfg.elements) {
      ConvergenceRow row;
      row.degree = k;
      row.n_elements = n;
      const auto d = n == n0 ? std::optional<double>(res.limit[std::distance(
                                   cfg.betas.begin(), std::find(cfg.betas.begin(), cfg.betas.end(), beta_min))]
                                                             .second)
                             : run_one(beta_min, n, false);
      row.ok = d.has_value() && !std::isnan(*d);
      row.error = d ? *d : kNaN;
      refine.rows.push_back(row);
    }
    compute_rates(refine);
    CsvTable t{"peakon_refinement", {"beta", "Ne", "error", "rate"}, {}};
    for (const auto& r : refine.rows) t.rows.push_back({beta_min, static_cast<double>(r.n_elements), r.error, r.rate});
    res.tables.push_back(std::move(t));
  }
  return res;
}

ExperimentResults run_custom(const RunConfig& cfg) {
  cfg.validate();
  ExperimentResults res;
  const int k = cfg.degrees.front();
  const int n = cfg.elements.front();
  const bool periodic = cfg.regime == BoundaryRegime::periodic;
  const Mesh mesh = Mesh::uniform(cfg.x_left, cfg.x_right, n, periodic);
  const Basis basis(k);
  const double len = cfg.x_right - cfg.x_left;

  ProblemConfig p = cfg.problem(cfg.beta);
  std::function<double(double)> u0;
  std::optional<ManufacturedCase> mc;
  std::optional<SolitaryProfile> profile;
  if (cfg.initial_condition == "manufactured") {
    mc = ManufacturedCase{cfg.alpha, cfg.beta, cfg.gamma, cfg.x_left, cfg.x_right};
    const auto m = *mc;
    p.source = [m](double x, double t) { return m.source(x, t); };
    p.bc = m.boundary_data();
    u0 = [m](double x) { return m.u(x, 0.0); };
  } else if (cfg.initial_condition == "sine") {
    u0 = [&](double x) { return std::sin(2.0 * std::numbers::pi * (x - cfg.x_left) / len); };
  } else if (cfg.initial_condition == "gaussian") {
    const double mid = 0.5 * (cfg.x_left + cfg.x_right), w = 0.1 * len;
    u0 = [mid, w](double x) { return std::exp(-((x - mid) / w) * ((x - mid) / w)); };
  } else if (cfg.initial_condition == "peakon") {
    u0 = [&](double x) { return peakon_u0((x - cfg.x_left) / len); };
  } else {
    SolitaryParams sp{cfg.alpha, cfg.beta, cfg.gamma, cfg.c_w, len, cfg.fourier_points};
    profile = petviashvili_solve(sp, cfg.petviashvili());
    const double x0 = cfg.resolved_shift();
    u0 = [&profile, x0](double x) { return profile->evaluate(x - x0); };
  }

  const StabParams stab = cfg.stabilization(cfg.beta);
  res.resolved_stabilization["default"] = stab;
  const HdgDiscretization disc(mesh, basis, p, stab);
  const ThetaConfig tc = cfg.theta_config(mesh.h(), k);
  const auto snaps = snapshot_steps(cfg, tc);
  SimulationOptions so;
  so.observers.push_back([&](int step, double t, const FieldState& st, const TraceState&) {
    if (snaps.count(step)) res.snapshots.push_back(sample_snapshot("snapshot_t" + tag_number(t), st.u, mesh, t));
  });
  const auto sim = run_simulation(disc, u0, tc, so);
  res.snapshots.push_back(sample_snapshot("snapshot_final", sim.state.u, mesh, sim.state.time));
  res.diagnostics.push_back({"diagnostics", sim.diagnostics});
  res.summary["final_energy"] = sim.diagnostics.back().energy;
  res.summary["initial_energy"] = sim.diagnostics.front().energy;
  if (mc) {
    const auto m = *mc;
    res.summary["final_error"] = l2_error(sim.state.u, [&](double x) { return m.u(x, sim.state.time); },
                                          mesh, basis, 2 * (k + 3));
  }
  return res;
}

ExperimentResults run_experiment(const RunConfig& cfg) {
  switch (cfg.kind) {
    case ExperimentKind::convergence: return run_convergence(cfg);
    case ExperimentKind::soliton: return run_soliton(cfg);
    case ExperimentKind::peakon_limit: return run_peakon_limit(cfg);
    case ExperimentKind::custom: return run_custom(cfg);
  }
  throw UsageError("unknown experiment kind");
}

std::string manifest_json(const RunConfig& cfg, const ExperimentResults* results,
                          const std::vector<std::string>& files) {
  nlohmann::ordered_json j;
  j["library"] = "ostrovsky_hdg";
  j["version"] = kLibraryVersion;
  j["experiment"] = to_string(cfg.kind);
  nlohmann::ordered_json config = nlohmann::ordered_json::object();
  for (const auto& [key, value] : to_key_values(cfg)) {
    const auto dot = key.find('.');
    config[key.substr(0, dot)][key.substr(dot + 1)] = value;
  }
  j["config"] = config;
  if (results) {
    nlohmann::ordered_json stab = nlohmann::ordered_json::object();
    for (const auto& [name, s] : results->resolved_stabilization) {
      stab[name] = {{"tau_pu", s.tau_pu},
                    {"tau_vq", s.tau_vq},
                    {"tau_qv", s.tau_qv},
                    {"tau_f", s.tau_f_mode == TauFMode::adaptive ? nlohmann::ordered_json("tilde")
                                                                 : nlohmann::ordered_json(s.tau_f)}};
    }
    j["resolved_stabilization"] = stab;
    nlohmann::ordered_json summary = nlohmann::ordered_json::object();
    for (const auto& [k, v] : results->summary) summary[k] = std::isfinite(v) ? nlohmann::ordered_json(v) : nlohmann::ordered_json(nullptr);
    j["summary"] = summary;
    j["failures"] = results->failures;
  }
  j["outputs"] = files;
  return j.dump(2) + "\n";
}

RunConfig parse_manifest(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("manifest: ") + e.what());
  }
  if (!j.contains("config") || !j["config"].is_object()) throw ConfigError("manifest: missing 'config'");
  KeyValues kv;
  for (const auto& [section, body] : j["config"].items()) {
    if (!body.is_object()) throw ConfigError("manifest: config." + section + " must be an object");
    for (const auto& [key, value] : body.items()) {
      if (!value.is_string()) throw ConfigError("manifest: config." + section + "." + key + " must be a string");
      kv[section + "." + key] = value.get<std::string>();
    }
  }
  return parse_config(kv);
}

namespace {

class CsvWriter {
 public:
  explicit CsvWriter(const std::filesystem::path& path) : path_(path), out_(path) {
    if (!out_) throw IoError("cannot open '" + path.string() + "' for writing");
  }
  void header(const std::vector<std::string>& cols) {
    for (std::size_t i = 0; i < cols.size(); ++i) out_ << (i ? "," : "") << cols[i];
    out_ << "\n";
  }
  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
    out_ << "\n";
  }
  void close() {
    out_.close();
    if (!out_) throw IoError("write failed for '" + path_.string() + "'");
  }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

}  // namespace

std::vector<std::string> emit_outputs(const RunConfig& cfg, const ExperimentResults& results,
                                      const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory '" + dir + "': " + ec.message());
  const fs::path root(dir);
  std::vector<std::string> files;

  if (results.convergence) {
    CsvWriter w(root / "convergence.csv");
    w.header({"k", "Ne", "error", "rate"});
    for (const auto& r : results.convergence->rows) {
      w.row({std::to_string(r.degree), std::to_string(r.n_elements), format_number(r.error),
             format_number(r.rate)});
    }
    w.close();
    files.push_back("convergence.csv");
  }
  if (!results.limit.empty()) {
    CsvWriter w(root / "peakon_limit.csv");
    w.header({"beta", "distance"});
    for (const auto& [b, d] : results.limit) w.row({format_number(b), format_number(d)});
    w.close();
    files.push_back("peakon_limit.csv");
  }
  for (const auto& t : results.tables) {
    CsvWriter w(root / (t.name + ".csv"));
    w.header(t.header);
    for (const auto& r : t.rows) {
      std::vector<std::string> cells;
      for (double v : r) cells.push_back(format_number(v));
      w.row(cells);
    }
    w.close();
    files.push_back(t.name + ".csv");
  }
  for (const auto& s : results.snapshots) {
    CsvWriter w(root / (s.name + ".csv"));
    w.header({"x", "u"});
    for (std::size_t i = 0; i < s.x.size(); ++i) w.row({format_number(s.x[i]), format_number(s.u[i])});
    w.close();
    files.push_back(s.name + ".csv");
  }
  for (const auto& d : results.diagnostics) {
    CsvWriter w(root / (d.name + ".csv"));
    w.header({"step", "time", "energy", "mass", "newton_iters"});
    for (const auto& r : d.records) {
      w.row({std::to_string(r.step), format_number(r.time), format_number(r.energy),
             format_number(r.mass), std::to_string(r.newton_iterations)});
    }
    w.close();
    files.push_back(d.name + ".csv");
  }

  const fs::path manifest = root / "manifest.json";
  std::ofstream out(manifest);
  if (!out) throw IoError("cannot open '" + manifest.string() + "' for writing");
  out << manifest_json(cfg, &results, files);
  if (!out) throw IoError("write failed for '" + manifest.string() + "'");
  files.push_back("manifest.json");
  return files;
}

}  // namespace ostrovsky
