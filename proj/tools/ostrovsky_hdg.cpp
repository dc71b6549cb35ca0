#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ostrovsky/error.hpp"
#include "ostrovsky/experiments.hpp"

namespace {

using namespace ostrovsky;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitSolver = 3;
constexpr int kExitPetviashvili = 4;

struct Flags {
  std::string config;
  std::string out;
  std::optional<double> theta;
  std::optional<double> dt;
  std::vector<int> degrees;
  std::vector<int> elements;
  std::vector<double> betas;
  std::vector<std::string> sets;
  bool quiet = false;
};

std::string join_ints(const std::vector<int>& xs) {
  std::string s;
  for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? "," : "") + std::to_string(xs[i]);
  return s;
}

std::string join_doubles(const std::vector<double>& xs) {
  std::string s;
  char buf[40];
  for (std::size_t i = 0; i < xs.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", xs[i]);
    s += (i ? "," : "") + std::string(buf);
  }
  return s;
}

KeyValues flag_overrides(const Flags& f, ExperimentKind kind) {
  KeyValues kv;
  char buf[40];
  if (f.theta) {
    std::snprintf(buf, sizeof buf, "%.17g", *f.theta);
    kv["time.theta"] = buf;
  }
  if (f.dt) {
    std::snprintf(buf, sizeof buf, "%.17g", *f.dt);
    kv["time.dt"] = buf;
  }
  if (!f.degrees.empty()) kv["mesh.degree"] = join_ints(f.degrees);
  if (!f.elements.empty()) kv["mesh.elements"] = join_ints(f.elements);
  if (!f.betas.empty()) {
    if (kind == ExperimentKind::peakon_limit) {
      kv["peakon.betas"] = join_doubles(f.betas);
    } else {
      if (f.betas.size() != 1) throw ConfigError("--beta: this experiment takes a single value");
      kv["problem.beta"] = join_doubles(f.betas);
    }
  }
  for (const auto& s : f.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set: expected key=value, got '" + s + "'");
    kv[s.substr(0, eq)] = s.substr(eq + 1);
  }
  return kv;
}

std::string resolve_output(const RunConfig& cfg, const Flags& f) {
  if (!f.out.empty()) return f.out;
  if (!cfg.output_dir.empty()) return cfg.output_dir;
  const char* root = std::getenv("OSTROVSKY_HDG_OUT");
  const std::filesystem::path base = root && *root ? root : "results";
  return (base / to_string(cfg.kind)).string();
}

void print_summary(const RunConfig& cfg, const ExperimentResults& res, const std::string& dir) {
  if (res.convergence) {
    std::printf("%3s %6s %14s %8s\n", "k", "Ne", "error", "rate");
    for (const auto& r : res.convergence->rows) {
      std::printf("%3d %6d %14.4e %8.3f\n", r.degree, r.n_elements, r.error, r.rate);
    }
  }
  if (!res.limit.empty()) {
    std::printf("%12s %14s\n", "beta", "distance");
    for (const auto& [b, d] : res.limit) std::printf("%12.3e %14.4e\n", b, d);
  }
  for (const auto& [k, v] : res.summary) std::printf("%-26s %.6e\n", k.c_str(), v);
  for (const auto& msg : res.failures) std::printf("failed: %s\n", msg.c_str());
  std::printf("%s outputs written to %s\n", to_string(cfg.kind), dir.c_str());
}

int execute(ExperimentKind kind, const Flags& f) {
  try {
    const KeyValues overrides = flag_overrides(f, kind);
    const RunConfig cfg = f.config.empty() ? parse_config(overrides, kind)
                                           : parse_config_file(f.config, overrides, kind);
    const std::string dir = resolve_output(cfg, f);
    const ExperimentResults res = run_experiment(cfg);
    emit_outputs(cfg, res, dir);
    if (!f.quiet) print_summary(cfg, res, dir);
    return res.failures.empty() ? kExitOk : kExitSolver;
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const UsageError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const PetviashviliError& e) {
    std::cerr << "profile generation failed: " << e.what() << "\n";
    return kExitPetviashvili;
  } catch (const Error& e) {
    std::cerr << "solver failure: " << e.what() << "\n";
    return kExitSolver;
  }
}

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "INI configuration file")->check(CLI::ExistingFile);
  cmd->add_option("--out", f.out, "Output directory");
  cmd->add_option("--theta", f.theta, "Time-stepping parameter in [0.5, 1]");
  cmd->add_option("--dt", f.dt, "Time step");
  cmd->add_option("--degree", f.degrees, "Polynomial degree(s)")->delimiter(',');
  cmd->add_option("--elements", f.elements, "Element count(s)")->delimiter(',');
  cmd->add_option("--beta", f.betas, "Dispersion coefficient, or the beta list for peakon-limit")
      ->delimiter(',');
  cmd->add_option("--set", f.sets, "Override any key, e.g. --set time.t_final=1");
  cmd->add_flag("--quiet", f.quiet, "Suppress the console summary");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"HDG experiments for the Ostrovsky equation"};
  app.set_version_flag("--version", ostrovsky::kLibraryVersion);
  app.require_subcommand(1);

  Flags flags;
  struct Entry {
    const char* name;
    ExperimentKind kind;
    const char* help;
  };
  const Entry entries[] = {
      {"convergence", ExperimentKind::convergence, "Manufactured-solution convergence table"},
      {"soliton", ExperimentKind::soliton, "Solitary-wave propagation from a Petviashvili profile"},
      {"peakon-limit", ExperimentKind::peakon_limit, "Vanishing-dispersion study against the peakon"},
      {"custom", ExperimentKind::custom, "Single run driven entirely by the configuration"},
  };
  std::optional<ExperimentKind> chosen;
  for (const auto& e : entries) {
    auto* cmd = app.add_subcommand(e.name, e.help);
    add_common(cmd, flags);
    cmd->callback([&chosen, kind = e.kind] { chosen = kind; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }
  return execute(*chosen, flags);
}
