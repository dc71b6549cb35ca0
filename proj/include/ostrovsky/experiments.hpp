#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ostrovsky/hdg_operator.hpp"
#include "ostrovsky/profiles.hpp"
#include "ostrovsky/time_stepper.hpp"

namespace ostrovsky {

inline constexpr const char* kLibraryVersion = "1.0.0";

enum class ExperimentKind { convergence, soliton, peakon_limit, custom };
const char* to_string(ExperimentKind kind);
ExperimentKind experiment_kind_from_string(const std::string& name);

/// fixed: dt as given. mesh_power: dt = dt_factor * h^(k+1) per run.
enum class DtRule { fixed, mesh_power };

/// Fully resolved description of one experiment.
///
/// Unset optionals mean "derived": stabilization from the preset and the
/// run's beta, the soliton shift from the box length.
struct RunConfig {
  ExperimentKind kind = ExperimentKind::convergence;

  double alpha = 1.0;
  double beta = 0.5;
  double gamma = 1.0;
  BoundaryRegime regime = BoundaryRegime::dirichlet_beta_pos;
  double x_left = 0.0;
  double x_right = 6.283185307179586;
  std::string initial_condition = "manufactured";

  std::string stab_preset = "default";
  std::optional<double> tau_pu;
  std::optional<double> tau_vq;
  std::optional<double> tau_qv;
  /// Empty: preset. NaN is never stored; "tilde" maps to adaptive mode.
  std::optional<double> tau_f;
  bool tau_f_tilde = false;

  double theta = 0.5;
  double dt = 1e-3;
  DtRule dt_rule = DtRule::fixed;
  double dt_factor = 0.1;
  double t_final = 0.5;
  double newton_tol = 1e-10;
  int newton_max_iter = 25;

  std::vector<int> degrees{1};
  std::vector<int> elements{2, 4, 8, 16, 32};

  std::string output_dir;
  std::vector<double> snapshot_times;
  std::uint64_t seed = 0;
  int threads = 1;

  double c_w = -0.75;
  int fourier_points = 512;
  std::optional<double> shift;
  double relaxation = 0.8;
  double exponent = 2.0;
  double petviashvili_tol = 1e-10;
  int petviashvili_max_iter = 500;

  std::vector<double> betas;

  bool operator==(const RunConfig&) const = default;

  /// Throws ConfigError naming the offending key.
  void validate() const;

  ProblemConfig problem(double beta_value) const;
  StabParams stabilization(double beta_value) const;
  ThetaConfig theta_config(double h, int degree) const;
  PetviashviliConfig petviashvili() const;
  double resolved_shift() const { return shift ? *shift : 0.5 * (x_right - x_left); }
};

/// Defaults of each experiment, matching the benchmark setups.
RunConfig default_config(ExperimentKind kind);

using KeyValues = std::map<std::string, std::string>;

/// INI text with [section] headers, flattened to "section.key".
KeyValues read_ini_string(const std::string& text);
KeyValues read_ini_file(const std::string& path);

/// Builds a validated RunConfig. The kind comes from run.kind or the
/// argument; unknown keys and malformed values are rejected.
RunConfig parse_config(const KeyValues& values, std::optional<ExperimentKind> kind = std::nullopt);
RunConfig parse_config_file(const std::string& path, const KeyValues& overrides = {},
                            std::optional<ExperimentKind> kind = std::nullopt);

/// Every key of the configuration, including defaults.
KeyValues to_key_values(const RunConfig& cfg);
std::vector<std::string> known_keys();

struct ConvergenceRow {
  int degree = 0;
  int n_elements = 0;
  double error = 0.0;
  /// NaN on the first row of each degree.
  double rate = 0.0;
  bool ok = true;
  std::string failure;
};

struct ConvergenceTable {
  std::vector<ConvergenceRow> rows;
};

/// log(e_coarse / e_fine) / log(N_fine / N_coarse) for successive rows of
/// the same degree; log2 of the error ratio for doubling.
void compute_rates(ConvergenceTable& table);

struct Snapshot {
  std::string name;
  double time = 0.0;
  std::vector<double> x;
  std::vector<double> u;
};

struct DiagnosticsSeries {
  std::string name;
  std::vector<DiagnosticsRecord> records;
};

/// Free-form table written as "<name>.csv".
struct CsvTable {
  std::string name;
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};

struct PeakSample {
  double time = 0.0;
  double position = 0.0;
  double amplitude = 0.0;
};

struct ExperimentResults {
  std::optional<ConvergenceTable> convergence;
  /// (beta, distance) rows of the beta-limit study.
  std::vector<std::pair<double, double>> limit;
  std::vector<Snapshot> snapshots;
  std::vector<DiagnosticsSeries> diagnostics;
  std::vector<CsvTable> tables;
  std::vector<std::string> failures;
  std::map<std::string, double> summary;
  std::map<std::string, StabParams> resolved_stabilization;
};

/// Samples of u_h at 8 equispaced points per element, endpoints included.
Snapshot sample_snapshot(const std::string& name, const FieldCoeffs& u, const Mesh& mesh,
                         double time);

/// Position and value of the extremum of |u_h| with parabolic refinement.
PeakSample locate_peak(const FieldCoeffs& u, const Mesh& mesh, double time);

/// Least-squares slope of periodically unwrapped peak positions.
double fitted_speed(const std::vector<PeakSample>& samples, double period);

ExperimentResults run_convergence(const RunConfig& cfg);
ExperimentResults run_soliton(const RunConfig& cfg);
ExperimentResults run_peakon_limit(const RunConfig& cfg);
ExperimentResults run_custom(const RunConfig& cfg);
ExperimentResults run_experiment(const RunConfig& cfg);

/// JSON manifest: resolved configuration, library version, outputs, failures.
std::string manifest_json(const RunConfig& cfg, const ExperimentResults* results = nullptr,
                          const std::vector<std::string>& files = {});
RunConfig parse_manifest(const std::string& json_text);

/// Writes CSVs and manifest.json under dir; returns the written file names.
std::vector<std::string> emit_outputs(const RunConfig& cfg, const ExperimentResults& results,
                                      const std::string& dir);

/// Fixed-format number used in every CSV.
std::string format_number(double value);

}  // namespace ostrovsky
