#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sgf/analysis.hpp"

namespace sgf {

/// Declarative description of one closed-loop experiment: plant family and
/// parameters, optimization spec, controller/simulator settings, disturbance,
/// initial condition, analysis knobs and monitor configuration. Loaded from a
/// JSON file; `resolved_json` materializes every default so that a resolved
/// config reloads to an identical scenario.
struct Scenario {
  std::string name = "scenario";

  // plant
  std::string plant_family;  ///< "lti" or "unicycle"
  Matrix A, B, Ew;           ///< lti only
  double unicycle_gain = 2.0;
  std::optional<Box> u_box_override, w_box_override;

  // spec
  std::string spec_catalog;  ///< catalog name, or "custom"
  std::optional<QuadraticSpecParams> custom_quadratic;

  ControllerConfig controller;
  SimConfig sim;
  Vector w;
  Vector x0, u0;

  std::string reference_mode = "oracle";  ///< "oracle" | "explicit" | "none"
  std::optional<Vector> u_star_explicit;

  // analysis knobs (defaults mirror AnalysisOptions)
  double analysis_kappa = 1.0;
  std::optional<double> analysis_s;
  bool analysis_optimize_kappa = false;
  double analysis_fd_step = 1e-5;
  int analysis_n_samples = 400;
  double analysis_delta_ball = 0.05;
  double analysis_box_radius = 1.0;
  double analysis_r0 = 10.0;
  std::optional<double> analysis_alpha0;
  std::optional<double> analysis_M_u;
  std::optional<DConstants> analysis_d_override;
  int analysis_xeq_points = 7;
  std::uint64_t seed = 1234;

  // monitors
  double invariance_tol = 1e-6;
  bool state_set_enabled = false;
  std::optional<double> state_set_d0;  ///< unset = dist(x0, Xeq) branch only
  double state_set_d1 = 1.0;
  double state_set_d2 = 1.0;

  std::string output_dir = "out";

  std::string raw_text;  ///< original file contents (for the content hash)
};

Scenario scenario_from_json(const nlohmann::json& j);
Scenario load_scenario(const std::string& path);
/// Every field materialized, including defaults; reloading the result yields
/// an identical resolved config.
nlohmann::json resolved_json(const Scenario& sc);

std::unique_ptr<PlantModel> build_plant(const Scenario& sc);
OptimizationSpec build_spec(const Scenario& sc);
AnalysisOptions build_analysis_options(const Scenario& sc, const ExecPolicy& exec);

// Command implementations (shared between the CLI binary and the tests) ----

struct RunArtifacts {
  Trajectory traj;
  std::optional<Vector> u_star;
  InvarianceReport invariance;
  std::optional<StateSetReport> state_set;
  double final_residual = 0.0;  ///< |F(z(t_end), w)|
  std::string csv_path, metadata_path, monitors_path;
};

/// simulate subcommand: runs the scenario, writes trajectory CSV, run
/// metadata (resolved parameters + scenario content hash) and monitor
/// reports into out_dir.
RunArtifacts run_simulate(const Scenario& sc, const std::string& out_dir,
                          const ExecPolicy& exec = {});

/// analyze subcommand: full certificate pipeline; writes report JSON.
StabilityReport run_analyze(const Scenario& sc, const std::string& out_dir,
                            const ExecPolicy& exec = {});
nlohmann::json report_json(const StabilityReport& rep);

struct SweepRow {
  double value = 0.0;
  std::string status = "ok";  ///< "ok" or "error"
  std::string error;
  double final_err = std::numeric_limits<double>::quiet_NaN();
  double max_gamma = std::numeric_limits<double>::quiet_NaN();
  double tail_slope = std::numeric_limits<double>::quiet_NaN();
  bool invariance_pass = false;
  Vector fb_steady;  ///< F_beta(h(u0,w), u0) for this row's parameters
  // certificate columns (eta/s/kappa sweeps only)
  bool has_certificate = false;
  bool eta_ok = false;
  double certified_rate = std::numeric_limits<double>::quiet_NaN();
};

/// sweep subcommand: one simulation per value (parallel over rows), summary
/// CSV written to out_dir. parameter is one of beta, eta, s, kappa.
std::vector<SweepRow> run_sweep(const Scenario& sc, const std::string& parameter,
                                const std::vector<double>& values,
                                const std::string& out_dir,
                                const ExecPolicy& exec = {});
std::string sweep_csv(const std::string& parameter, const std::vector<SweepRow>& rows);

/// qp-debug subcommand: assembles and solves the controller QP at the
/// scenario's initial condition, returns the problem/solution dump.
nlohmann::json qp_debug_json(const Scenario& sc);

/// validate subcommand: contract checks only (spec derivatives, plant
/// invariants, config validity). Throws on violation.
void run_validate(const Scenario& sc);

}  // namespace sgf
