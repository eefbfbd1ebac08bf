#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "sgf/scenario.hpp"
#include "sgf/util.hpp"

namespace {

// Exit codes: 0 ok, 1 configuration/parse error, 2 model-contract violation,
// 3 numerical failure.
constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kContractError = 2;
constexpr int kNumericalError = 3;

sgf::ExecPolicy make_policy(int threads) {
  sgf::ExecPolicy p;
  if (threads == 1) {
    p.mode = sgf::Exec::serial;
    p.threads = 1;
  } else {
    p.mode = sgf::Exec::openmp;
    p.threads = threads;  // 0 = runtime default
  }
  return p;
}

int classify(const std::exception& e) {
  if (dynamic_cast<const sgf::ScenarioError*>(&e)) return kConfigError;
  if (dynamic_cast<const sgf::DimensionError*>(&e)) return kConfigError;
  if (dynamic_cast<const sgf::QpInfeasible*>(&e)) return kContractError;
  if (dynamic_cast<const sgf::ContractError*>(&e)) return kContractError;
  return kNumericalError;
}

std::vector<double> parse_values(const std::string& csv) {
  std::vector<double> out;
  std::size_t pos = 0;
  while (pos < csv.size()) {
    std::size_t next = csv.find(',', pos);
    if (next == std::string::npos) next = csv.size();
    out.push_back(std::stod(csv.substr(pos, next - pos)));
    pos = next + 1;
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"safe-gradient-flow feedback optimization simulator"};
  app.require_subcommand(1);

  std::string scenario_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int threads = 0;

  auto add_common = [&](CLI::App* cmd, bool needs_out) {
    cmd->add_option("--scenario", scenario_path, "scenario JSON file")->required();
    if (needs_out) cmd->add_option("--out", out_dir, "output directory");
    cmd->add_option_function<std::uint64_t>(
        "--seed", [&](std::uint64_t v) { seed = v; seed_set = true; },
        "override the scenario seed for sampling-based estimators");
    cmd->add_option("--threads", threads, "worker threads (1 = serial reference path)");
  };

  CLI::App* simulate = app.add_subcommand("simulate", "run the closed loop, write CSV");
  add_common(simulate, true);
  CLI::App* analyze = app.add_subcommand("analyze", "stability certificate pipeline");
  add_common(analyze, true);
  CLI::App* sweep = app.add_subcommand("sweep", "one run per parameter value");
  add_common(sweep, true);
  std::string sweep_param;
  std::string sweep_values;
  sweep->add_option("--param", sweep_param, "beta | eta | s | kappa")->required();
  sweep->add_option("--values", sweep_values, "comma-separated positive values")
      ->required();
  CLI::App* qp_debug = app.add_subcommand("qp-debug", "dump the controller QP at t0");
  add_common(qp_debug, true);
  CLI::App* validate_cmd = app.add_subcommand("validate", "contract checks only");
  add_common(validate_cmd, false);

  CLI11_PARSE(app, argc, argv);

  try {
    sgf::Scenario sc = sgf::load_scenario(scenario_path);
    if (seed_set) sc.seed = seed;
    const sgf::ExecPolicy exec = make_policy(threads);
    const std::string out = out_dir.empty() ? sc.output_dir : out_dir;

    if (simulate->parsed()) {
      const sgf::RunArtifacts art = sgf::run_simulate(sc, out, exec);
      std::printf("wrote %s (%zu samples)\n", art.csv_path.c_str(), art.traj.size());
      std::printf("input invariance: max gamma = %.3e (%s)\n",
                  art.invariance.max_value, art.invariance.pass ? "pass" : "FAIL");
      if (art.state_set)
        std::printf("state set: max dist = %.3e, bound = %.3e (%s)\n",
                    art.state_set->max_dist, art.state_set->bound,
                    art.state_set->pass ? "pass" : "FAIL");
      std::printf("final |F(z,w)| = %.3e\n", art.final_residual);
      if (art.traj.truncated) {
        std::printf("run truncated: %s\n", art.traj.truncation_reason.c_str());
        return kContractError;
      }
    } else if (analyze->parsed()) {
      const sgf::StabilityReport rep = sgf::run_analyze(sc, out, exec);
      std::printf("u* = [");
      for (Eigen::Index i = 0; i < rep.kkt.u_star.size(); ++i)
        std::printf("%s%.12g", i ? ", " : "", rep.kkt.u_star(i));
      std::printf("],  |F_beta(h(u*,w),u*)| = %.3e\n", rep.kkt_check.f_beta_norm);
      std::printf("e1 = %.6g, e2 = %.6g, L = %.6g, l_Fx = %.6g, l_Fu = %.6g\n",
                  rep.constants.e1, rep.constants.e2, rep.constants.L,
                  rep.constants.l_Fx, rep.constants.l_Fu);
      std::printf("eta = %.3g vs bound %.3g (%s), lambda_M = %.6g, rate = %.6g\n",
                  rep.eta, rep.cert.eta_bound,
                  rep.cert.eta_ok ? "ok" : "EtaOutOfRange", rep.cert.lambda_M,
                  rep.cert.decay_rate);
      std::printf("report: %s\n",
                  (std::filesystem::path(out) / "report.json").string().c_str());
    } else if (sweep->parsed()) {
      const auto rows =
          sgf::run_sweep(sc, sweep_param, parse_values(sweep_values), out, exec);
      for (const auto& r : rows)
        std::printf("%s=%g: %s final_err=%.3e max_gamma=%.3e\n", sweep_param.c_str(),
                    r.value, r.status.c_str(), r.final_err, r.max_gamma);
    } else if (qp_debug->parsed()) {
      const nlohmann::json j = sgf::qp_debug_json(sc);
      std::filesystem::create_directories(out);
      const std::string path =
          (std::filesystem::path(out) / "qp_debug.json").string();
      sgf::write_file(path, j.dump(2) + "\n");
      std::printf("%s\n", j.dump(2).c_str());
    } else if (validate_cmd->parsed()) {
      sgf::run_validate(sc);
      std::printf("all contract checks passed\n");
    }
  } catch (const sgf::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return classify(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kNumericalError;
  }
  return kOk;
}
