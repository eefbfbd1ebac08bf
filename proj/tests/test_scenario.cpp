#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "sgf/scenario.hpp"
#include "sgf/util.hpp"

using namespace sgf;
namespace fs = std::filesystem;

namespace {

std::string scenario_dir() { return SGF_SCENARIO_DIR; }

fs::path temp_dir(const std::string& tag) {
  const fs::path p = fs::temp_directory_path() / ("sgf_test_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Scenario tiny_unicycle() {
  Scenario sc = load_scenario(scenario_dir() + "/unicycle_fig1.json");
  sc.sim.t_end = 0.05;
  sc.sim.record_stride = 10;
  sc.reference_mode = "none";
  sc.state_set_enabled = false;
  return sc;
}

}  // namespace

TEST_CASE("sha256 test vector") {
  CHECK(sha256_hex("abc") ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(sha256_hex("") ==
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST_CASE("bundled scenarios parse and round-trip through the resolved form") {
  for (const char* name :
       {"unicycle_fig1.json", "unicycle_fig1_disturbed.json", "lti_quadratic.json"}) {
    const Scenario sc = load_scenario(scenario_dir() + "/" + name);
    const nlohmann::json resolved = resolved_json(sc);
    const Scenario reloaded = scenario_from_json(resolved);
    CHECK(resolved_json(reloaded) == resolved);
  }
}

TEST_CASE("parse failures raise ScenarioError") {
  const fs::path dir = temp_dir("parse");
  const fs::path bad = dir / "bad.json";
  write_file(bad.string(), "{ not json");
  CHECK_THROWS_AS(load_scenario(bad.string()), ScenarioError);

  write_file(bad.string(), R"({"plant": {"family": "hovercraft"}})");
  CHECK_THROWS_AS(load_scenario(bad.string()), ScenarioError);

  write_file(bad.string(), R"({"plant": {"family": "unicycle"},
    "spec": {"catalog": "not_a_spec"}, "disturbance": [0,0],
    "initial": {"x0": [0,0,0], "u0": [0,0]}})");
  const Scenario sc = load_scenario(bad.string());
  CHECK_THROWS_AS(build_spec(sc), ScenarioError);
}

TEST_CASE("run_simulate writes csv, metadata and monitors") {
  const Scenario sc = tiny_unicycle();
  const fs::path dir = temp_dir("simulate");
  const RunArtifacts art = run_simulate(sc, dir.string());

  CHECK(fs::exists(art.csv_path));
  CHECK(fs::exists(art.metadata_path));
  CHECK(fs::exists(art.monitors_path));
  CHECK(art.invariance.pass);

  const nlohmann::json meta = nlohmann::json::parse(read_file(art.metadata_path));
  CHECK(meta.at("scenario_sha256").get<std::string>().size() == 64);
  CHECK(meta.at("samples").get<std::size_t>() == art.traj.size());
  // resolved scenario embedded in the metadata reloads identically
  const Scenario reloaded = scenario_from_json(meta.at("scenario"));
  CHECK(resolved_json(reloaded) == meta.at("scenario"));
}

TEST_CASE("u0 outside U_c is a contract violation") {
  Scenario sc = tiny_unicycle();
  sc.u0 = (Vector(2) << 20.0, 0.0).finished();
  const fs::path dir = temp_dir("infeasible_u0");
  CHECK_THROWS_AS(run_simulate(sc, dir.string()), ContractError);
}

TEST_CASE("qp debug dump contains problem and certified solution") {
  const Scenario sc = tiny_unicycle();
  const nlohmann::json j = qp_debug_json(sc);
  CHECK(j.at("problem").at("H").size() == 2);
  CHECK(j.at("problem").at("A").size() == 5);
  CHECK(j.at("solution").at("kkt_residual").get<double>() <= 1e-9);
}

TEST_CASE("run_validate passes on the bundled scenarios") {
  CHECK_NOTHROW(run_validate(tiny_unicycle()));
  CHECK_NOTHROW(run_validate(load_scenario(scenario_dir() + "/lti_quadratic.json")));
}

TEST_CASE("single-value sweep reproduces the plain simulation") {
  Scenario sc = tiny_unicycle();
  sc.reference_mode = "oracle";
  const fs::path sweep_dir = temp_dir("sweep_single");
  const fs::path sim_dir = temp_dir("sweep_single_ref");

  const auto rows = run_sweep(sc, "beta", {sc.controller.beta}, sweep_dir.string());
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].status == "ok");

  const RunArtifacts art = run_simulate(sc, sim_dir.string());
  CHECK(rows[0].final_err == art.traj.errors.back());
  // per-run trajectory equals the simulate subcommand's output bit for bit
  CHECK(read_file((sweep_dir / "run_0.csv").string()) ==
        read_file(art.csv_path));

  const std::string summary = read_file((sweep_dir / "sweep.csv").string());
  CHECK(summary.rfind("param,value,status,final_err,max_gamma,tail_slope,"
                      "invariance_pass,eta_ok,certified_rate,Fb_steady_0,"
                      "Fb_steady_1,error\n", 0) == 0);
}

TEST_CASE("sweep records per-row errors and continues") {
  Scenario sc = tiny_unicycle();
  sc.reference_mode = "none";
  const fs::path dir = temp_dir("sweep_errors");
  // beta must be positive: 0 rejected up front
  CHECK_THROWS_AS(run_sweep(sc, "beta", {1.0, -1.0}, dir.string()), ScenarioError);
  CHECK_THROWS_AS(run_sweep(sc, "gamma", {1.0}, dir.string()), ScenarioError);

  // an s outside (0, 1] fails its certificate; the row records the error
  // and the sweep continues. (For this nearly linear problem L ~ 0 pushes
  // s_min toward 1, so s = 1 is the only robustly valid choice.)
  Scenario lti = load_scenario(scenario_dir() + "/lti_quadratic.json");
  lti.sim.t_end = 0.2;
  lti.analysis_n_samples = 100;
  const auto rows = run_sweep(lti, "s", {2.0, 1.0}, dir.string());
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].status == "error");
  CHECK(!rows[0].error.empty());
  CHECK(rows[1].status == "ok");
  CHECK(rows[1].has_certificate);

  // eta rows above the certified bound are flagged but still simulated
  const auto eta_rows = run_sweep(lti, "eta", {1e-6, 50.0}, dir.string());
  REQUIRE(eta_rows.size() == 2);
  CHECK(eta_rows[0].status == "ok");
  CHECK(eta_rows[0].eta_ok);
  CHECK(eta_rows[1].status == "ok");
  CHECK(!eta_rows[1].eta_ok);
}

TEST_CASE("cli binary end to end") {
  const std::string cli = SGF_CLI_PATH;
  const fs::path dir = temp_dir("cli");
  const fs::path tiny = dir / "tiny.json";
  Scenario sc = tiny_unicycle();
  write_file(tiny.string(), resolved_json(sc).dump(2));

  SUBCASE("simulate exits 0") {
    const std::string cmd = cli + " simulate --scenario " + tiny.string() +
                            " --out " + (dir / "out").string() + " >/dev/null 2>&1";
    CHECK(std::system(cmd.c_str()) == 0);
    CHECK(fs::exists(dir / "out" / "trajectory.csv"));
  }
  SUBCASE("parse error exits 1") {
    const fs::path bad = dir / "bad.json";
    write_file(bad.string(), "{");
    const std::string cmd = cli + " simulate --scenario " + bad.string() +
                            " --out " + (dir / "out1").string() + " >/dev/null 2>&1";
    CHECK(WEXITSTATUS(std::system(cmd.c_str())) == 1);
  }
  SUBCASE("contract violation exits 2") {
    Scenario bad_sc = sc;
    bad_sc.u0 = (Vector(2) << 20.0, 0.0).finished();
    const fs::path bad = dir / "u0.json";
    write_file(bad.string(), resolved_json(bad_sc).dump(2));
    const std::string cmd = cli + " simulate --scenario " + bad.string() +
                            " --out " + (dir / "out2").string() + " >/dev/null 2>&1";
    CHECK(WEXITSTATUS(std::system(cmd.c_str())) == 2);
  }
  SUBCASE("validate subcommand") {
    const std::string cmd =
        cli + " validate --scenario " + tiny.string() + " >/dev/null 2>&1";
    CHECK(std::system(cmd.c_str()) == 0);
  }
}
