#include "sgf/scenario.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "sgf/util.hpp"

namespace sgf {

namespace {

using nlohmann::json;

Vector vec_from_json(const json& j, const char* name) {
  if (!j.is_array()) throw ScenarioError(std::string(name) + ": expected array");
  Vector v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw ScenarioError(std::string(name) + ": expected number");
    v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  }
  return v;
}

Matrix mat_from_json(const json& j, const char* name) {
  if (!j.is_array() || j.empty())
    throw ScenarioError(std::string(name) + ": expected array of rows");
  const std::size_t cols = j[0].size();
  Matrix m(j.size(), cols);
  for (std::size_t r = 0; r < j.size(); ++r) {
    if (!j[r].is_array() || j[r].size() != cols)
      throw ScenarioError(std::string(name) + ": ragged rows");
    for (std::size_t c = 0; c < cols; ++c)
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = j[r][c].get<double>();
  }
  return m;
}

json json_from_vec(const Vector& v) {
  json j = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) j.push_back(v(i));
  return j;
}

json json_from_mat(const Matrix& m) {
  json j = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    j.push_back(row);
  }
  return j;
}

json jnum(double v) {
  if (!std::isfinite(v)) return nullptr;
  return v;
}

std::string g17(double v) {
  if (std::isnan(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::optional<Box> box_from_json(const json& j) {
  if (j.is_null()) return std::nullopt;
  Box b;
  b.lo = vec_from_json(j.at("lo"), "box.lo");
  b.hi = vec_from_json(j.at("hi"), "box.hi");
  return b;
}

json json_from_box(const std::optional<Box>& b) {
  if (!b) return nullptr;
  return json{{"lo", json_from_vec(b->lo)}, {"hi", json_from_vec(b->hi)}};
}

void check_consistency(const Scenario& sc, const PlantModel& plant,
                       const OptimizationSpec& spec) {
  if (plant.output_dim() != spec.n_x || plant.input_dim() != spec.n_u)
    throw ScenarioError("scenario: spec dimensions do not match the plant");
  if (sc.x0.size() != plant.state_dim())
    throw ScenarioError("scenario: x0 has wrong dimension");
  if (sc.u0.size() != plant.input_dim())
    throw ScenarioError("scenario: u0 has wrong dimension");
  if (sc.w.size() != plant.dist_dim())
    throw ScenarioError("scenario: disturbance has wrong dimension");
  if (sc.u_star_explicit && sc.u_star_explicit->size() != plant.input_dim())
    throw ScenarioError("scenario: u_star has wrong dimension");
}

}  // namespace

Scenario scenario_from_json(const json& j) {
  Scenario sc;
  try {
    sc.name = j.value("name", std::string("scenario"));

    const json& pl = j.at("plant");
    sc.plant_family = pl.at("family").get<std::string>();
    if (sc.plant_family == "lti") {
      sc.A = mat_from_json(pl.at("A"), "plant.A");
      sc.B = mat_from_json(pl.at("B"), "plant.B");
      if (pl.contains("Ew") && !pl["Ew"].is_null() && !pl["Ew"].empty())
        sc.Ew = mat_from_json(pl["Ew"], "plant.Ew");
      else
        sc.Ew = Matrix::Zero(sc.A.rows(), 0);
    } else if (sc.plant_family == "unicycle") {
      sc.unicycle_gain = pl.value("gain", 2.0);
    } else {
      throw ScenarioError("unknown plant family: " + sc.plant_family);
    }
    if (pl.contains("u_box")) sc.u_box_override = box_from_json(pl["u_box"]);
    if (pl.contains("w_box")) sc.w_box_override = box_from_json(pl["w_box"]);

    const json& sp = j.at("spec");
    if (sp.contains("catalog") && !sp["catalog"].is_null()) {
      sc.spec_catalog = sp["catalog"].get<std::string>();
    } else {
      sc.spec_catalog = "custom";
      const json& q = sp.at("custom_quadratic");
      QuadraticSpecParams p;
      p.Q_u = mat_from_json(q.at("Q_u"), "Q_u");
      p.q_u = vec_from_json(q.at("q_u"), "q_u");
      p.Q_x = mat_from_json(q.at("Q_x"), "Q_x");
      p.q_x = vec_from_json(q.at("q_x"), "q_x");
      if (q.contains("ell_rows") && !q["ell_rows"].is_null() && !q["ell_rows"].empty()) {
        p.ell_rows = mat_from_json(q["ell_rows"], "ell_rows");
        p.ell_rhs = vec_from_json(q.at("ell_rhs"), "ell_rhs");
      } else {
        p.ell_rows = Matrix(0, p.Q_x.rows());
        p.ell_rhs = Vector(0);
      }
      if (q.contains("u_lo") && !q["u_lo"].is_null()) {
        p.u_lo = vec_from_json(q["u_lo"], "u_lo");
        p.u_hi = vec_from_json(q.at("u_hi"), "u_hi");
      }
      sc.custom_quadratic = p;
    }

    const json& ct = j.value("controller", json::object());
    sc.controller.beta = ct.value("beta", 10.0);
    sc.controller.eta = ct.value("eta", 0.1);
    sc.controller.qp_tol = ct.value("qp_tol", 1e-9);
    sc.controller.qp_max_iter = ct.value("qp_max_iter", 200);

    const json& sm = j.value("sim", json::object());
    sc.sim.dt = sm.value("dt", 1e-3);
    sc.sim.t_end = sm.value("t_end", 10.0);
    const std::string integ = sm.value("integrator", std::string("rk4"));
    if (integ == "rk4")
      sc.sim.integrator = Integrator::rk4;
    else if (integ == "euler")
      sc.sim.integrator = Integrator::euler;
    else
      throw ScenarioError("unknown integrator: " + integ);
    sc.sim.record_stride = sm.value("record_stride", 1);
    sc.sim.halt_on_infeasible = sm.value("halt_on_infeasible", true);

    sc.w = vec_from_json(j.at("disturbance"), "disturbance");
    sc.x0 = vec_from_json(j.at("initial").at("x0"), "initial.x0");
    sc.u0 = vec_from_json(j.at("initial").at("u0"), "initial.u0");

    const json& ref = j.value("reference", json::object());
    sc.reference_mode = ref.value("mode", std::string("oracle"));
    if (sc.reference_mode == "explicit")
      sc.u_star_explicit = vec_from_json(ref.at("u_star"), "reference.u_star");
    else if (sc.reference_mode != "oracle" && sc.reference_mode != "none")
      throw ScenarioError("unknown reference mode: " + sc.reference_mode);

    const json& an = j.value("analysis", json::object());
    sc.analysis_kappa = an.value("kappa", 1.0);
    if (an.contains("s") && !an["s"].is_null()) sc.analysis_s = an["s"].get<double>();
    sc.analysis_optimize_kappa = an.value("optimize_kappa", false);
    sc.analysis_fd_step = an.value("fd_step", 1e-5);
    sc.analysis_n_samples = an.value("n_samples", 400);
    sc.analysis_delta_ball = an.value("delta_ball", 0.05);
    sc.analysis_box_radius = an.value("box_radius", 1.0);
    sc.analysis_r0 = an.value("r0", 10.0);
    if (an.contains("alpha0") && !an["alpha0"].is_null())
      sc.analysis_alpha0 = an["alpha0"].get<double>();
    if (an.contains("M_u") && !an["M_u"].is_null())
      sc.analysis_M_u = an["M_u"].get<double>();
    if (an.contains("d_constants") && !an["d_constants"].is_null()) {
      DConstants d;
      const json& dj = an["d_constants"];
      d.d1 = dj.at("d1").get<double>();
      d.d2 = dj.at("d2").get<double>();
      d.d3 = dj.at("d3").get<double>();
      d.d4 = dj.at("d4").get<double>();
      d.d5 = dj.at("d5").get<double>();
      d.source = "override";
      sc.analysis_d_override = d;
    }
    sc.analysis_xeq_points = an.value("xeq_points_per_dim", 7);
    sc.seed = j.value("seed", static_cast<std::uint64_t>(1234));

    const json& mon = j.value("monitors", json::object());
    sc.invariance_tol = mon.value("invariance_tol", 1e-6);
    const json& ss = mon.value("state_set", json::object());
    sc.state_set_enabled = ss.value("enabled", false);
    if (ss.contains("d0") && ss["d0"].is_number())
      sc.state_set_d0 = ss["d0"].get<double>();
    sc.state_set_d1 = ss.value("d1", 1.0);
    sc.state_set_d2 = ss.value("d2", 1.0);

    sc.output_dir = j.value("output_dir", std::string("out"));
  } catch (const json::exception& e) {
    throw ScenarioError(std::string("scenario parse error: ") + e.what());
  }
  return sc;
}

Scenario load_scenario(const std::string& path) {
  const std::string text = read_file(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ScenarioError("scenario parse error in " + path + ": " + e.what());
  }
  Scenario sc = scenario_from_json(j);
  sc.raw_text = text;
  return sc;
}

json resolved_json(const Scenario& sc) {
  json plant{{"family", sc.plant_family}};
  if (sc.plant_family == "lti") {
    plant["A"] = json_from_mat(sc.A);
    plant["B"] = json_from_mat(sc.B);
    plant["Ew"] = json_from_mat(sc.Ew);
  } else {
    plant["gain"] = sc.unicycle_gain;
  }
  plant["u_box"] = json_from_box(sc.u_box_override);
  plant["w_box"] = json_from_box(sc.w_box_override);

  json spec;
  if (sc.spec_catalog != "custom") {
    spec["catalog"] = sc.spec_catalog;
  } else {
    spec["catalog"] = nullptr;
    const QuadraticSpecParams& p = *sc.custom_quadratic;
    spec["custom_quadratic"] =
        json{{"Q_u", json_from_mat(p.Q_u)},     {"q_u", json_from_vec(p.q_u)},
             {"Q_x", json_from_mat(p.Q_x)},     {"q_x", json_from_vec(p.q_x)},
             {"ell_rows", json_from_mat(p.ell_rows)},
             {"ell_rhs", json_from_vec(p.ell_rhs)},
             {"u_lo", p.u_lo.size() ? json_from_vec(p.u_lo) : json(nullptr)},
             {"u_hi", p.u_hi.size() ? json_from_vec(p.u_hi) : json(nullptr)}};
  }

  json an{{"kappa", sc.analysis_kappa},
          {"s", sc.analysis_s ? json(*sc.analysis_s) : json(nullptr)},
          {"optimize_kappa", sc.analysis_optimize_kappa},
          {"fd_step", sc.analysis_fd_step},
          {"n_samples", sc.analysis_n_samples},
          {"delta_ball", sc.analysis_delta_ball},
          {"box_radius", sc.analysis_box_radius},
          {"r0", sc.analysis_r0},
          {"alpha0", sc.analysis_alpha0 ? json(*sc.analysis_alpha0) : json(nullptr)},
          {"M_u", sc.analysis_M_u ? json(*sc.analysis_M_u) : json(nullptr)},
          {"xeq_points_per_dim", sc.analysis_xeq_points}};
  if (sc.analysis_d_override) {
    const DConstants& d = *sc.analysis_d_override;
    an["d_constants"] = json{{"d1", d.d1}, {"d2", d.d2}, {"d3", d.d3},
                             {"d4", d.d4}, {"d5", d.d5}};
  } else {
    an["d_constants"] = nullptr;
  }

  json ref{{"mode", sc.reference_mode}};
  if (sc.u_star_explicit) ref["u_star"] = json_from_vec(*sc.u_star_explicit);

  return json{
      {"name", sc.name},
      {"plant", plant},
      {"spec", spec},
      {"controller",
       {{"beta", sc.controller.beta},
        {"eta", sc.controller.eta},
        {"qp_tol", sc.controller.qp_tol},
        {"qp_max_iter", sc.controller.qp_max_iter}}},
      {"sim",
       {{"dt", sc.sim.dt},
        {"t_end", sc.sim.t_end},
        {"integrator", sc.sim.integrator == Integrator::rk4 ? "rk4" : "euler"},
        {"record_stride", sc.sim.record_stride},
        {"halt_on_infeasible", sc.sim.halt_on_infeasible}}},
      {"disturbance", json_from_vec(sc.w)},
      {"initial", {{"x0", json_from_vec(sc.x0)}, {"u0", json_from_vec(sc.u0)}}},
      {"reference", ref},
      {"analysis", an},
      {"monitors",
       {{"invariance_tol", sc.invariance_tol},
        {"state_set",
         {{"enabled", sc.state_set_enabled},
          {"d0", sc.state_set_d0 ? json(*sc.state_set_d0) : json(nullptr)},
          {"d1", sc.state_set_d1},
          {"d2", sc.state_set_d2}}}}},
      {"seed", sc.seed},
      {"output_dir", sc.output_dir}};
}

std::unique_ptr<PlantModel> build_plant(const Scenario& sc) {
  std::unique_ptr<PlantModel> plant;
  if (sc.plant_family == "lti")
    plant = std::make_unique<LtiPlant>(sc.A, sc.B, sc.Ew);
  else if (sc.plant_family == "unicycle")
    plant = std::make_unique<UnicyclePlant>(sc.unicycle_gain);
  else
    throw ScenarioError("unknown plant family: " + sc.plant_family);
  if (sc.u_box_override) {
    plant->u_lo = sc.u_box_override->lo;
    plant->u_hi = sc.u_box_override->hi;
  }
  if (sc.w_box_override) {
    plant->w_lo = sc.w_box_override->lo;
    plant->w_hi = sc.w_box_override->hi;
  }
  return plant;
}

OptimizationSpec build_spec(const Scenario& sc) {
  if (sc.spec_catalog != "custom") return spec_by_name(sc.spec_catalog);
  return make_quadratic_spec(*sc.custom_quadratic);
}

AnalysisOptions build_analysis_options(const Scenario& sc, const ExecPolicy& exec) {
  AnalysisOptions opt;
  opt.ctrl = sc.controller;
  opt.fd_step = sc.analysis_fd_step;
  opt.n_samples = sc.analysis_n_samples;
  opt.delta_ball = sc.analysis_delta_ball;
  opt.box_radius = sc.analysis_box_radius;
  opt.kappa = sc.analysis_kappa;
  opt.s = sc.analysis_s;
  opt.optimize_kappa = sc.analysis_optimize_kappa;
  opt.d_override = sc.analysis_d_override;
  opt.r0 = sc.analysis_r0;
  opt.alpha0 = sc.analysis_alpha0;
  opt.M_u = sc.analysis_M_u;
  opt.u_box = sc.u_box_override;
  opt.xeq_points_per_dim = sc.analysis_xeq_points;
  opt.x0 = sc.x0;
  opt.seed = sc.seed;
  opt.exec = exec;
  return opt;
}

namespace {

std::optional<Vector> resolve_reference(const Scenario& sc, const PlantModel& plant,
                                        const OptimizationSpec& spec) {
  if (sc.reference_mode == "none") return std::nullopt;
  if (sc.reference_mode == "explicit") return sc.u_star_explicit;
  NlpOracleOptions opt;
  return solve_target_problem(spec, plant, sc.w, sc.u0, opt).u_star;
}

}  // namespace

RunArtifacts run_simulate(const Scenario& sc, const std::string& out_dir,
                          const ExecPolicy& exec) {
  const auto plant = build_plant(sc);
  const OptimizationSpec spec = build_spec(sc);
  check_consistency(sc, *plant, spec);
  validate(sc.controller);
  validate(sc.sim);

  RunArtifacts art;
  art.u_star = resolve_reference(sc, *plant, spec);
  art.traj = simulate(*plant, spec, sc.controller, sc.sim, sc.x0, sc.u0, sc.w,
                      art.u_star);
  art.invariance = monitor_input_invariance(art.traj, spec, sc.invariance_tol);

  Matrix xeq;
  if (sc.state_set_enabled) {
    const Box u_box = sc.u_box_override.value_or(Box{plant->u_lo, plant->u_hi});
    xeq = sample_equilibrium_set(*plant, sc.w, u_box, sc.analysis_xeq_points,
                                 sc.seed + 9);
    double d0;
    if (sc.state_set_d0) {
      d0 = *sc.state_set_d0;
    } else {
      const Vector y0 = plant->measure(sc.x0, sc.w);
      d0 = std::numeric_limits<double>::infinity();
      for (Eigen::Index i = 0; i < xeq.rows(); ++i)
        d0 = std::min(d0, (y0.transpose() - xeq.row(i)).norm());
    }
    art.state_set =
        monitor_state_set(art.traj, xeq, d0, sc.state_set_d1, sc.state_set_d2);
  }

  art.final_residual = interconnection_residual(
      *plant, spec, sc.controller, art.traj.states.back(), art.traj.inputs.back(),
      sc.w);

  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  art.csv_path = (fs::path(out_dir) / "trajectory.csv").string();
  write_trajectory_csv(art.traj, art.csv_path);

  json monitors{{"input_invariance",
                 {{"max_gamma", jnum(art.invariance.max_value)},
                  {"argmax_time", art.invariance.argmax_time},
                  {"argmax_index", art.invariance.argmax_index},
                  {"tol", art.invariance.tol},
                  {"pass", art.invariance.pass}}}};
  if (art.state_set) {
    monitors["state_set"] = {{"max_dist", art.state_set->max_dist},
                             {"bound", art.state_set->bound},
                             {"diameter", art.state_set->diameter},
                             {"pass", art.state_set->pass}};
  } else {
    monitors["state_set"] = nullptr;
  }
  art.monitors_path = (fs::path(out_dir) / "monitors.json").string();
  write_file(art.monitors_path, monitors.dump(2) + "\n");

  const std::string raw =
      sc.raw_text.empty() ? resolved_json(sc).dump(2) : sc.raw_text;
  json meta{{"scenario", resolved_json(sc)},
            {"scenario_sha256", sha256_hex(raw)},
            {"u_star", art.u_star ? json_from_vec(*art.u_star) : json(nullptr)},
            {"final",
             {{"t", art.traj.times.back()},
              {"x", json_from_vec(art.traj.states.back())},
              {"u", json_from_vec(art.traj.inputs.back())},
              {"err", art.traj.has_reference ? jnum(art.traj.errors.back()) : json(nullptr)}}},
            {"interconnection_residual", jnum(art.final_residual)},
            {"truncated", art.traj.truncated},
            {"samples", art.traj.size()}};
  art.metadata_path = (fs::path(out_dir) / "metadata.json").string();
  write_file(art.metadata_path, meta.dump(2) + "\n");
  return art;
}

json report_json(const StabilityReport& rep) {
  json j;
  j["eta"] = rep.eta;
  j["u_star"] = json_from_vec(rep.kkt.u_star);
  j["kkt"] = {{"multipliers", json_from_vec(rep.kkt.multipliers)},
              {"active_set", rep.kkt.active_set},
              {"residual", jnum(rep.kkt.kkt_residual)},
              {"licq_ok", rep.kkt.licq_ok},
              {"licq_min_singular", jnum(rep.kkt.licq_min_singular)},
              {"strict_complementarity_ok", rep.kkt.strict_complementarity_ok},
              {"min_active_multiplier", jnum(rep.kkt.min_active_multiplier)},
              {"iterations", rep.kkt.iterations}};
  j["equilibrium_equivalence"] = {{"f_beta_norm_at_u_star", jnum(rep.kkt_check.f_beta_norm)},
                {"kkt_pass", rep.kkt_check.pass},
                {"stationarity", jnum(rep.kkt_check.stationarity)}};
  j["E"] = json_from_mat(rep.jac.E);
  j["E_eigenvalues"] = {{"real", json_from_vec(rep.jac.eig_real)},
                        {"imag", json_from_vec(rep.jac.eig_imag)},
                        {"symmetric_part", json_from_vec(rep.jac.eig_sym)},
                        {"sym_raw_disagree", rep.jac.sym_raw_disagree},
                        {"fd_consistency", jnum(rep.jac.fd_consistency)}};
  j["P"] = json_from_mat(rep.P);
  j["lyapunov_residual"] = jnum(rep.lyapunov_residual);
  j["constants"] = {
      {"d1", jnum(rep.constants.d1)},       {"d2", jnum(rep.constants.d2)},
      {"d3", jnum(rep.constants.d3)},       {"d4", jnum(rep.constants.d4)},
      {"d5", jnum(rep.constants.d5)},       {"d_source", rep.d.source},
      {"l_Fx", jnum(rep.constants.l_Fx)},   {"l_Fx_raw", jnum(rep.l_Fx_est.raw)},
      {"l_Fu", jnum(rep.constants.l_Fu)},   {"l_Fu_raw", jnum(rep.l_Fu_est.raw)},
      {"l_hu", jnum(rep.constants.l_hu)},   {"l_hw", jnum(rep.constants.l_hw)},
      {"e1", jnum(rep.constants.e1)},       {"e2", jnum(rep.constants.e2)},
      {"L", jnum(rep.constants.L)},         {"L_raw", jnum(rep.remainder.L_raw)},
      {"delta", jnum(rep.constants.delta)}, {"kappa", jnum(rep.constants.kappa)},
      {"s", jnum(rep.constants.s)},         {"M_u", jnum(rep.constants.M_u)},
      {"alpha0", jnum(rep.constants.alpha0)}, {"r0", jnum(rep.constants.r0)},
      {"d0", jnum(rep.constants.d0)},       {"diam_Xeq", jnum(rep.constants.diam_Xeq)}};
  j["certificate"] = {{"s_min", jnum(rep.cert.s_min)},
                      {"theta", jnum(rep.cert.theta)},
                      {"M", {jnum(rep.cert.m11), jnum(rep.cert.m12), jnum(rep.cert.m22)}},
                      {"lambda_M", jnum(rep.cert.lambda_M)},
                      {"M_positive_definite", rep.cert.M_positive_definite},
                      {"eta_star_1", jnum(rep.cert.eta_star_1)},
                      {"eta_star_2", jnum(rep.cert.eta_star_2)},
                      {"eta_bound", jnum(rep.cert.eta_bound)},
                      {"eta_ok", rep.cert.eta_ok},
                      {"r1", jnum(rep.cert.r1)},
                      {"r2", jnum(rep.cert.r2)},
                      {"r_bar", jnum(rep.cert.r_bar)},
                      {"decay_rate", jnum(rep.cert.decay_rate)},
                      {"input_radius", jnum(rep.cert.input_radius)},
                      {"state_distance_bound", jnum(rep.cert.state_distance_bound)},
                      {"alpha0_bound", jnum(rep.cert.alpha0_bound)},
                      {"alpha0_bound_lfx", jnum(rep.cert.alpha0_bound_lfx)},
                      {"alpha0_bound_d4", jnum(rep.cert.alpha0_bound_d4)},
                      {"alpha0_binding", rep.cert.alpha0_binding},
                      {"alpha0_ok", rep.cert.alpha0_ok}};
  j["kappa_used"] = jnum(rep.kappa_used);
  return j;
}

StabilityReport run_analyze(const Scenario& sc, const std::string& out_dir,
                            const ExecPolicy& exec) {
  const auto plant = build_plant(sc);
  const OptimizationSpec spec = build_spec(sc);
  check_consistency(sc, *plant, spec);
  const AnalysisOptions opt = build_analysis_options(sc, exec);
  StabilityReport rep = analyze(spec, *plant, sc.w, sc.u0, sc.controller.eta, opt);

  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  write_file((fs::path(out_dir) / "report.json").string(),
             report_json(rep).dump(2) + "\n");
  return rep;
}

std::vector<SweepRow> run_sweep(const Scenario& sc, const std::string& parameter,
                                const std::vector<double>& values,
                                const std::string& out_dir, const ExecPolicy& exec) {
  if (parameter != "beta" && parameter != "eta" && parameter != "s" &&
      parameter != "kappa")
    throw ScenarioError("sweep: parameter must be one of beta, eta, s, kappa");
  for (double v : values)
    if (!(v > 0)) throw ScenarioError("sweep: values must be positive");

  const auto plant = build_plant(sc);
  const OptimizationSpec spec = build_spec(sc);
  check_consistency(sc, *plant, spec);

  // One oracle solve shared by all rows (the target problem does not depend
  // on the swept parameter).
  const std::optional<Vector> u_star = resolve_reference(sc, *plant, spec);

  // Base constants for certificate re-evaluation on eta/s/kappa sweeps.
  std::optional<StabilityConstants> base_constants;
  if (parameter != "beta") {
    try {
      const AnalysisOptions opt = build_analysis_options(sc, exec);
      base_constants =
          analyze(spec, *plant, sc.w, sc.u0, sc.controller.eta, opt).constants;
    } catch (const Error&) {
      // certificate columns stay empty
    }
  }

  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  std::vector<SweepRow> rows(values.size());
  parallel_for(
      static_cast<std::int64_t>(values.size()),
      [&](std::int64_t i) {
        SweepRow& row = rows[i];
        row.value = values[i];
        Scenario run = sc;
        if (parameter == "beta") run.controller.beta = values[i];
        if (parameter == "eta") run.controller.eta = values[i];
        try {
          const Trajectory traj =
              simulate(*plant, spec, run.controller, run.sim, run.x0, run.u0,
                       run.w, u_star);
          const InvarianceReport inv =
              monitor_input_invariance(traj, spec, sc.invariance_tol);
          row.max_gamma = inv.max_value;
          row.invariance_pass = inv.pass;
          if (traj.has_reference) {
            row.final_err = traj.errors.back();
            row.tail_slope = tail_log_slope(traj);
          }
          row.fb_steady = safe_gradient_flow(
              spec, plant->steady_state(run.u0, run.w), run.u0,
              plant->sensitivity(run.u0), run.controller);
          write_trajectory_csv(
              traj, (fs::path(out_dir) / ("run_" + std::to_string(i) + ".csv")).string());
          if (base_constants) {
            StabilityConstants c = *base_constants;
            double eta = sc.controller.eta;
            if (parameter == "eta") eta = values[i];
            if (parameter == "s") c.s = values[i];
            if (parameter == "kappa") c.kappa = values[i];
            const CertificateResult cert = evaluate_certificate(c, eta);
            row.has_certificate = true;
            row.eta_ok = cert.eta_ok;
            row.certified_rate = cert.decay_rate;
          }
        } catch (const Error& e) {
          row.status = "error";
          row.error = e.what();
        }
      },
      exec);

  write_file((fs::path(out_dir) / "sweep.csv").string(), sweep_csv(parameter, rows));
  return rows;
}

std::string sweep_csv(const std::string& parameter, const std::vector<SweepRow>& rows) {
  const Eigen::Index nfb = [&] {
    for (const auto& r : rows)
      if (r.fb_steady.size() > 0) return r.fb_steady.size();
    return Eigen::Index(0);
  }();
  std::string out = "param,value,status,final_err,max_gamma,tail_slope,"
                    "invariance_pass,eta_ok,certified_rate";
  for (Eigen::Index i = 0; i < nfb; ++i) out += ",Fb_steady_" + std::to_string(i);
  out += ",error\n";
  for (const auto& r : rows) {
    out += parameter + "," + g17(r.value) + "," + r.status + "," + g17(r.final_err) +
           "," + g17(r.max_gamma) + "," + g17(r.tail_slope) + "," +
           (r.invariance_pass ? "1" : "0") + "," +
           (r.has_certificate ? (r.eta_ok ? "1" : "0") : std::string()) + "," +
           (r.has_certificate ? g17(r.certified_rate) : std::string());
    for (Eigen::Index i = 0; i < nfb; ++i)
      out += "," + (r.fb_steady.size() > i ? g17(r.fb_steady(i)) : std::string());
    std::string err = r.error;
    for (char& ch : err)
      if (ch == ',' || ch == '\n') ch = ';';
    out += "," + err + "\n";
  }
  return out;
}

json qp_debug_json(const Scenario& sc) {
  const auto plant = build_plant(sc);
  const OptimizationSpec spec = build_spec(sc);
  check_consistency(sc, *plant, spec);

  const Vector y0 = plant->measure(sc.x0, sc.w);
  const QpProblem qp = assemble_controller_qp(spec, y0, sc.u0,
                                              plant->sensitivity(sc.u0),
                                              sc.controller.beta);
  json j{{"problem",
          {{"H", json_from_mat(qp.H)},
           {"c", json_from_vec(qp.c)},
           {"A", json_from_mat(qp.A)},
           {"b", json_from_vec(qp.b)}}}};
  try {
    QpOptions opt;
    opt.tol = sc.controller.qp_tol;
    opt.max_iter = sc.controller.qp_max_iter;
    const QpSolution sol = solve_qp(qp, opt);
    j["solution"] = {{"theta", json_from_vec(sol.theta)},
                     {"multipliers", json_from_vec(sol.multipliers)},
                     {"active_set", sol.active_set},
                     {"kkt_residual", jnum(sol.kkt_residual)},
                     {"iterations", sol.iterations}};
  } catch (const Error& e) {
    j["solution"] = nullptr;
    j["error"] = e.what();
  }
  return j;
}

void run_validate(const Scenario& sc) {
  const auto plant = build_plant(sc);
  const OptimizationSpec spec = build_spec(sc);
  check_consistency(sc, *plant, spec);
  validate(sc.controller);
  validate(sc.sim);

  DerivativeCheckOptions d_opt;
  d_opt.seed = sc.seed;
  validate_derivatives(spec, d_opt);

  PlantCheckOptions p_opt;
  p_opt.seed = sc.seed + 1;
  validate_plant(*plant, p_opt);

  if (spec.m > 0 && spec.gamma(sc.u0).maxCoeff() > 0)
    throw ContractError("scenario: initial input u0 lies outside U_c");
}

}  // namespace sgf
