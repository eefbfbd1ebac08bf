#include "sgf/simulate.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

namespace sgf {

namespace {

struct StageField {
  Vector xdot;
  Vector udot;
};

StageField eval_field(const PlantModel& plant, const OptimizationSpec& spec,
                      const ControllerConfig& ctrl, const Vector& x, const Vector& u,
                      const Vector& w, std::vector<int>* warm_hint,
                      QpSolution* qp_out = nullptr) {
  const Vector y = plant.measure(x, w);
  const FlowResult flow = safe_gradient_flow_full(
      spec, y, u, plant.sensitivity(u), ctrl, warm_hint ? *warm_hint : std::vector<int>{});
  if (warm_hint) *warm_hint = flow.qp.active_set;
  if (qp_out) *qp_out = flow.qp;
  StageField f;
  f.xdot = plant.dynamics(x, u, w);
  f.udot = ctrl.eta * flow.theta;
  return f;
}

}  // namespace

void validate(const SimConfig& cfg) {
  if (!(cfg.dt > 0)) throw ContractError("SimConfig: dt must be > 0");
  if (!(cfg.t_end >= 0)) throw ContractError("SimConfig: t_end must be >= 0");
  if (cfg.record_stride < 1) throw ContractError("SimConfig: record_stride must be >= 1");
}

SimState step(const PlantModel& plant, const OptimizationSpec& spec,
              const ControllerConfig& ctrl, const SimState& z, const Vector& w,
              double dt, Integrator method, std::vector<int>* warm_hint) {
  if (!(dt > 0)) throw ContractError("step: dt must be > 0");

  auto f = [&](const Vector& x, const Vector& u) {
    return eval_field(plant, spec, ctrl, x, u, w, warm_hint);
  };

  SimState out;
  if (method == Integrator::euler) {
    const StageField k1 = f(z.x, z.u);
    out.x = z.x + dt * k1.xdot;
    out.u = z.u + dt * k1.udot;
  } else {
    const StageField k1 = f(z.x, z.u);
    const StageField k2 = f(z.x + 0.5 * dt * k1.xdot, z.u + 0.5 * dt * k1.udot);
    const StageField k3 = f(z.x + 0.5 * dt * k2.xdot, z.u + 0.5 * dt * k2.udot);
    const StageField k4 = f(z.x + dt * k3.xdot, z.u + dt * k3.udot);
    out.x = z.x + (dt / 6.0) * (k1.xdot + 2.0 * k2.xdot + 2.0 * k3.xdot + k4.xdot);
    out.u = z.u + (dt / 6.0) * (k1.udot + 2.0 * k2.udot + 2.0 * k3.udot + k4.udot);
  }
  if (!out.x.allFinite() || !out.u.allFinite())
    throw SimulationError("step: non-finite state", dt);
  return out;
}

Trajectory simulate(const PlantModel& plant, const OptimizationSpec& spec,
                    const ControllerConfig& ctrl, const SimConfig& cfg,
                    const Vector& x0, const Vector& u0, const Vector& w,
                    const std::optional<Vector>& u_star) {
  validate(cfg);
  validate(ctrl);
  require_dim(x0, plant.state_dim(), "x0");
  require_dim(u0, plant.input_dim(), "u0");
  require_dim(w, plant.dist_dim(), "w");
  if (plant.output_dim() != spec.n_x || plant.input_dim() != spec.n_u)
    throw DimensionError("simulate: plant output/input dims do not match spec");

  if (spec.m > 0) {
    const Vector g0 = spec.gamma(u0);
    if (g0.maxCoeff() > 0)
      throw ContractError("simulate: initial input outside U_c (gamma(u0) = " +
                          std::to_string(g0.maxCoeff()) + " > 0)");
  }

  Trajectory traj;
  traj.has_reference = u_star.has_value();
  std::optional<Vector> h_star;
  if (u_star) {
    require_dim(*u_star, plant.input_dim(), "u_star");
    traj.u_star = *u_star;
    h_star = plant.steady_state(*u_star, w);
  }

  const long n_steps = std::lround(cfg.t_end / cfg.dt);
  std::vector<int> hint;

  auto log_sample = [&](double t, const SimState& z) {
    const Vector y = plant.measure(z.x, w);
    const FlowResult flow =
        safe_gradient_flow_full(spec, y, z.u, plant.sensitivity(z.u), ctrl, hint);
    const QpSolution& qp = flow.qp;
    traj.times.push_back(t);
    traj.states.push_back(z.x);
    traj.inputs.push_back(z.u);
    traj.flows.push_back(qp.theta);
    traj.ell_values.push_back(spec.p > 0 ? spec.ell(y) : Vector(0));
    traj.gamma_values.push_back(spec.m > 0 ? spec.gamma(z.u) : Vector(0));
    traj.outputs.push_back(y);
    traj.qp_iterations.push_back(qp.iterations);
    if (u_star) {
      const double ex = (y - *h_star).norm();
      const double eu = (z.u - *u_star).norm();
      traj.errors.push_back(std::hypot(ex, eu));
    }
  };

  SimState z{x0, u0};
  for (long k = 0; k <= n_steps; ++k) {
    const double t = k * cfg.dt;
    if (k % cfg.record_stride == 0 || k == n_steps) {
      try {
        log_sample(t, z);
      } catch (const QpInfeasible& e) {
        if (cfg.halt_on_infeasible)
          throw QpInfeasible(std::string(e.what()) + " at t=" + std::to_string(t));
        traj.truncated = true;
        traj.truncation_reason = e.what();
        return traj;
      }
    }
    if (k == n_steps) break;
    try {
      z = step(plant, spec, ctrl, z, w, cfg.dt, cfg.integrator, &hint);
    } catch (const QpInfeasible& e) {
      if (cfg.halt_on_infeasible)
        throw QpInfeasible(std::string(e.what()) + " at t=" + std::to_string(t));
      traj.truncated = true;
      traj.truncation_reason = e.what();
      return traj;
    } catch (const SimulationError&) {
      throw SimulationError("simulate: non-finite state", t + cfg.dt);
    }
  }
  return traj;
}

double interconnection_residual(const PlantModel& plant, const OptimizationSpec& spec,
                                const ControllerConfig& ctrl, const Vector& x,
                                const Vector& u, const Vector& w) {
  const StageField f = eval_field(plant, spec, ctrl, x, u, w, nullptr);
  return std::hypot(f.xdot.norm(), f.udot.norm());
}

InvarianceReport monitor_input_invariance(const Trajectory& traj,
                                          const OptimizationSpec& spec, double tol) {
  if (traj.size() == 0) throw DimensionError("monitor_input_invariance: empty trajectory");
  InvarianceReport rep;
  rep.tol = tol;
  if (spec.m == 0) {
    rep.max_value = 0.0;
    return rep;
  }
  for (std::size_t k = 0; k < traj.size(); ++k) {
    const Vector& g = traj.gamma_values[k];
    for (Eigen::Index j = 0; j < g.size(); ++j) {
      if (g(j) > rep.max_value) {
        rep.max_value = g(j);
        rep.argmax_time = traj.times[k];
        rep.argmax_index = static_cast<int>(j);
      }
    }
  }
  rep.pass = rep.max_value <= tol;
  return rep;
}

StateSetReport monitor_state_set(const Trajectory& traj, const Matrix& x_eq_samples,
                                 double d0, double d1, double d2) {
  if (x_eq_samples.rows() == 0)
    throw ContractError("monitor_state_set: empty equilibrium sample set");
  if (!(d1 > 0) || !(d2 > 0) || d1 > d2)
    throw ContractError("monitor_state_set: need 0 < d1 <= d2");

  StateSetReport rep;
  for (Eigen::Index i = 0; i < x_eq_samples.rows(); ++i)
    for (Eigen::Index j = i + 1; j < x_eq_samples.rows(); ++j)
      rep.diameter = std::max(
          rep.diameter, (x_eq_samples.row(i) - x_eq_samples.row(j)).norm());
  rep.bound = std::sqrt(d2 / d1) * (d0 + rep.diameter);

  for (std::size_t k = 0; k < traj.size(); ++k) {
    double dist = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < x_eq_samples.rows(); ++i)
      dist = std::min(dist,
                      (traj.outputs[k].transpose() - x_eq_samples.row(i)).norm());
    if (dist > rep.max_dist) {
      rep.max_dist = dist;
      rep.argmax_time = traj.times[k];
    }
  }
  rep.pass = rep.max_dist < rep.bound;
  return rep;
}

namespace {

void append_g17(std::string& out, double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  out += buf;
}

}  // namespace

std::string trajectory_csv(const Trajectory& traj) {
  std::string out;
  const Eigen::Index nx = traj.states.empty() ? 0 : traj.states[0].size();
  const Eigen::Index nu = traj.inputs.empty() ? 0 : traj.inputs[0].size();
  const Eigen::Index nf = traj.flows.empty() ? 0 : traj.flows[0].size();
  const Eigen::Index np = traj.ell_values.empty() ? 0 : traj.ell_values[0].size();
  const Eigen::Index nm = traj.gamma_values.empty() ? 0 : traj.gamma_values[0].size();

  out += "t";
  for (Eigen::Index i = 0; i < nx; ++i) out += ",x_" + std::to_string(i);
  for (Eigen::Index i = 0; i < nu; ++i) out += ",u_" + std::to_string(i);
  for (Eigen::Index i = 0; i < nf; ++i) out += ",Fb_" + std::to_string(i);
  for (Eigen::Index i = 0; i < np; ++i) out += ",ell_" + std::to_string(i);
  for (Eigen::Index i = 0; i < nm; ++i) out += ",gamma_" + std::to_string(i);
  if (traj.has_reference) out += ",err";
  out += "\n";

  for (std::size_t k = 0; k < traj.size(); ++k) {
    append_g17(out, traj.times[k]);
    auto row = [&](const Vector& v) {
      for (Eigen::Index i = 0; i < v.size(); ++i) {
        out += ",";
        append_g17(out, v(i));
      }
    };
    row(traj.states[k]);
    row(traj.inputs[k]);
    row(traj.flows[k]);
    row(traj.ell_values[k]);
    row(traj.gamma_values[k]);
    if (traj.has_reference) {
      out += ",";
      append_g17(out, traj.errors[k]);
    }
    out += "\n";
  }
  return out;
}

void write_trajectory_csv(const Trajectory& traj, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path + " for writing");
  f << trajectory_csv(traj);
}

}  // namespace sgf
