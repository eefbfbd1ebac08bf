#pragma once

#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "sgf/controller.hpp"

namespace sgf {

enum class Integrator { rk4, euler };

struct SimConfig {
  double dt = 1e-3;
  double t_end = 10.0;
  Integrator integrator = Integrator::rk4;
  int record_stride = 1;         ///< integration steps per logged sample
  bool halt_on_infeasible = true;
};

void validate(const SimConfig& cfg);

/// Time-indexed record of a closed-loop run. All channels have equal
/// length and strictly increasing times. `errors` is filled only when a
/// reference input u* was supplied; it is |(y - h(u*, w), u - u*)| with y
/// the optimization-facing output.
struct Trajectory {
  std::vector<double> times;
  std::vector<Vector> states;        ///< full plant state x(t)
  std::vector<Vector> inputs;        ///< u(t)
  std::vector<Vector> flows;         ///< F_beta(y(t), u(t))
  std::vector<Vector> ell_values;    ///< ell(y(t))
  std::vector<Vector> gamma_values;  ///< gamma(u(t))
  std::vector<Vector> outputs;       ///< y(t) = measure(x(t), w)
  std::vector<double> errors;
  std::vector<int> qp_iterations;
  bool has_reference = false;
  Vector u_star;
  bool truncated = false;
  std::string truncation_reason;

  std::size_t size() const { return times.size(); }
};

struct SimState {
  Vector x;
  Vector u;
};

/// One explicit integration step of the interconnected field
///   zdot = (f(x, u, w), eta * F_beta(measure(x, w), u)).
/// rk4 solves the controller QP at each of the four stage points;
/// `warm_hint`, when given, seeds the QP active set and is updated to the
/// last stage's active set.
SimState step(const PlantModel& plant, const OptimizationSpec& spec,
              const ControllerConfig& ctrl, const SimState& z, const Vector& w,
              double dt, Integrator method, std::vector<int>* warm_hint = nullptr);

Trajectory simulate(const PlantModel& plant, const OptimizationSpec& spec,
                    const ControllerConfig& ctrl, const SimConfig& cfg,
                    const Vector& x0, const Vector& u0, const Vector& w,
                    const std::optional<Vector>& u_star = std::nullopt);

/// |(f(x,u,w), eta F_beta(y,u))|: residual of the interconnected field.
double interconnection_residual(const PlantModel& plant, const OptimizationSpec& spec,
                                const ControllerConfig& ctrl, const Vector& x,
                                const Vector& u, const Vector& w);

struct InvarianceReport {
  double max_value = -std::numeric_limits<double>::infinity();
  double argmax_time = 0.0;
  int argmax_index = -1;
  double tol = 0.0;
  bool pass = true;
};

/// Max over logged samples and components of gamma(u(t)); pass iff <= tol.
InvarianceReport monitor_input_invariance(const Trajectory& traj,
                                          const OptimizationSpec& spec, double tol);

struct StateSetReport {
  double max_dist = 0.0;
  double argmax_time = 0.0;
  double diameter = 0.0;
  double bound = 0.0;
  bool pass = true;
};

/// Checks dist(y(t), Xeq_samples) < sqrt(d2/d1) * (d0 + diam(Xeq_samples))
/// at every logged sample. `x_eq_samples` holds one sample per row.
StateSetReport monitor_state_set(const Trajectory& traj, const Matrix& x_eq_samples,
                                 double d0, double d1, double d2);

/// CSV export: header t,x_0..,u_0..,Fb_0..,ell_0..,gamma_0..[,err], one row
/// per logged sample, 17 significant digits.
std::string trajectory_csv(const Trajectory& traj);
void write_trajectory_csv(const Trajectory& traj, const std::string& path);

}  // namespace sgf
