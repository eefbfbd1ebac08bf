#pragma once

#include <vector>

#include "sgf/plant.hpp"
#include "sgf/problem.hpp"
#include "sgf/qp.hpp"

namespace sgf {

struct ControllerConfig {
  double beta = 10.0;  ///< class-K gain on the constraint values, > 0
  double eta = 0.1;    ///< controller gain (timescale separation), > 0
  double qp_tol = 1e-9;
  int qp_max_iter = 200;
};

void validate(const ControllerConfig& cfg);

/// Builds the QP whose minimizer is the safe-gradient-flow direction at
/// (x, u):
///   min_theta |theta + grad_phi(u) + J_h' grad_psi(x)|^2
///   s.t.  jac_ell(x) J_h theta <= -beta ell(x)
///         jac_gamma(u) theta  <= -beta gamma(u)
/// i.e. H = 2I, c = 2 (grad_phi + J_h' grad_psi), rows stacked state-block
/// first.
QpProblem assemble_controller_qp(const OptimizationSpec& spec, const Vector& x,
                                 const Vector& u, const Matrix& J_h, double beta);

/// Full controller evaluation: F_beta(x, u), with the QP solution attached
/// (active set, multipliers, iterations).
struct FlowResult {
  Vector theta;
  QpSolution qp;
};

FlowResult safe_gradient_flow_full(const OptimizationSpec& spec, const Vector& x,
                                   const Vector& u, const Matrix& J_h,
                                   const ControllerConfig& cfg,
                                   const std::vector<int>& warm_hint = {});

/// F_beta(x, u): the unique minimizer of the assembled QP.
Vector safe_gradient_flow(const OptimizationSpec& spec, const Vector& x,
                          const Vector& u, const Matrix& J_h,
                          const ControllerConfig& cfg);

/// udot = eta * F_beta(x, u).
Vector control_derivative(const OptimizationSpec& spec, const Vector& x,
                          const Vector& u, const Matrix& J_h,
                          const ControllerConfig& cfg);

/// Evaluates F_beta(h(u, w), u) for each beta in the ladder (the
/// projected-gradient-flow limit diagnostic: the sequence is Cauchy as
/// beta grows).
std::vector<Vector> projected_flow_reference(const OptimizationSpec& spec,
                                             const Vector& u, const PlantModel& plant,
                                             const Vector& w,
                                             const std::vector<double>& beta_ladder,
                                             const ControllerConfig& cfg);

}  // namespace sgf
