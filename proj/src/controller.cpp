#include "sgf/controller.hpp"

namespace sgf {

void validate(const ControllerConfig& cfg) {
  if (!(cfg.beta > 0)) throw ContractError("ControllerConfig: beta must be > 0");
  if (!(cfg.eta >= 0)) throw ContractError("ControllerConfig: eta must be >= 0");
  if (!(cfg.qp_tol > 0)) throw ContractError("ControllerConfig: qp_tol must be > 0");
  if (cfg.qp_max_iter <= 0)
    throw ContractError("ControllerConfig: qp_max_iter must be > 0");
}

QpProblem assemble_controller_qp(const OptimizationSpec& spec, const Vector& x,
                                 const Vector& u, const Matrix& J_h, double beta) {
  require_dim(x, spec.n_x, "x");
  require_dim(u, spec.n_u, "u");
  require_shape(J_h, spec.n_x, spec.n_u, "J_h");

  QpProblem qp;
  qp.H = 2.0 * Matrix::Identity(spec.n_u, spec.n_u);
  qp.c = 2.0 * (spec.grad_phi(u) + J_h.transpose() * spec.grad_psi(x));

  const Eigen::Index q = spec.p + spec.m;
  qp.A = Matrix(q, spec.n_u);
  qp.b = Vector(q);
  if (spec.p > 0) {
    qp.A.topRows(spec.p) = spec.jac_ell(x) * J_h;
    qp.b.head(spec.p) = -beta * spec.ell(x);
  }
  if (spec.m > 0) {
    qp.A.bottomRows(spec.m) = spec.jac_gamma(u);
    qp.b.tail(spec.m) = -beta * spec.gamma(u);
  }
  return qp;
}

FlowResult safe_gradient_flow_full(const OptimizationSpec& spec, const Vector& x,
                                   const Vector& u, const Matrix& J_h,
                                   const ControllerConfig& cfg,
                                   const std::vector<int>& warm_hint) {
  const QpProblem qp = assemble_controller_qp(spec, x, u, J_h, cfg.beta);
  QpOptions opt;
  opt.tol = cfg.qp_tol;
  opt.max_iter = cfg.qp_max_iter;
  opt.hint = warm_hint;
  FlowResult res;
  res.qp = solve_qp(qp, opt);
  res.theta = res.qp.theta;
  return res;
}

Vector safe_gradient_flow(const OptimizationSpec& spec, const Vector& x,
                          const Vector& u, const Matrix& J_h,
                          const ControllerConfig& cfg) {
  return safe_gradient_flow_full(spec, x, u, J_h, cfg).theta;
}

Vector control_derivative(const OptimizationSpec& spec, const Vector& x,
                          const Vector& u, const Matrix& J_h,
                          const ControllerConfig& cfg) {
  return cfg.eta * safe_gradient_flow(spec, x, u, J_h, cfg);
}

std::vector<Vector> projected_flow_reference(const OptimizationSpec& spec,
                                             const Vector& u, const PlantModel& plant,
                                             const Vector& w,
                                             const std::vector<double>& beta_ladder,
                                             const ControllerConfig& cfg) {
  const Vector h = plant.steady_state(u, w);
  const Matrix J_h = plant.sensitivity(u);
  std::vector<Vector> out;
  out.reserve(beta_ladder.size());
  for (double beta : beta_ladder) {
    if (!(beta > 0)) throw ContractError("projected_flow_reference: beta must be > 0");
    ControllerConfig c = cfg;
    c.beta = beta;
    out.push_back(safe_gradient_flow(spec, h, u, J_h, c));
  }
  return out;
}

}  // namespace sgf
