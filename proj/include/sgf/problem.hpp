#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "sgf/linalg.hpp"

namespace sgf {

/// Target optimization problem
///   min_u  phi(u) + psi(x)   s.t.  ell(x) <= 0,  gamma(u) <= 0,
/// where x is the (measured or steady-state) plant state the caller
/// substitutes. All derivatives are supplied analytically by whoever
/// defines the problem; validate_derivatives() checks them against central
/// finite differences.
struct OptimizationSpec {
  Eigen::Index n_u = 0;
  Eigen::Index n_x = 0;
  Eigen::Index p = 0;  ///< number of state-constraint rows (>= 0)
  Eigen::Index m = 0;  ///< number of input-constraint rows (>= 0)

  std::function<double(const Vector&)> phi;
  std::function<Vector(const Vector&)> grad_phi;
  std::function<double(const Vector&)> psi;
  std::function<Vector(const Vector&)> grad_psi;
  std::function<Vector(const Vector&)> ell;       ///< R^{n_x} -> R^p
  std::function<Matrix(const Vector&)> jac_ell;   ///< R^{n_x} -> R^{p x n_x}
  std::function<Vector(const Vector&)> gamma;     ///< R^{n_u} -> R^m
  std::function<Matrix(const Vector&)> jac_gamma; ///< R^{n_u} -> R^{m x n_u}
};

struct DerivativeCheckOptions {
  int n_points = 100;
  double tol = 1e-5;          ///< relative, ||g - g_fd|| <= tol * (1 + ||g_fd||)
  double box_radius = 2.0;    ///< points sampled uniformly in [-r, r]^dim
  std::uint64_t seed = 7041;
};

/// Checks every supplied derivative map against central finite differences
/// (step 1e-6 * (1 + |coordinate|)) at randomly sampled points. Throws
/// ContractError naming the failing map, point and error on mismatch.
void validate_derivatives(const OptimizationSpec& spec,
                          const DerivativeCheckOptions& opt = {});

/// phi(u) + psi(x).
double eval_objective(const OptimizationSpec& spec, const Vector& u, const Vector& x);

struct FeasibilityReport {
  Vector ell_values;            // p
  Vector gamma_values;          // m
  std::vector<bool> ell_ok;     // ell_i <= tol
  std::vector<bool> gamma_ok;   // gamma_j <= tol
  bool feasible = true;         // all flags true
};

FeasibilityReport feasibility_report(const OptimizationSpec& spec, const Vector& u,
                                     const Vector& x, double tol);

/// Central finite-difference gradient of a scalar function, step
/// 1e-6 * (1 + |coordinate|). Shared by the validators and the analysis
/// module's numerical Hessians.
Vector fd_gradient(const std::function<double(const Vector&)>& f, const Vector& at);

/// Central finite-difference Jacobian of a vector function.
Matrix fd_jacobian(const std::function<Vector(const Vector&)>& f, const Vector& at);

// Built-in spec catalog -------------------------------------------------

/// Unicycle regulation problem: phi(u) = 0.05 |u|^2,
/// psi(x) = |x - (0.6, 0.8)|^2, ell(x) = |x|^2 - 0.9, box |u_i| <= 10.
OptimizationSpec make_unicycle_spec();

/// Quadratic program data for the LTI test problems and for custom specs
/// declared in scenario files. Constraint blocks may be empty.
struct QuadraticSpecParams {
  Matrix Q_u;         // n_u x n_u, symmetric PSD (phi = 1/2 u'Q_u u + q_u'u)
  Vector q_u;
  Matrix Q_x;         // n_x x n_x (psi = 1/2 x'Q_x x + q_x'x)
  Vector q_x;
  Matrix ell_rows;    // p x n_x   (ell = ell_rows * x - ell_rhs)
  Vector ell_rhs;
  Vector u_lo, u_hi;  // box gamma-rows; empty = unconstrained input
};

OptimizationSpec make_quadratic_spec(const QuadraticSpecParams& params);

/// Default "lti_quadratic" catalog entry: 2-d input/state, phi = 1/2|u|^2,
/// psi = |x - (1, -1)|^2, box |u_i| <= 5, no state constraints.
OptimizationSpec make_lti_quadratic_spec();

/// Looks up a catalog spec by name ("unicycle_v", "lti_quadratic").
/// Throws ScenarioError for unknown names.
OptimizationSpec spec_by_name(const std::string& name);

}  // namespace sgf
