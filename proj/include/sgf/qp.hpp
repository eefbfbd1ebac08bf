#pragma once

#include <vector>

#include "sgf/linalg.hpp"

namespace sgf {

/// Dense strictly convex QP in the form
///   min_theta  1/2 theta' H theta + c' theta   s.t.  A theta <= b.
struct QpProblem {
  Matrix H;  ///< symmetric positive definite, n x n
  Vector c;  ///< n
  Matrix A;  ///< q x n (q may be 0)
  Vector b;  ///< q

  Eigen::Index n() const { return c.size(); }
  Eigen::Index q() const { return b.size(); }
};

/// Throws DimensionError / ContractError if the problem data violate the
/// QpProblem invariants (shape mismatch, non-symmetric or near-singular H,
/// non-finite entries).
void validate(const QpProblem& p);

struct QpSolution {
  Vector theta;
  Vector multipliers;           ///< length q, multipliers[i] == 0 for inactive i
  std::vector<int> active_set;  ///< sorted indices of constraints held at equality
  double kkt_residual = 0.0;
  int iterations = 0;
};

struct QpOptions {
  double tol = 1e-9;
  int max_iter = 200;
  /// Optional warm-start hint: constraint indices (typically the previous
  /// active set) tried first when choosing which violated constraint to
  /// activate. Affects iteration count only, never the solution.
  std::vector<int> hint;
};

/// Solves the QP with a dual active-set iteration: starts from the
/// unconstrained minimizer, activates one violated constraint at a time
/// while keeping the working set dually feasible, and drops constraints
/// whose multiplier would cross zero. Terminates with the exact optimal
/// active set; infeasibility is detected when a violated constraint admits
/// neither a primal nor a dual step (Farkas certificate within the working
/// set).
///
/// Throws QpInfeasible, QpMaxIterations, QpIllConditioned.
QpSolution solve_qp(const QpProblem& p, const QpOptions& opt = {});

/// Max-norm KKT residual of (p, s): stationarity, primal feasibility,
/// dual feasibility, complementarity. Recomputed from scratch; does not
/// depend on how s was obtained.
double kkt_residual(const QpProblem& p, const QpSolution& s);

}  // namespace sgf
