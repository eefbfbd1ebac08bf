#include "sgf/problem.hpp"

#include <cmath>
#include <random>

namespace sgf {

namespace {

double fd_step(double coord) { return 1e-6 * (1.0 + std::abs(coord)); }

Vector random_point(std::mt19937_64& rng, Eigen::Index dim, double radius) {
  std::uniform_real_distribution<double> dist(-radius, radius);
  Vector v(dim);
  for (Eigen::Index i = 0; i < dim; ++i) v(i) = dist(rng);
  return v;
}

void check_gradient(const std::function<double(const Vector&)>& f,
                    const std::function<Vector(const Vector&)>& grad,
                    const Vector& at, double tol, const char* name) {
  const Vector g = grad(at);
  const Vector g_fd = fd_gradient(f, at);
  const double err = (g - g_fd).norm();
  if (!(err <= tol * (1.0 + g_fd.norm())))
    throw ContractError(std::string("derivative check failed for ") + name +
                        ": |g - g_fd| = " + std::to_string(err));
}

void check_jacobian(const std::function<Vector(const Vector&)>& f,
                    const std::function<Matrix(const Vector&)>& jac,
                    const Vector& at, double tol, const char* name) {
  const Matrix j = jac(at);
  const Matrix j_fd = fd_jacobian(f, at);
  if (j.rows() != j_fd.rows() || j.cols() != j_fd.cols())
    throw ContractError(std::string("Jacobian shape mismatch for ") + name);
  const double err = (j - j_fd).norm();
  if (!(err <= tol * (1.0 + j_fd.norm())))
    throw ContractError(std::string("derivative check failed for ") + name +
                        ": |J - J_fd| = " + std::to_string(err));
}

}  // namespace

Vector fd_gradient(const std::function<double(const Vector&)>& f, const Vector& at) {
  Vector g(at.size());
  Vector x = at;
  for (Eigen::Index i = 0; i < at.size(); ++i) {
    const double h = fd_step(at(i));
    x(i) = at(i) + h;
    const double fp = f(x);
    x(i) = at(i) - h;
    const double fm = f(x);
    x(i) = at(i);
    g(i) = (fp - fm) / (2.0 * h);
  }
  return g;
}

Matrix fd_jacobian(const std::function<Vector(const Vector&)>& f, const Vector& at) {
  const Vector f0 = f(at);
  Matrix j(f0.size(), at.size());
  Vector x = at;
  for (Eigen::Index i = 0; i < at.size(); ++i) {
    const double h = fd_step(at(i));
    x(i) = at(i) + h;
    const Vector fp = f(x);
    x(i) = at(i) - h;
    const Vector fm = f(x);
    x(i) = at(i);
    j.col(i) = (fp - fm) / (2.0 * h);
  }
  return j;
}

void validate_derivatives(const OptimizationSpec& spec, const DerivativeCheckOptions& opt) {
  if (spec.n_u <= 0 || spec.n_x <= 0)
    throw DimensionError("OptimizationSpec: n_u and n_x must be positive");
  if (spec.p < 0 || spec.m < 0)
    throw DimensionError("OptimizationSpec: p and m must be nonnegative");

  std::mt19937_64 rng(opt.seed);
  for (int k = 0; k < opt.n_points; ++k) {
    const Vector u = random_point(rng, spec.n_u, opt.box_radius);
    const Vector x = random_point(rng, spec.n_x, opt.box_radius);
    check_gradient(spec.phi, spec.grad_phi, u, opt.tol, "phi");
    check_gradient(spec.psi, spec.grad_psi, x, opt.tol, "psi");
    if (spec.p > 0) check_jacobian(spec.ell, spec.jac_ell, x, opt.tol, "ell");
    if (spec.m > 0) check_jacobian(spec.gamma, spec.jac_gamma, u, opt.tol, "gamma");
  }
}

double eval_objective(const OptimizationSpec& spec, const Vector& u, const Vector& x) {
  require_dim(u, spec.n_u, "u");
  require_dim(x, spec.n_x, "x");
  return spec.phi(u) + spec.psi(x);
}

FeasibilityReport feasibility_report(const OptimizationSpec& spec, const Vector& u,
                                     const Vector& x, double tol) {
  require_dim(u, spec.n_u, "u");
  require_dim(x, spec.n_x, "x");
  if (!(tol >= 0)) throw DimensionError("feasibility_report: tol must be >= 0");

  FeasibilityReport rep;
  rep.ell_values = spec.p > 0 ? spec.ell(x) : Vector(0);
  rep.gamma_values = spec.m > 0 ? spec.gamma(u) : Vector(0);
  require_dim(rep.ell_values, spec.p, "ell(x)");
  require_dim(rep.gamma_values, spec.m, "gamma(u)");
  for (Eigen::Index i = 0; i < spec.p; ++i) {
    rep.ell_ok.push_back(rep.ell_values(i) <= tol);
    rep.feasible = rep.feasible && rep.ell_ok.back();
  }
  for (Eigen::Index j = 0; j < spec.m; ++j) {
    rep.gamma_ok.push_back(rep.gamma_values(j) <= tol);
    rep.feasible = rep.feasible && rep.gamma_ok.back();
  }
  return rep;
}

OptimizationSpec make_unicycle_spec() {
  OptimizationSpec s;
  s.n_u = 2;
  s.n_x = 2;
  s.p = 1;
  s.m = 4;
  const Vector target = (Vector(2) << 0.6, 0.8).finished();
  s.phi = [](const Vector& u) { return 0.05 * u.squaredNorm(); };
  s.grad_phi = [](const Vector& u) { return Vector(0.1 * u); };
  s.psi = [target](const Vector& x) { return (x - target).squaredNorm(); };
  s.grad_psi = [target](const Vector& x) { return Vector(2.0 * (x - target)); };
  s.ell = [](const Vector& x) {
    return (Vector(1) << x.squaredNorm() - 0.9).finished();
  };
  s.jac_ell = [](const Vector& x) {
    Matrix j(1, 2);
    j << 2.0 * x(0), 2.0 * x(1);
    return j;
  };
  s.gamma = [](const Vector& u) {
    Vector g(4);
    g << u(0) - 10.0, u(1) - 10.0, -u(0) - 10.0, -u(1) - 10.0;
    return g;
  };
  s.jac_gamma = [](const Vector&) {
    Matrix j(4, 2);
    j << 1, 0, 0, 1, -1, 0, 0, -1;
    return j;
  };
  return s;
}

OptimizationSpec make_quadratic_spec(const QuadraticSpecParams& params) {
  OptimizationSpec s;
  s.n_u = params.Q_u.rows();
  s.n_x = params.Q_x.rows();
  require_shape(params.Q_u, s.n_u, s.n_u, "Q_u");
  require_shape(params.Q_x, s.n_x, s.n_x, "Q_x");
  require_dim(params.q_u, s.n_u, "q_u");
  require_dim(params.q_x, s.n_x, "q_x");
  s.p = params.ell_rows.rows();
  if (s.p > 0) {
    require_shape(params.ell_rows, s.p, s.n_x, "ell_rows");
    require_dim(params.ell_rhs, s.p, "ell_rhs");
  }
  const bool boxed = params.u_lo.size() > 0;
  if (boxed) {
    require_dim(params.u_lo, s.n_u, "u_lo");
    require_dim(params.u_hi, s.n_u, "u_hi");
  }
  s.m = boxed ? 2 * s.n_u : 0;

  const QuadraticSpecParams q = params;  // captured by value
  s.phi = [q](const Vector& u) { return 0.5 * u.dot(q.Q_u * u) + q.q_u.dot(u); };
  s.grad_phi = [q](const Vector& u) { return Vector(q.Q_u * u + q.q_u); };
  s.psi = [q](const Vector& x) { return 0.5 * x.dot(q.Q_x * x) + q.q_x.dot(x); };
  s.grad_psi = [q](const Vector& x) { return Vector(q.Q_x * x + q.q_x); };
  if (s.p > 0) {
    s.ell = [q](const Vector& x) { return Vector(q.ell_rows * x - q.ell_rhs); };
    s.jac_ell = [q](const Vector&) { return q.ell_rows; };
  } else {
    s.ell = [](const Vector&) { return Vector(0); };
    s.jac_ell = [](const Vector& x) { return Matrix(0, x.size()); };
  }
  if (boxed) {
    const Eigen::Index nu = s.n_u;
    s.gamma = [q, nu](const Vector& u) {
      Vector g(2 * nu);
      g.head(nu) = u - q.u_hi;
      g.tail(nu) = q.u_lo - u;
      return g;
    };
    s.jac_gamma = [nu](const Vector&) {
      Matrix j(2 * nu, nu);
      j.topRows(nu) = Matrix::Identity(nu, nu);
      j.bottomRows(nu) = -Matrix::Identity(nu, nu);
      return j;
    };
  } else {
    s.gamma = [](const Vector&) { return Vector(0); };
    s.jac_gamma = [](const Vector& u) { return Matrix(0, u.size()); };
  }
  return s;
}

OptimizationSpec make_lti_quadratic_spec() {
  QuadraticSpecParams p;
  p.Q_u = Matrix::Identity(2, 2);
  p.q_u = Vector::Zero(2);
  p.Q_x = 2.0 * Matrix::Identity(2, 2);
  p.q_x = (Vector(2) << -2.0, 2.0).finished();  // psi = |x - (1,-1)|^2 + const
  p.ell_rows = Matrix(0, 2);
  p.ell_rhs = Vector(0);
  p.u_lo = (Vector(2) << -5.0, -5.0).finished();
  p.u_hi = (Vector(2) << 5.0, 5.0).finished();
  return make_quadratic_spec(p);
}

OptimizationSpec spec_by_name(const std::string& name) {
  if (name == "unicycle_v") return make_unicycle_spec();
  if (name == "lti_quadratic") return make_lti_quadratic_spec();
  throw ScenarioError("unknown spec catalog name: " + name);
}

}  // namespace sgf
