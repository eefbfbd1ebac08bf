#include "sgf/analysis.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <random>

namespace sgf {

namespace {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

Vector box_sample(std::mt19937_64& rng, const Box& box) {
  Vector v(box.lo.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    std::uniform_real_distribution<double> dist(box.lo(i), box.hi(i));
    v(i) = dist(rng);
  }
  return v;
}

/// Target problem in the reduced variable u: objective phi + psi o h and
/// stacked constraints [ell o h; gamma].
struct TargetProblem {
  const OptimizationSpec& spec;
  const PlantModel& plant;
  Vector w;

  Eigen::Index n_u() const { return spec.n_u; }
  Eigen::Index n_c() const { return spec.p + spec.m; }

  double objective(const Vector& u) const {
    return spec.phi(u) + spec.psi(plant.steady_state(u, w));
  }
  Vector gradient(const Vector& u) const {
    const Vector h = plant.steady_state(u, w);
    return spec.grad_phi(u) + plant.sensitivity(u).transpose() * spec.grad_psi(h);
  }
  Vector constraints(const Vector& u) const {
    Vector c(n_c());
    if (spec.p > 0) c.head(spec.p) = spec.ell(plant.steady_state(u, w));
    if (spec.m > 0) c.tail(spec.m) = spec.gamma(u);
    return c;
  }
  Matrix constraint_jacobian(const Vector& u) const {
    Matrix j(n_c(), n_u());
    if (spec.p > 0)
      j.topRows(spec.p) = spec.jac_ell(plant.steady_state(u, w)) * plant.sensitivity(u);
    if (spec.m > 0) j.bottomRows(spec.m) = spec.jac_gamma(u);
    return j;
  }
};

/// Cyclic first-order projection onto {c(u) <= 0}: repeatedly performs a
/// scalar Newton correction along the most violated constraint's gradient.
/// Only approximate; the KKT Newton polish is the accuracy-bearing stage.
Vector project_feasible(const TargetProblem& tp, Vector u) {
  for (int pass = 0; pass < 40; ++pass) {
    const Vector c = tp.constraints(u);
    if (c.size() == 0 || c.maxCoeff() <= 1e-10) break;
    Eigen::Index worst;
    c.maxCoeff(&worst);
    const Matrix jac = tp.constraint_jacobian(u);
    Vector d = jac.row(worst).transpose();
    const double dn = d.norm();
    if (dn < 1e-12) break;  // degenerate gradient, give up on this row
    d /= dn;
    double t = 0.0;
    for (int it = 0; it < 20; ++it) {
      const Vector cand = u - t * d;
      const double v = tp.constraints(cand)(worst);
      if (std::abs(v) <= 1e-12) break;
      const double slope = tp.constraint_jacobian(cand).row(worst).dot(d);
      if (std::abs(slope) < 1e-12) break;
      t += v / slope;
    }
    u -= t * d;
  }
  return u;
}

double nlp_residual(const TargetProblem& tp, const Vector& u, const Vector& lambda) {
  const Vector c = tp.constraints(u);
  double res =
      (tp.gradient(u) + tp.constraint_jacobian(u).transpose() * lambda).cwiseAbs().maxCoeff();
  if (c.size() > 0) {
    res = std::max(res, c.maxCoeff());
    res = std::max(res, -lambda.minCoeff());
    res = std::max(res, (lambda.array() * c.array()).abs().maxCoeff());
  }
  return res;
}

}  // namespace

KktPoint solve_target_problem(const OptimizationSpec& spec, const PlantModel& plant,
                              const Vector& w, const Vector& u_init,
                              const NlpOracleOptions& opt) {
  const TargetProblem tp{spec, plant, w};
  require_dim(u_init, spec.n_u, "u_init");

  // Phase 1: projected gradient with diminishing steps.
  Vector u = project_feasible(tp, u_init);
  int iterations = 0;
  for (int k = 0; k < opt.pg_iterations; ++k) {
    const double step = opt.pg_step0 / (1.0 + k / 50.0);
    u = project_feasible(tp, u - step * tp.gradient(u));
    ++iterations;
  }

  // Phase 2: Newton polish on the active-set KKT system, with active-set
  // corrections (drop negative multipliers, add violated constraints).
  std::vector<int> active;
  {
    const Vector c = tp.constraints(u);
    for (Eigen::Index i = 0; i < c.size(); ++i)
      if (c(i) > -opt.active_tol) active.push_back(static_cast<int>(i));
  }

  const Eigen::Index nu = tp.n_u();
  Vector lam_active;
  bool converged = false;
  for (int round = 0; round < opt.polish_rounds && !converged; ++round) {
    const int na = static_cast<int>(active.size());
    auto kkt_map = [&](const Vector& v) {
      const Vector uu = v.head(nu);
      const Vector ll = v.tail(na);
      const Matrix jac = tp.constraint_jacobian(uu);
      Vector g(nu + na);
      Vector stat = tp.gradient(uu);
      for (int j = 0; j < na; ++j) stat += ll(j) * jac.row(active[j]).transpose();
      g.head(nu) = stat;
      const Vector c = tp.constraints(uu);
      for (int j = 0; j < na; ++j) g(nu + j) = c(active[j]);
      return g;
    };

    Vector v(nu + na);
    v.head(nu) = u;
    v.tail(na).setZero();
    bool newton_ok = false;
    for (int it = 0; it < opt.newton_max_iter; ++it) {
      ++iterations;
      const Vector g = kkt_map(v);
      if (g.cwiseAbs().maxCoeff() <= 0.01 * opt.tol) {
        newton_ok = true;
        break;
      }
      const Matrix jac = fd_jacobian(kkt_map, v);
      Eigen::FullPivLU<Matrix> lu(jac);
      if (!lu.isInvertible()) break;
      const Vector delta = lu.solve(-g);
      double alpha = 1.0;
      const double g0 = g.norm();
      while (alpha > 1e-8 && kkt_map(v + alpha * delta).norm() > (1.0 - 1e-4 * alpha) * g0)
        alpha *= 0.5;
      v += alpha * delta;
    }
    if (!newton_ok) {
      // Retry from a nudged starting point before giving up.
      u = project_feasible(tp, u - 0.01 * tp.gradient(u));
      continue;
    }
    u = v.head(nu);
    lam_active = v.tail(na);

    // Active-set corrections.
    int drop = -1;
    for (int j = 0; j < na; ++j)
      if (lam_active(j) < -opt.tol && (drop < 0 || lam_active(j) < lam_active(drop)))
        drop = j;
    if (drop >= 0) {
      active.erase(active.begin() + drop);
      continue;
    }
    const Vector c = tp.constraints(u);
    int add = -1;
    double worst = opt.tol;
    for (Eigen::Index i = 0; i < c.size(); ++i) {
      if (std::find(active.begin(), active.end(), static_cast<int>(i)) != active.end())
        continue;
      if (c(i) > worst) {
        worst = c(i);
        add = static_cast<int>(i);
      }
    }
    if (add >= 0) {
      active.push_back(add);
      std::sort(active.begin(), active.end());
      continue;
    }
    converged = true;
  }

  if (!converged)
    throw NumericalError("solve_target_problem: oracle failed to converge");

  KktPoint out;
  out.u_star = u;
  out.multipliers = Vector::Zero(tp.n_c());
  for (std::size_t j = 0; j < active.size(); ++j)
    out.multipliers(active[j]) = std::max(lam_active(static_cast<Eigen::Index>(j)), 0.0);
  out.active_set = active;
  out.iterations = iterations;
  out.kkt_residual = nlp_residual(tp, u, out.multipliers);
  if (out.kkt_residual > opt.tol)
    throw NumericalError("solve_target_problem: KKT residual " +
                         std::to_string(out.kkt_residual) + " above tolerance");

  if (active.empty()) {
    out.licq_ok = true;
    out.licq_min_singular = 0.0;  // no active constraints
    out.strict_complementarity_ok = true;
    out.min_active_multiplier = 0.0;
  } else {
    Matrix ja(active.size(), nu);
    const Matrix jac = tp.constraint_jacobian(u);
    for (std::size_t j = 0; j < active.size(); ++j) ja.row(j) = jac.row(active[j]);
    Eigen::JacobiSVD<Matrix> svd(ja);
    out.licq_min_singular = svd.singularValues().minCoeff();
    out.licq_ok =
        out.licq_min_singular > 1e-6 * std::max(1.0, svd.singularValues().maxCoeff());
    out.min_active_multiplier = lam_active.minCoeff();
    out.strict_complementarity_ok = out.min_active_multiplier > opt.tol;
  }
  return out;
}

KktCheck check_kkt(const OptimizationSpec& spec, const PlantModel& plant,
                   const Vector& w, const Vector& u, const Vector& lambda, double tol,
                   const ControllerConfig& ctrl) {
  const TargetProblem tp{spec, plant, w};
  require_dim(lambda, tp.n_c(), "lambda");
  require_dim(u, spec.n_u, "u");

  KktCheck chk;
  const Vector c = tp.constraints(u);
  chk.stationarity =
      (tp.gradient(u) + tp.constraint_jacobian(u).transpose() * lambda).cwiseAbs().maxCoeff();
  if (c.size() > 0) {
    chk.primal_max = c.maxCoeff();
    chk.dual_min = lambda.minCoeff();
    chk.comp_max = (lambda.array() * c.array()).abs().maxCoeff();
  } else {
    chk.primal_max = 0.0;
    chk.dual_min = 0.0;
    chk.comp_max = 0.0;
  }
  chk.pass = chk.stationarity <= tol && chk.primal_max <= tol &&
             chk.dual_min >= -tol && chk.comp_max <= tol;

  const Vector h = plant.steady_state(u, w);
  chk.f_beta_norm =
      safe_gradient_flow(spec, h, u, plant.sensitivity(u), ctrl).norm();
  return chk;
}

JacobianE jacobian_E(const OptimizationSpec& spec, const PlantModel& plant,
                     const Vector& w, const Vector& u_star, const ControllerConfig& ctrl,
                     double fd_step, double fd_consistency_tol) {
  auto fb = [&](const Vector& u) {
    return safe_gradient_flow(spec, plant.steady_state(u, w), u,
                              plant.sensitivity(u), ctrl);
  };
  auto central = [&](double h) {
    Matrix e(spec.n_u, spec.n_u);
    Vector up = u_star, um = u_star;
    for (Eigen::Index i = 0; i < spec.n_u; ++i) {
      up(i) = u_star(i) + h;
      um(i) = u_star(i) - h;
      e.col(i) = (fb(up) - fb(um)) / (2.0 * h);
      up(i) = u_star(i);
      um(i) = u_star(i);
    }
    return e;
  };

  JacobianE out;
  out.E = central(fd_step);
  const Matrix e_fine = central(fd_step / 10.0);
  out.fd_consistency = (out.E - e_fine).norm() / (1.0 + out.E.norm());
  if (out.fd_consistency > fd_consistency_tol)
    throw NumericalError("jacobian_E: finite-difference steps disagree (" +
                         std::to_string(out.fd_consistency) +
                         "); step may straddle an active-set boundary");

  Eigen::EigenSolver<Matrix> es(out.E);
  out.eig_real = es.eigenvalues().real();
  out.eig_imag = es.eigenvalues().imag();
  Eigen::SelfAdjointEigenSolver<Matrix> ess(0.5 * (out.E + out.E.transpose()));
  out.eig_sym = ess.eigenvalues();
  out.e1 = -out.eig_sym.maxCoeff();
  out.e2 = -out.eig_sym.minCoeff();
  out.e1_raw = -out.eig_real.maxCoeff();
  out.e2_raw = -out.eig_real.minCoeff();
  out.sym_raw_disagree =
      std::abs(out.e1 - out.e1_raw) > 1e-6 * (1.0 + std::abs(out.e1)) ||
      std::abs(out.e2 - out.e2_raw) > 1e-6 * (1.0 + std::abs(out.e2));
  if (!(out.e1 > 0))
    throw ContractError("jacobian_E: symmetric part of E is not negative definite");
  return out;
}

Matrix lyapunov_P(const Matrix& E, double kappa) {
  if (E.rows() != E.cols()) throw DimensionError("lyapunov_P: E must be square");
  if (!(kappa > 0)) throw ContractError("lyapunov_P: kappa must be > 0");
  const Eigen::Index n = E.rows();

  Eigen::EigenSolver<Matrix> es(E);
  if (es.eigenvalues().real().maxCoeff() >= 0)
    throw ContractError("lyapunov_P: E is not Hurwitz");

  // (P E + E'P)_{ab} = sum_k P_{ak} E_{kb} + E_{ka} P_{kb} = -kappa I_{ab}
  Matrix kron = Matrix::Zero(n * n, n * n);
  Vector rhs = Vector::Zero(n * n);
  for (Eigen::Index a = 0; a < n; ++a) {
    for (Eigen::Index b = 0; b < n; ++b) {
      const Eigen::Index row = a + n * b;
      for (Eigen::Index k = 0; k < n; ++k) {
        kron(row, a + n * k) += E(k, b);
        kron(row, k + n * b) += E(k, a);
      }
      if (a == b) rhs(row) = -kappa;
    }
  }
  Eigen::FullPivLU<Matrix> lu(kron);
  if (!lu.isInvertible())
    throw NumericalError("lyapunov_P: singular Lyapunov system");
  const Vector vec_p = lu.solve(rhs);
  Matrix p(n, n);
  for (Eigen::Index b = 0; b < n; ++b) p.col(b) = vec_p.segment(n * b, n);
  p = 0.5 * (p + p.transpose()).eval();

  const double residual = (p * E + E.transpose() * p + kappa * Matrix::Identity(n, n)).norm();
  if (residual > 1e-10)
    throw ContractError("lyapunov_P: residual " + std::to_string(residual) +
                        " exceeds 1e-10");

  // Quadratic-form sandwich (only meaningful when sym(E) is negative
  // definite, which holds for every E this artifact feeds in).
  Eigen::SelfAdjointEigenSolver<Matrix> ess(0.5 * (E + E.transpose()));
  const double e1 = -ess.eigenvalues().maxCoeff();
  const double e2 = -ess.eigenvalues().minCoeff();
  if (e1 > 0) {
    std::mt19937_64 rng(777);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int t = 0; t < 100; ++t) {
      Vector v(n);
      for (Eigen::Index i = 0; i < n; ++i) v(i) = gauss(rng);
      const double quad = v.dot(p * v);
      const double nv = v.squaredNorm();
      if (quad < kappa / (2.0 * e2) * nv * (1.0 - 1e-9) ||
          quad > kappa / (2.0 * e1) * nv * (1.0 + 1e-9))
        throw ContractError("lyapunov_P: quadratic-form sandwich violated");
    }
  }
  return p;
}

LipschitzEstimate estimate_lipschitz(const std::function<Vector(const Vector&)>& fun,
                                     const Box& box, int n_samples, std::uint64_t seed,
                                     const ExecPolicy& exec) {
  if (n_samples < 2) throw DimensionError("estimate_lipschitz: n_samples >= 2 required");
  if (box.lo.size() != box.hi.size() || box.lo.size() == 0)
    throw DimensionError("estimate_lipschitz: bad box");

  std::vector<double> quotient(n_samples, 0.0);
  std::vector<Vector> pa(n_samples), pb(n_samples);
  parallel_for(
      n_samples,
      [&](std::int64_t i) {
        std::mt19937_64 rng(mix64(seed ^ mix64(static_cast<std::uint64_t>(i))));
        const Vector a = box_sample(rng, box);
        const Vector b = box_sample(rng, box);
        const double dist = (a - b).norm();
        if (dist < 1e-14) return;
        quotient[i] = (fun(a) - fun(b)).norm() / dist;
        pa[i] = a;
        pb[i] = b;
      },
      exec);

  LipschitzEstimate est;
  est.n_samples = n_samples;
  int best = 0;
  for (int i = 1; i < n_samples; ++i)
    if (quotient[i] > quotient[best]) best = i;
  est.raw = quotient[best];
  est.inflated = 1.5 * est.raw;
  est.arg_a = pa[best].size() ? pa[best] : box.lo;
  est.arg_b = pb[best].size() ? pb[best] : box.lo;
  return est;
}

RemainderEstimate estimate_quadratic_remainder(
    const std::function<Vector(const Vector&)>& fun, const Vector& u_star,
    const Matrix& E, double delta_ball, int n_samples, std::uint64_t seed,
    const ExecPolicy& exec) {
  if (!(delta_ball > 0)) throw DimensionError("estimate_quadratic_remainder: delta > 0");
  const Eigen::Index n = u_star.size();

  std::vector<double> quotient(n_samples, 0.0);
  std::vector<Vector> arg(n_samples);
  parallel_for(
      n_samples,
      [&](std::int64_t i) {
        std::mt19937_64 rng(mix64(seed ^ mix64(static_cast<std::uint64_t>(i))));
        std::normal_distribution<double> gauss(0.0, 1.0);
        std::uniform_real_distribution<double> unif(0.0, 1.0);
        Vector dir(n);
        for (Eigen::Index j = 0; j < n; ++j) dir(j) = gauss(rng);
        if (dir.norm() < 1e-14) return;
        dir.normalize();
        const double r = delta_ball * std::pow(unif(rng), 1.0 / static_cast<double>(n));
        if (r < 1e-9 * delta_ball) return;
        const Vector u = u_star + r * dir;
        const Vector ghat = fun(u) - E * (u - u_star);
        quotient[i] = ghat.norm() / (r * r);
        arg[i] = u;
      },
      exec);

  RemainderEstimate est;
  est.delta = delta_ball;
  int best = 0;
  for (int i = 1; i < n_samples; ++i)
    if (quotient[i] > quotient[best]) best = i;
  est.L_raw = quotient[best];
  est.L_inflated = 1.5 * est.L_raw;
  est.argmax = arg[best].size() ? arg[best] : u_star;
  return est;
}

void validate(const StabilityConstants& c) {
  if (!(c.d1 > 0 && c.d2 > 0 && c.d3 > 0 && c.d4 > 0 && c.d5 > 0))
    throw ContractError("StabilityConstants: d1..d5 must be positive");
  if (c.d1 > c.d2) throw ContractError("StabilityConstants: d1 <= d2 required");
  if (!(c.l_Fx > 0 && c.l_Fu > 0 && c.l_hu >= 0 && c.l_hw >= 0))
    throw ContractError("StabilityConstants: Lipschitz constants must be positive");
  if (!(c.e1 > 0 && c.e2 >= c.e1))
    throw ContractError("StabilityConstants: need 0 < e1 <= e2");
  if (!(c.L > 0 && c.delta > 0))
    throw ContractError("StabilityConstants: L and delta must be positive");
  if (!(c.kappa > 0)) throw ContractError("StabilityConstants: kappa must be positive");
  if (!(c.s > 0 && c.s <= 1)) throw ContractError("StabilityConstants: s in (0, 1]");
  if (!(c.M_u > 0)) throw ContractError("StabilityConstants: M_u must be positive");
}

CertificateResult evaluate_certificate(const StabilityConstants& c, double eta) {
  validate(c);
  if (!(eta > 0)) throw ContractError("evaluate_certificate: eta must be > 0");

  CertificateResult r;
  r.eta = eta;
  r.s_min = (c.delta >= c.e1 / c.L) ? 0.0 : 1.0 - c.delta * c.L / c.e1;
  if (!(c.s > r.s_min))
    throw ContractError("evaluate_certificate: s = " + std::to_string(c.s) +
                        " <= s_min = " + std::to_string(r.s_min));

  const double D = c.d4 * c.l_hu + c.d5;
  r.theta = c.kappa * c.l_Fx / (c.e1 * c.l_Fu * D + c.kappa * c.l_Fx);

  r.m11 = r.theta / eta * (c.d3 - c.d4 * c.l_hu * c.l_Fx * eta - c.d5 * c.l_Fx * eta);
  r.m12 = -0.5 * (r.theta * D * c.l_Fu + (1.0 - r.theta) * c.kappa * c.l_Fx / c.e1);
  r.m22 = (1.0 - r.theta) * c.kappa * c.s;

  const double tr = r.m11 + r.m22;
  const double gap = std::sqrt((r.m11 - r.m22) * (r.m11 - r.m22) + 4.0 * r.m12 * r.m12);
  r.lambda_M = 0.5 * (tr - gap);
  r.M_positive_definite = r.m11 > 0 && (r.m11 * r.m22 - r.m12 * r.m12) > 0;

  r.eta_star_1 = c.s * c.d3 * c.e1 / (c.l_Fx * D * (c.l_Fu + c.e1 * c.s));
  r.eta_star_2 = c.d3 / (2.0 * D * c.l_Fx);
  r.eta_bound = std::min({r.eta_star_1, r.eta_star_2, c.alpha0});
  r.eta_ok = eta < r.eta_bound;

  r.r1 = std::max(eta / (r.theta * c.d1), 2.0 * c.e2 * eta / (c.kappa * (1.0 - r.theta)));
  r.r2 = std::min(eta / (r.theta * c.d2), 2.0 * c.e1 * eta / (c.kappa * (1.0 - r.theta)));
  r.r_bar = std::sqrt(r.r1 / r.r2) * (1.0 + c.l_hu * c.l_hu + c.l_hu);
  r.decay_rate = 0.5 * r.lambda_M * r.r2;

  r.input_radius = (c.e1 / c.L) * (1.0 - c.s);
  r.state_distance_bound = std::sqrt(c.d1 / c.d2) * c.r0 - c.diam_Xeq;

  const double z = r.state_distance_bound;
  const double denom_lfx = 2.0 * (c.l_Fx * c.l_hu + c.d5) * c.l_Fu * c.M_u;
  const double denom_d4 = 2.0 * (c.d4 * c.l_hu + c.d5) * c.l_Fu * c.M_u;
  r.alpha0_bound_lfx = c.d3 * z / denom_lfx;
  r.alpha0_bound_d4 = c.d3 * z / denom_d4;
  if (r.alpha0_bound_lfx <= r.alpha0_bound_d4) {
    r.alpha0_bound = r.alpha0_bound_lfx;
    r.alpha0_binding = "l_Fx-variant";
  } else {
    r.alpha0_bound = r.alpha0_bound_d4;
    r.alpha0_binding = "d4-variant";
  }
  r.alpha0_ok = c.alpha0 <= r.alpha0_bound;

  // The certificate construction makes M positive definite whenever eta is
  // inside the bound; a violation here would mean the formulas above are wrong.
  if (eta < std::min(r.eta_star_1, r.eta_star_2) &&
      (!r.M_positive_definite && r.m11 * r.m22 - r.m12 * r.m12 < -1e-12 * (1.0 + tr * tr)))
    throw NumericalError("evaluate_certificate: M not PD inside the eta bound");
  return r;
}

double optimize_kappa(StabilityConstants c, double eta) {
  const double lo = std::log(1e-3), hi = std::log(1e3);
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  auto value = [&](double logk) {
    c.kappa = std::exp(logk);
    const CertificateResult r = evaluate_certificate(c, eta);
    return r.lambda_M * r.r2;
  };
  double a = lo, b = hi;
  double x1 = b - phi * (b - a), x2 = a + phi * (b - a);
  double f1 = value(x1), f2 = value(x2);
  for (int it = 0; it < 80; ++it) {
    if (f1 < f2) {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + phi * (b - a);
      f2 = value(x2);
    } else {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - phi * (b - a);
      f1 = value(x1);
    }
  }
  return std::exp(0.5 * (a + b));
}

double tail_log_slope(const Trajectory& traj) {
  if (!traj.has_reference)
    throw ContractError("tail_log_slope: trajectory has no error channel");
  if (traj.size() < 2) return 0.0;

  // Fit the decaying segment: skip the initial transient (first 20% of the
  // horizon) and the numerical floor the error settles on once the loop has
  // converged.
  double err_min = std::numeric_limits<double>::infinity();
  for (double e : traj.errors)
    if (e > 0) err_min = std::min(err_min, e);
  const double floor_cut = std::max(3.0 * err_min, 1e-13);
  const double t_start =
      traj.times.front() + 0.2 * (traj.times.back() - traj.times.front());

  auto fit = [&](double cut) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    long n = 0;
    for (std::size_t k = 0; k < traj.size(); ++k) {
      if (traj.times[k] < t_start || traj.errors[k] <= cut) continue;
      const double x = traj.times[k], y = std::log(traj.errors[k]);
      sx += x;
      sy += y;
      sxx += x * x;
      sxy += x * y;
      ++n;
    }
    if (n < 2) return std::optional<double>();
    const double denom = n * sxx - sx * sx;
    if (std::abs(denom) < 1e-30) return std::optional<double>();
    return std::optional<double>((n * sxy - sx * sy) / denom);
  };
  if (const auto slope = fit(floor_cut)) return *slope;
  if (const auto slope = fit(1e-13)) return *slope;
  return 0.0;
}

EnvelopeReport verify_envelope(const Trajectory& traj, const CertificateResult& cert) {
  if (!traj.has_reference)
    throw ContractError("verify_envelope: trajectory has no error channel");
  if (traj.size() == 0) throw DimensionError("verify_envelope: empty trajectory");

  EnvelopeReport rep;
  rep.certified_rate = cert.decay_rate;
  const double t0 = traj.times.front();
  const double z0 = traj.errors.front();
  // Absolute slack keeps trajectories started at a numerical equilibrium
  // (z0 ~ 1e-12) from failing on roundoff.
  const double slack = 1e-9 * (1.0 + z0);

  rep.holds = true;
  rep.max_log_gap = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < traj.size(); ++k) {
    const double bound =
        cert.r_bar * z0 * std::exp(-cert.decay_rate * (traj.times[k] - t0));
    const double gap = std::log(std::max(traj.errors[k], 1e-300)) -
                       std::log(std::max(bound, 1e-300));
    if (gap > rep.max_log_gap) {
      rep.max_log_gap = gap;
      rep.worst_time = traj.times[k];
    }
    if (traj.errors[k] > bound + slack) rep.holds = false;
  }
  const double slope = tail_log_slope(traj);
  rep.empirical_decay_rate = -slope;
  rep.tail_decays = slope < 0.0;
  return rep;
}

DConstants lti_d_constants(const LtiPlant& plant, double l_hu) {
  const Matrix s = lyapunov_P(plant.A(), 1.0);
  Eigen::SelfAdjointEigenSolver<Matrix> es(s);
  DConstants d;
  d.d1 = es.eigenvalues().minCoeff();
  d.d2 = es.eigenvalues().maxCoeff();
  d.d3 = 1.0;
  d.d4 = 2.0 * es.eigenvalues().cwiseAbs().maxCoeff();
  d.d5 = d.d4 * l_hu;
  d.source = "lti-lyapunov";
  return d;
}

DConstants unicycle_d_constants_estimate(const UnicyclePlant& plant,
                                         const UnicycleFitOptions& opt,
                                         const ExecPolicy& exec) {
  const Vector u = Vector::Zero(2);
  const Vector w = Vector::Zero(2);
  const int log_stride = 10;

  struct RunSamples {
    std::vector<double> t, e;
  };
  std::vector<RunSamples> runs(opt.n_runs);
  parallel_for(
      opt.n_runs,
      [&](std::int64_t i) {
        std::mt19937_64 rng(mix64(opt.seed ^ mix64(static_cast<std::uint64_t>(i))));
        std::uniform_real_distribution<double> pos(-opt.radius, opt.radius);
        std::uniform_real_distribution<double> ang(-3.141592653589793, 3.141592653589793);
        Vector x(3);
        x << pos(rng), pos(rng), ang(rng);
        const int steps = static_cast<int>(opt.horizon / opt.dt);
        for (int sidx = 0; sidx <= steps; ++sidx) {
          if (sidx % log_stride == 0) {
            runs[i].t.push_back(sidx * opt.dt);
            runs[i].e.push_back((x.head(2) - u).norm());
          }
          const Vector k1 = plant.dynamics(x, u, w);
          const Vector k2 = plant.dynamics(x + 0.5 * opt.dt * k1, u, w);
          const Vector k3 = plant.dynamics(x + 0.5 * opt.dt * k2, u, w);
          const Vector k4 = plant.dynamics(x + opt.dt * k3, u, w);
          x += (opt.dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
      },
      exec);

  // Global decay-rate fit on log e(t), then the envelope constant k_hat.
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  long n = 0;
  for (const auto& run : runs) {
    for (std::size_t j = 0; j < run.t.size(); ++j) {
      if (run.e[j] <= 1e-10 || run.e[j] >= run.e[0]) continue;
      sx += run.t[j];
      sy += std::log(run.e[j] / run.e[0]);
      sxx += run.t[j] * run.t[j];
      sxy += run.t[j] * std::log(run.e[j] / run.e[0]);
      ++n;
    }
  }
  if (n < 10) throw NumericalError("unicycle_d_constants_estimate: fit failed");
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  const double a_hat = std::max(-slope, 1e-3);
  double k_hat = 1.0;
  for (const auto& run : runs)
    for (std::size_t j = 0; j < run.t.size(); ++j)
      if (run.e[0] > 1e-10)
        k_hat = std::max(k_hat, run.e[j] * std::exp(a_hat * run.t[j]) / run.e[0]);

  // Lipschitz constant of the closed inner-loop field over the sampled box.
  Box box;
  box.lo = (Vector(3) << -opt.radius, -opt.radius, -3.2).finished();
  box.hi = (Vector(3) << opt.radius, opt.radius, 3.2).finished();
  const LipschitzEstimate lf = estimate_lipschitz(
      [&](const Vector& x) { return plant.dynamics(x, u, w); }, box, 400,
      opt.seed + 1, exec);
  const double l_f = std::max(lf.inflated, a_hat);

  // Integral-form converse-Lyapunov constants over a window delta.
  const double delta = std::log(2.0 * k_hat * k_hat) / (2.0 * a_hat);
  DConstants d;
  d.d1 = (1.0 - std::exp(-2.0 * l_f * delta)) / (2.0 * l_f);
  d.d2 = k_hat * k_hat * (1.0 - std::exp(-2.0 * a_hat * delta)) / (2.0 * a_hat);
  d.d3 = 0.5;
  d.d4 = 2.0 * d.d2;
  d.d5 = d.d4;  // l_hu = 1 for the unicycle position map
  d.source = "estimated";
  if (d.d1 > d.d2)
    throw NumericalError("unicycle_d_constants_estimate: inconsistent fit (d1 > d2)");
  return d;
}

double max_input_distance(const Vector& lo, const Vector& hi, const Vector& u_star) {
  require_dim(hi, lo.size(), "hi");
  require_dim(u_star, lo.size(), "u_star");
  Vector d(lo.size());
  for (Eigen::Index i = 0; i < lo.size(); ++i)
    d(i) = std::max(std::abs(lo(i) - u_star(i)), std::abs(hi(i) - u_star(i)));
  return d.norm();
}

Matrix sample_equilibrium_set(const PlantModel& plant, const Vector& w,
                              const Box& u_box, int points_per_dim,
                              std::uint64_t seed) {
  const Eigen::Index nu = u_box.lo.size();
  std::vector<Vector> us;
  if (nu <= 2) {
    // Regular grid.
    std::vector<double> axis;
    Vector u(nu);
    if (nu == 1) {
      for (int i = 0; i < points_per_dim; ++i) {
        u(0) = u_box.lo(0) + (u_box.hi(0) - u_box.lo(0)) * i / (points_per_dim - 1.0);
        us.push_back(u);
      }
    } else {
      for (int i = 0; i < points_per_dim; ++i)
        for (int j = 0; j < points_per_dim; ++j) {
          u(0) = u_box.lo(0) + (u_box.hi(0) - u_box.lo(0)) * i / (points_per_dim - 1.0);
          u(1) = u_box.lo(1) + (u_box.hi(1) - u_box.lo(1)) * j / (points_per_dim - 1.0);
          us.push_back(u);
        }
    }
  } else {
    std::mt19937_64 rng(seed);
    for (int i = 0; i < points_per_dim * points_per_dim; ++i)
      us.push_back(box_sample(rng, u_box));
  }
  Matrix out(static_cast<Eigen::Index>(us.size()), plant.output_dim());
  for (std::size_t i = 0; i < us.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = plant.steady_state(us[i], w).transpose();
  return out;
}

StabilityReport analyze(const OptimizationSpec& spec, const PlantModel& plant,
                        const Vector& w, const Vector& u_init, double eta,
                        const AnalysisOptions& opt) {
  StabilityReport rep;
  rep.eta = eta;

  rep.kkt = solve_target_problem(spec, plant, w, u_init, opt.oracle);
  const Vector& u_star = rep.kkt.u_star;
  rep.kkt_check = check_kkt(spec, plant, w, u_star, rep.kkt.multipliers, 1e-6, opt.ctrl);

  rep.jac = jacobian_E(spec, plant, w, u_star, opt.ctrl, opt.fd_step,
                       opt.fd_consistency_tol);

  const Box u_box = opt.u_box.value_or(Box{plant.u_lo, plant.u_hi});

  // Lipschitz constant of u -> F_beta(h(u,w), u) near u*.
  Box fu_box;
  fu_box.lo = (u_star.array() - opt.box_radius).cwiseMax(u_box.lo.array());
  fu_box.hi = (u_star.array() + opt.box_radius).cwiseMin(u_box.hi.array());
  rep.l_Fu_est = estimate_lipschitz(
      [&](const Vector& u) {
        return safe_gradient_flow(spec, plant.steady_state(u, w), u,
                                  plant.sensitivity(u), opt.ctrl);
      },
      fu_box, opt.n_samples, opt.seed, opt.exec);

  // Lipschitz constant of x -> F_beta(x, u) over a box around h(u*, w),
  // maximized over a few frozen u.
  const Vector h_star = plant.steady_state(u_star, w);
  Box fx_box;
  fx_box.lo = h_star.array() - opt.box_radius;
  fx_box.hi = h_star.array() + opt.box_radius;
  std::vector<Vector> u_frozen = {u_star};
  {
    std::mt19937_64 rng(opt.seed + 17);
    for (int j = 0; j < 4; ++j) u_frozen.push_back(box_sample(rng, fu_box));
  }
  for (std::size_t j = 0; j < u_frozen.size(); ++j) {
    const Vector uj = u_frozen[j];
    const Matrix jh = plant.sensitivity(uj);
    const LipschitzEstimate est = estimate_lipschitz(
        [&](const Vector& x) { return safe_gradient_flow(spec, x, uj, jh, opt.ctrl); },
        fx_box, opt.n_samples, opt.seed + 31 * (j + 1), opt.exec);
    if (j == 0 || est.raw > rep.l_Fx_est.raw) rep.l_Fx_est = est;
  }

  // Steady-state map constants.
  {
    std::mt19937_64 rng(opt.seed + 5);
    double lhu = 0.0;
    for (int i = 0; i < 50; ++i) {
      const Vector u = box_sample(rng, u_box);
      Eigen::JacobiSVD<Matrix> svd(plant.sensitivity(u));
      lhu = std::max(lhu, svd.singularValues().maxCoeff());
    }
    rep.l_hu = lhu;
  }
  rep.l_hw_est = estimate_lipschitz(
      [&](const Vector& ww) { return plant.steady_state(u_star, ww); },
      Box{plant.w_lo, plant.w_hi}, 100, opt.seed + 6, opt.exec);

  rep.remainder = estimate_quadratic_remainder(
      [&](const Vector& u) {
        return safe_gradient_flow(spec, plant.steady_state(u, w), u,
                                  plant.sensitivity(u), opt.ctrl);
      },
      u_star, rep.jac.E, opt.delta_ball, opt.n_samples, opt.seed + 7, opt.exec);

  // d-constants.
  if (opt.d_override) {
    rep.d = *opt.d_override;
    rep.d.source = "override";
  } else if (const auto* lti = dynamic_cast<const LtiPlant*>(&plant)) {
    rep.d = lti_d_constants(*lti, rep.l_hu);
  } else if (const auto* uni = dynamic_cast<const UnicyclePlant*>(&plant)) {
    UnicycleFitOptions fit;
    fit.seed = opt.seed + 8;
    rep.d = unicycle_d_constants_estimate(*uni, fit, opt.exec);
  } else {
    throw ContractError("analyze: no d-constant source for this plant family");
  }

  rep.x_eq_samples = sample_equilibrium_set(plant, w, u_box, opt.xeq_points_per_dim,
                                            opt.seed + 9);

  StabilityConstants c;
  c.d1 = rep.d.d1;
  c.d2 = rep.d.d2;
  c.d3 = rep.d.d3;
  c.d4 = rep.d.d4;
  c.d5 = rep.d.d5;
  c.l_Fx = rep.l_Fx_est.inflated;
  c.l_Fu = rep.l_Fu_est.inflated;
  c.l_hu = rep.l_hu;
  c.l_hw = rep.l_hw_est.inflated;
  c.e1 = rep.jac.e1;
  c.e2 = rep.jac.e2;
  c.L = std::max(rep.remainder.L_inflated, 1e-12);
  c.delta = rep.remainder.delta;
  const double s_min =
      (c.delta >= c.e1 / c.L) ? 0.0 : 1.0 - c.delta * c.L / c.e1;
  c.s = opt.s.value_or(0.5 * (s_min + 1.0));
  c.M_u = opt.M_u.value_or(max_input_distance(u_box.lo, u_box.hi, u_star));
  c.r0 = opt.r0;
  {
    double diam = 0.0;
    for (Eigen::Index i = 0; i < rep.x_eq_samples.rows(); ++i)
      for (Eigen::Index j = i + 1; j < rep.x_eq_samples.rows(); ++j)
        diam = std::max(diam, (rep.x_eq_samples.row(i) - rep.x_eq_samples.row(j)).norm());
    c.diam_Xeq = diam;
  }

  rep.kappa_used = opt.kappa;
  c.kappa = rep.kappa_used;
  if (!opt.alpha0) {
    // Default alpha0 just below its own (conservative) bound.
    const double z = std::sqrt(c.d1 / c.d2) * c.r0 - c.diam_Xeq;
    const double bound =
        c.d3 * z /
        (2.0 * (std::max(c.l_Fx, c.d4) * c.l_hu + c.d5) * c.l_Fu * c.M_u);
    c.alpha0 = bound > 0 ? 0.9 * bound : 1e-6;
  } else {
    c.alpha0 = *opt.alpha0;
  }
  {
    const double dist0 =
        opt.x0 ? [&] {
          const Vector y0 = plant.measure(*opt.x0, w);
          double dd = std::numeric_limits<double>::infinity();
          for (Eigen::Index i = 0; i < rep.x_eq_samples.rows(); ++i)
            dd = std::min(dd, (y0.transpose() - rep.x_eq_samples.row(i)).norm());
          return dd;
        }()
                : 0.0;
    const double term2 =
        2.0 * (c.d4 * c.l_hu + c.d5) * c.l_Fu * c.M_u * c.alpha0 / c.d3;
    c.d0 = std::max(dist0, term2);
  }

  if (opt.optimize_kappa) {
    rep.kappa_used = optimize_kappa(c, eta);
    c.kappa = rep.kappa_used;
  }

  rep.P = lyapunov_P(rep.jac.E, c.kappa);
  rep.lyapunov_residual =
      (rep.P * rep.jac.E + rep.jac.E.transpose() * rep.P +
       c.kappa * Matrix::Identity(rep.jac.E.rows(), rep.jac.E.cols()))
          .norm();

  rep.constants = c;
  rep.cert = evaluate_certificate(c, eta);
  return rep;
}

}  // namespace sgf
