#include "sgf/qp.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <limits>

namespace sgf {

namespace {

constexpr double kMinEigH = 1e-10;

bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace

void validate(const QpProblem& p) {
  const Eigen::Index n = p.n();
  if (n <= 0) throw DimensionError("QpProblem: n must be positive");
  require_shape(p.H, n, n, "QpProblem.H");
  if (p.A.size() > 0 || p.q() > 0) require_shape(p.A, p.q(), n, "QpProblem.A");
  if (!all_finite(p.H) || !p.c.allFinite() || !all_finite(p.A) || !p.b.allFinite())
    throw ContractError("QpProblem: non-finite entry");
  const double sym_err = (p.H - p.H.transpose()).cwiseAbs().maxCoeff();
  if (sym_err > 1e-9 * (1.0 + p.H.cwiseAbs().maxCoeff()))
    throw ContractError("QpProblem: H not symmetric");
  Eigen::SelfAdjointEigenSolver<Matrix> es(p.H, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success || es.eigenvalues().minCoeff() < kMinEigH)
    throw ContractError("QpProblem: H not positive definite (min eig < 1e-10)");
}

QpSolution solve_qp(const QpProblem& p, const QpOptions& opt) {
  validate(p);
  if (!(opt.tol > 0)) throw DimensionError("QpOptions.tol must be positive");

  const Eigen::Index n = p.n();
  const Eigen::Index q = p.q();

  Eigen::LLT<Matrix> hfac(p.H);
  if (hfac.info() != Eigen::Success)
    throw QpIllConditioned("qp: Cholesky of H failed");

  Vector theta = hfac.solve(-p.c);
  std::vector<int> work;       // working set, in activation order
  std::vector<double> lam_w;   // multipliers for `work`
  int iterations = 0;

  auto finish = [&](void) -> QpSolution {
    QpSolution sol;
    // Refinement: re-solve the equality-constrained KKT system for the
    // final working set to remove accumulated drift.
    const int nw = static_cast<int>(work.size());
    if (nw == 0) {
      sol.theta = hfac.solve(-p.c);
    } else {
      Matrix kkt = Matrix::Zero(n + nw, n + nw);
      kkt.topLeftCorner(n, n) = p.H;
      Matrix aw(nw, n);
      Vector bw(nw);
      for (int j = 0; j < nw; ++j) {
        aw.row(j) = p.A.row(work[j]);
        bw(j) = p.b(work[j]);
      }
      kkt.topRightCorner(n, nw) = aw.transpose();
      kkt.bottomLeftCorner(nw, n) = aw;
      Vector rhs(n + nw);
      rhs.head(n) = -p.c;
      rhs.tail(nw) = bw;
      Eigen::FullPivLU<Matrix> lu(kkt);
      if (!lu.isInvertible())
        throw QpIllConditioned("qp: singular KKT system at refinement");
      Vector xy = lu.solve(rhs);
      sol.theta = xy.head(n);
      for (int j = 0; j < nw; ++j) lam_w[j] = xy(n + j);
    }
    sol.multipliers = Vector::Zero(q);
    sol.active_set.clear();
    for (int j = 0; j < nw; ++j) {
      sol.active_set.push_back(work[j]);
      sol.multipliers(work[j]) = lam_w[j];
    }
    std::sort(sol.active_set.begin(), sol.active_set.end());
    sol.iterations = iterations;
    sol.kkt_residual = kkt_residual(p, sol);
    if (sol.kkt_residual > std::max(10.0 * opt.tol, 1e-10))
      throw QpIllConditioned("qp: residual " + std::to_string(sol.kkt_residual) +
                             " exceeds tolerance after refinement");
    return sol;
  };

  if (q == 0) return finish();

  const int qn = static_cast<int>(q);
  std::vector<char> in_work(qn, 0);

  auto pick_violated = [&](void) -> int {
    for (int h : opt.hint) {
      if (h < 0 || h >= qn || in_work[h]) continue;
      if (p.A.row(h).dot(theta) - p.b(h) > opt.tol) return h;
    }
    int best = -1;
    double best_v = opt.tol;
    for (int i = 0; i < qn; ++i) {
      if (in_work[i]) continue;
      const double v = p.A.row(i).dot(theta) - p.b(i);
      if (v > best_v) {
        best_v = v;
        best = i;
      }
    }
    return best;
  };

  while (true) {
    const int pidx = pick_violated();
    if (pidx < 0) return finish();

    const Vector ap = p.A.row(pidx).transpose();
    double sp = ap.dot(theta) - p.b(pidx);
    double lam_p = 0.0;

    // Inner loop: drive constraint pidx to feasibility, dropping working
    // constraints whose multiplier would go negative.
    while (true) {
      if (++iterations > opt.max_iter)
        throw QpMaxIterations("qp: exceeded max_iter=" + std::to_string(opt.max_iter));

      const int nw = static_cast<int>(work.size());
      const Vector hi_ap = hfac.solve(ap);
      Vector r(nw);
      Vector z;
      if (nw == 0) {
        z = hi_ap;
      } else {
        Matrix awt(n, nw);
        for (int j = 0; j < nw; ++j) awt.col(j) = p.A.row(work[j]).transpose();
        const Matrix m = hfac.solve(awt);           // H^{-1} A_W'
        const Matrix g = awt.transpose() * m;       // A_W H^{-1} A_W'
        Eigen::LLT<Matrix> gfac(g);
        if (gfac.info() != Eigen::Success)
          throw QpIllConditioned("qp: working-set Gram matrix not PD");
        r = gfac.solve(awt.transpose() * hi_ap);
        z = hi_ap - m * r;
      }

      const double zhz = ap.dot(z);  // = z'Hz >= 0
      const double zhz_scale = std::max(ap.dot(hi_ap), 1e-300);

      // Dual blocking step: smallest ratio lambda_j / r_j over r_j > 0,
      // ties broken by lowest constraint index.
      double t2 = std::numeric_limits<double>::infinity();
      int drop = -1;
      for (int j = 0; j < nw; ++j) {
        if (r(j) > 1e-12) {
          const double cand = lam_w[j] / r(j);
          if (cand < t2 * (1.0 - 1e-12) ||
              (cand <= t2 * (1.0 + 1e-12) && drop >= 0 && work[j] < work[drop])) {
            t2 = cand;
            drop = j;
          }
        }
      }

      if (zhz <= 1e-13 * zhz_scale) {
        // No primal progress possible: constraint normal lies in the span of
        // the working set. Either take a pure dual step or certify
        // infeasibility.
        if (drop < 0)
          throw QpInfeasible("qp: constraint " + std::to_string(pidx) +
                             " incompatible with working set");
        for (int j = 0; j < nw; ++j) lam_w[j] -= t2 * r(j);
        lam_p += t2;
        in_work[work[drop]] = 0;
        work.erase(work.begin() + drop);
        lam_w.erase(lam_w.begin() + drop);
        continue;
      }

      const double t1 = sp / zhz;
      const double t = std::min(t1, t2);
      theta -= t * z;
      for (int j = 0; j < nw; ++j) lam_w[j] -= t * r(j);
      lam_p += t;
      sp -= t * zhz;

      if (t1 <= t2) {
        work.push_back(pidx);
        lam_w.push_back(lam_p);
        in_work[pidx] = 1;
        break;
      }
      in_work[work[drop]] = 0;
      work.erase(work.begin() + drop);
      lam_w.erase(lam_w.begin() + drop);
    }
  }
}

double kkt_residual(const QpProblem& p, const QpSolution& s) {
  require_dim(s.theta, p.n(), "QpSolution.theta");
  require_dim(s.multipliers, p.q(), "QpSolution.multipliers");
  double res = (p.H * s.theta + p.c + p.A.transpose() * s.multipliers)
                   .cwiseAbs()
                   .maxCoeff();
  if (p.q() > 0) {
    const Vector slack = p.A * s.theta - p.b;
    res = std::max(res, slack.maxCoeff());                       // primal
    res = std::max(res, -s.multipliers.minCoeff());              // dual
    res = std::max(res, (s.multipliers.array() * slack.array()).abs().maxCoeff());
  }
  return std::max(res, 0.0);
}

}  // namespace sgf
