#include <doctest.h>

#include <cmath>
#include <random>

#include "sgf/analysis.hpp"

using namespace sgf;

namespace {

OptimizationSpec boxed_quadratic(const Matrix& q_u, const Vector& lin,
                                 double box_half) {
  QuadraticSpecParams p;
  p.Q_u = q_u;
  p.q_u = lin;
  p.Q_x = Matrix::Zero(q_u.rows(), q_u.rows());
  p.q_x = Vector::Zero(q_u.rows());
  p.ell_rows = Matrix(0, q_u.rows());
  p.ell_rhs = Vector(0);
  if (box_half > 0) {
    p.u_lo = Vector::Constant(q_u.rows(), -box_half);
    p.u_hi = Vector::Constant(q_u.rows(), box_half);
  }
  return make_quadratic_spec(p);
}

LtiPlant identity_plant(int n) {
  return LtiPlant(-Matrix::Identity(n, n), Matrix::Identity(n, n),
                  Matrix::Identity(n, n));
}

}  // namespace

TEST_CASE("oracle solves the unicycle problem to the 1-d reduction value") {
  const OptimizationSpec spec = spec_by_name("unicycle_v");
  const UnicyclePlant plant(2.0);
  const Vector w = Vector::Zero(2);
  const KktPoint kkt = solve_target_problem(spec, plant, w, Vector::Zero(2));

  // Along the target ray u = t (0.6, 0.8): min 0.05 t^2 + (t - 1)^2 s.t.
  // t^2 <= 0.9. Unconstrained t = 2/2.1 with t^2 = 0.907 > 0.9, so the ball
  // is active and t* = sqrt(0.9); lambda* = 1/sqrt(0.9) - 1.05.
  const double t_star = std::sqrt(0.9);
  const Vector u_expected = t_star * (Vector(2) << 0.6, 0.8).finished();
  const double lambda_expected = 1.0 / t_star - 1.05;

  CHECK((kkt.u_star - u_expected).norm() <= 1e-8);
  CHECK(kkt.active_set == std::vector<int>{0});
  CHECK(kkt.multipliers(0) == doctest::Approx(lambda_expected).epsilon(1e-6));
  CHECK(kkt.kkt_residual <= 1e-9);
  CHECK(kkt.licq_ok);
  CHECK(kkt.strict_complementarity_ok);
}

TEST_CASE("oracle handles unconstrained and box-clipped quadratics") {
  const LtiPlant plant = identity_plant(2);
  const Vector w = Vector::Zero(2);

  SUBCASE("unconstrained closed form") {
    Matrix q(2, 2);
    q << 2.0, 0.3, 0.3, 1.0;
    const Vector lin = (Vector(2) << -1.0, 0.7).finished();
    const OptimizationSpec spec = boxed_quadratic(q, lin, 0.0);
    const KktPoint kkt = solve_target_problem(spec, plant, w, Vector::Zero(2));
    const Vector expected = -q.ldlt().solve(lin);
    CHECK((kkt.u_star - expected).norm() <= 1e-9);
    CHECK(kkt.active_set.empty());
  }
  SUBCASE("separable quadratic clipped to the box face") {
    Matrix q = Matrix::Identity(2, 2);
    const Vector lin = (Vector(2) << -3.0, -0.5).finished();  // minimizer (3, 0.5)
    const OptimizationSpec spec = boxed_quadratic(q, lin, 1.0);
    const KktPoint kkt = solve_target_problem(spec, plant, w, Vector::Zero(2));
    CHECK(kkt.u_star(0) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(kkt.u_star(1) == doctest::Approx(0.5).epsilon(1e-9));
    // gamma rows: (u - hi; lo - u); face u_0 <= 1 is row 0
    CHECK(kkt.active_set == std::vector<int>{0});
    CHECK(kkt.multipliers(0) == doctest::Approx(2.0).epsilon(1e-7));
    CHECK(kkt.strict_complementarity_ok);
  }
}

TEST_CASE("check_kkt certifies both sides of the equivalence") {
  const OptimizationSpec spec = spec_by_name("unicycle_v");
  const UnicyclePlant plant(2.0);
  const Vector w = Vector::Zero(2);
  ControllerConfig ctrl;
  const KktPoint kkt = solve_target_problem(spec, plant, w, Vector::Zero(2));

  SUBCASE("oracle output passes and the flow vanishes") {
    const KktCheck chk = check_kkt(spec, plant, w, kkt.u_star, kkt.multipliers,
                                   1e-6, ctrl);
    CHECK(chk.pass);
    CHECK(chk.f_beta_norm <= 1e-6);
  }
  SUBCASE("perturbation breaks the certificate") {
    Vector u = kkt.u_star;
    u(0) += 1e-2;
    const KktCheck chk = check_kkt(spec, plant, w, u, kkt.multipliers, 1e-6, ctrl);
    CHECK(!chk.pass);
    CHECK(std::max({chk.stationarity, chk.primal_max, chk.comp_max}) >= 1e-3);
  }
  SUBCASE("interior stationary point with zero multipliers") {
    Matrix q = Matrix::Identity(2, 2);
    const Vector lin = (Vector(2) << -0.2, 0.1).finished();
    const OptimizationSpec us = boxed_quadratic(q, lin, 5.0);
    const LtiPlant ip = identity_plant(2);
    const Vector u_min = -lin;
    const KktCheck chk = check_kkt(us, ip, w, u_min, Vector::Zero(4), 1e-6, ctrl);
    CHECK(chk.pass);
  }
  SUBCASE("qp multipliers at the optimizer recover the nlp multipliers") {
    const QpProblem qp = assemble_controller_qp(
        spec, plant.steady_state(kkt.u_star, w), kkt.u_star,
        plant.sensitivity(kkt.u_star), ctrl.beta);
    const QpSolution sol = solve_qp(qp);
    // stationarity 2 theta + 2 g + A' mu = 0 at theta = 0 vs g + A' lambda = 0
    CHECK((0.5 * sol.multipliers - kkt.multipliers).cwiseAbs().maxCoeff() <= 1e-6);
  }
}

TEST_CASE("jacobian_E") {
  const Vector w = Vector::Zero(2);
  ControllerConfig ctrl;

  SUBCASE("unconstrained quadratic gives E = -Q") {
    Matrix q(2, 2);
    q << 2.0, 0.4, 0.4, 1.5;
    const OptimizationSpec spec = boxed_quadratic(q, Vector::Zero(2), 0.0);
    const LtiPlant plant = identity_plant(2);
    const JacobianE jac = jacobian_E(spec, plant, w, Vector::Zero(2), ctrl);
    CHECK((jac.E + q).norm() <= 1e-9);
    CHECK(jac.e1 == doctest::Approx(1.5 - 0.4 * 0.4 / 0.5).epsilon(0.2));
    CHECK(jac.fd_consistency <= 1e-9);
  }
  SUBCASE("one active linear constraint matches the reduced form") {
    // min 1/2 u'Qu + q'u s.t. u_0 <= 1, active at u* = (1, 0) with lambda = 2
    Matrix q(2, 2);
    q << 2.0, 0.0, 0.0, 1.0;
    const Vector lin = (Vector(2) << -4.0, 0.0).finished();
    QuadraticSpecParams p;
    p.Q_u = q;
    p.q_u = lin;
    p.Q_x = Matrix::Zero(2, 2);
    p.q_x = Vector::Zero(2);
    p.ell_rows = Matrix(0, 2);
    p.ell_rhs = Vector(0);
    p.u_lo = Vector::Constant(2, -50.0);
    p.u_hi = (Vector(2) << 1.0, 50.0).finished();
    const OptimizationSpec spec = make_quadratic_spec(p);
    const LtiPlant plant = identity_plant(2);
    const Vector u_star = (Vector(2) << 1.0, 0.0).finished();

    const JacobianE jac = jacobian_E(spec, plant, w, u_star, ctrl);
    // E = -(I - a a'/|a|^2) Q - beta a a'/|a|^2 with a = e_0
    Matrix expected(2, 2);
    expected << -ctrl.beta, 0.0, 0.0, -1.0;
    CHECK((jac.E - expected).norm() <= 1e-6);
    CHECK(jac.e1 == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(jac.e2 == doctest::Approx(ctrl.beta).epsilon(1e-6));
  }
  SUBCASE("unicycle problem: spectrum matches the reduced-Hessian values") {
    const OptimizationSpec spec = spec_by_name("unicycle_v");
    const UnicyclePlant plant(2.0);
    const KktPoint kkt = solve_target_problem(spec, plant, w, Vector::Zero(2));
    const JacobianE jac = jacobian_E(spec, plant, w, kkt.u_star, ctrl);
    // tangential: Hessian of the Lagrangian on the tangent space,
    // 2.1 + 2 lambda* = 2 / sqrt(0.9); normal: -beta from the barrier row
    CHECK(jac.e1 == doctest::Approx(2.0 / std::sqrt(0.9)).epsilon(1e-7));
    CHECK(jac.e2 == doctest::Approx(ctrl.beta).epsilon(1e-7));
    CHECK(!jac.sym_raw_disagree);
    CHECK(jac.fd_consistency <= 1e-3);
  }
  SUBCASE("positive-definite direction is rejected") {
    Matrix q(2, 2);
    q << -1.0, 0.0, 0.0, 1.0;  // indefinite phi Hessian -> F has unstable direction
    const OptimizationSpec spec = boxed_quadratic(q, Vector::Zero(2), 0.0);
    const LtiPlant plant = identity_plant(2);
    CHECK_THROWS_AS(jacobian_E(spec, plant, w, Vector::Zero(2), ctrl), ContractError);
  }
}

TEST_CASE("lyapunov_P closed forms and random verification") {
  CHECK((lyapunov_P(-Matrix::Identity(3, 3), 2.0) - Matrix::Identity(3, 3)).norm() <=
        1e-12);

  Matrix e = Matrix::Zero(2, 2);
  e(0, 0) = -1.0;
  e(1, 1) = -4.0;
  Matrix expected = Matrix::Zero(2, 2);
  expected(0, 0) = 0.5;
  expected(1, 1) = 0.125;
  CHECK((lyapunov_P(e, 1.0) - expected).norm() <= 1e-12);

  std::mt19937_64 rng(7);
  std::normal_distribution<double> gauss;
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 5);  // dim <= 6
    Matrix r(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) r(i, j) = gauss(rng);
    const Matrix nd = -(r * r.transpose() + 0.2 * Matrix::Identity(n, n));
    const double kappa = 0.5 + (trial % 3);
    const Matrix p = lyapunov_P(nd, kappa);  // self-verifies residual + sandwich
    const double res =
        (p * nd + nd.transpose() * p + kappa * Matrix::Identity(n, n)).norm();
    CHECK(res <= 1e-10);
  }

  CHECK_THROWS_AS(lyapunov_P(Matrix::Identity(2, 2), 1.0), ContractError);
}

TEST_CASE("lipschitz estimator") {
  Matrix slope(2, 2);
  slope << 1.0, 2.0, 0.0, 1.5;
  const double true_l = slope.jacobiSvd().singularValues().maxCoeff();
  Box box;
  box.lo = Vector::Constant(2, -1.0);
  box.hi = Vector::Constant(2, 1.0);
  auto affine = [&](const Vector& v) { return Vector(slope * v + Vector::Ones(2)); };

  const LipschitzEstimate est = estimate_lipschitz(affine, box, 400, 5);
  CHECK(est.raw <= true_l * (1.0 + 1e-12));
  CHECK(est.inflated >= true_l);
  CHECK(est.inflated <= 1.5 * true_l * (1.0 + 1e-12));

  SUBCASE("growing the sample set never lowers the raw estimate") {
    const LipschitzEstimate small = estimate_lipschitz(affine, box, 100, 5);
    const LipschitzEstimate big = estimate_lipschitz(affine, box, 200, 5);
    CHECK(big.raw >= small.raw);
  }
  SUBCASE("serial and openmp paths agree bitwise") {
    const LipschitzEstimate serial =
        estimate_lipschitz(affine, box, 300, 5, ExecPolicy::serial());
    const LipschitzEstimate parallel = estimate_lipschitz(affine, box, 300, 5);
    CHECK(serial.raw == parallel.raw);
    CHECK((serial.arg_a - parallel.arg_a).norm() == 0.0);
  }

  SUBCASE("recovers the gradient-flow slope of an unconstrained quadratic") {
    Matrix q(2, 2);
    q << 2.0, 0.5, 0.5, 1.0;
    const OptimizationSpec spec = boxed_quadratic(q, Vector::Zero(2), 0.0);
    const LtiPlant plant = identity_plant(2);
    ControllerConfig ctrl;
    const Vector w = Vector::Zero(2);
    // F_beta(h(u,w), u) = -q u, so the Lipschitz constant is |q|_2
    const double q_norm = q.jacobiSvd().singularValues().maxCoeff();
    const LipschitzEstimate est = estimate_lipschitz(
        [&](const Vector& u) {
          return safe_gradient_flow(spec, plant.steady_state(u, w), u,
                                    plant.sensitivity(u), ctrl);
        },
        box, 400, 5);
    CHECK(est.inflated >= q_norm);
    CHECK(est.inflated <= 1.5 * q_norm * (1.0 + 1e-9));
  }

  SUBCASE("flow is Lipschitz in the measured state; bound reported") {
    const OptimizationSpec spec = spec_by_name("unicycle_v");
    ControllerConfig ctrl;
    const Vector u = (Vector(2) << 0.1, -0.2).finished();
    const LipschitzEstimate est = estimate_lipschitz(
        [&](const Vector& x) {
          return safe_gradient_flow(spec, x, u, Matrix::Identity(2, 2), ctrl);
        },
        box, 200, 9);
    CHECK(est.raw > 0.0);
    CHECK(std::isfinite(est.raw));
    CHECK(est.arg_a.size() == 2);
  }
}

TEST_CASE("quadratic remainder estimator") {
  const Vector u_star = Vector::Zero(2);
  Matrix q(2, 2);
  q << 2.0, 0.0, 0.0, 1.0;

  SUBCASE("exactly linear field has vanishing remainder") {
    auto linear = [&](const Vector& u) { return Vector(-q * u); };
    const RemainderEstimate est =
        estimate_quadratic_remainder(linear, u_star, -q, 0.5, 300, 3);
    CHECK(est.L_raw <= 1e-9);
  }
  SUBCASE("synthetic quadratic remainder is recovered") {
    const double c = 0.7;
    const Vector dir = (Vector(2) << 3.0, 4.0).finished();  // |dir| = 5
    auto field = [&](const Vector& u) {
      return Vector(-q * u + c * u.squaredNorm() * dir);
    };
    const RemainderEstimate est =
        estimate_quadratic_remainder(field, u_star, -q, 0.5, 400, 3);
    CHECK(est.L_raw == doctest::Approx(c * 5.0).epsilon(1e-9));
  }
  SUBCASE("halving the ball does not raise the raw bound") {
    auto field = [&](const Vector& u) {
      return Vector(-q * u + 0.3 * u.squaredNorm() * Vector::Ones(2));
    };
    const RemainderEstimate whole =
        estimate_quadratic_remainder(field, u_star, -q, 0.5, 400, 3);
    const RemainderEstimate half =
        estimate_quadratic_remainder(field, u_star, -q, 0.25, 400, 3);
    CHECK(half.L_raw <= whole.L_raw * 1.25 + 1e-9);
  }
}

TEST_CASE("stability certificate: unit-constants hand example") {
  StabilityConstants c;  // all ones by default
  c.delta = 2.0;         // >= e1/L -> s_min = 0
  const CertificateResult r = evaluate_certificate(c, 0.1);

  CHECK(r.s_min == 0.0);
  CHECK(r.theta == 1.0 / 3.0);
  CHECK(r.eta_star_1 == 0.25);
  CHECK(r.eta_star_2 == 0.25);
  CHECK(r.m11 == doctest::Approx(8.0 / 3.0).epsilon(1e-15));
  CHECK(r.m12 == doctest::Approx(-2.0 / 3.0).epsilon(1e-15));
  CHECK(r.m22 == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(r.M_positive_definite);
  // lambda_min of [[8/3, -2/3], [-2/3, 2/3]] = (10 - sqrt(52)) / 6
  CHECK(r.lambda_M == doctest::Approx((10.0 - std::sqrt(52.0)) / 6.0).epsilon(1e-14));
  CHECK(r.decay_rate == doctest::Approx(0.5 * r.lambda_M * r.r2).epsilon(1e-15));
}

TEST_CASE("stability certificate: branches and flags") {
  StabilityConstants c;

  SUBCASE("s_min branch with delta < e1/L") {
    c.delta = 0.5;  // e1/L = 1
    c.s = 0.9;
    const CertificateResult r = evaluate_certificate(c, 0.01);
    CHECK(r.s_min == doctest::Approx(0.5));
    CHECK(r.input_radius == doctest::Approx(1.0 * (1.0 - 0.9)));
  }
  SUBCASE("s at or below s_min is rejected") {
    c.delta = 0.5;
    c.s = 0.5;
    CHECK_THROWS_AS(evaluate_certificate(c, 0.01), ContractError);
  }
  SUBCASE("eta above the bound is flagged, not thrown") {
    c.delta = 2.0;
    const CertificateResult r = evaluate_certificate(c, 10.0);
    CHECK(!r.eta_ok);
    CHECK(!r.M_positive_definite);  // far outside the bound M loses PD-ness
  }
  SUBCASE("m11 scales like 1/eta, so small eta is always PD") {
    c.delta = 2.0;
    const CertificateResult tiny = evaluate_certificate(c, 1e-6);
    CHECK(tiny.M_positive_definite);
    const CertificateResult small = evaluate_certificate(c, 1e-3);
    CHECK(small.m11 > tiny.m11 * 1e-4);  // ~1000x larger at 1000x smaller eta
    CHECK(std::abs(small.m12 - tiny.m12) <= 1e-12);
  }
  SUBCASE("region radius shrinks as s grows") {
    c.delta = 0.5;
    double prev = std::numeric_limits<double>::infinity();
    for (double s : {0.6, 0.75, 0.9}) {
      c.s = s;
      const CertificateResult r = evaluate_certificate(c, 0.01);
      CHECK(r.input_radius < prev);
      prev = r.input_radius;
    }
  }
  SUBCASE("pure formula evaluation is bit-stable") {
    c.delta = 2.0;
    const CertificateResult a = evaluate_certificate(c, 0.1);
    const CertificateResult b = evaluate_certificate(c, 0.1);
    CHECK(a.lambda_M == b.lambda_M);
    CHECK(a.r_bar == b.r_bar);
    CHECK(a.theta == b.theta);
  }
}

TEST_CASE("theta lies in (0,1) for positive constants") {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> pos(0.01, 10.0);
  for (int i = 0; i < 100; ++i) {
    StabilityConstants c;
    c.d1 = pos(rng);
    c.d2 = c.d1 + pos(rng);
    c.d3 = pos(rng);
    c.d4 = pos(rng);
    c.d5 = pos(rng);
    c.l_Fx = pos(rng);
    c.l_Fu = pos(rng);
    c.l_hu = pos(rng);
    c.e1 = pos(rng);
    c.e2 = c.e1 + pos(rng);
    c.L = pos(rng);
    c.delta = c.e1 / c.L + pos(rng);  // s_min = 0
    c.kappa = pos(rng);
    c.s = 1.0;
    c.M_u = pos(rng);
    const CertificateResult r = evaluate_certificate(c, 1e-4);
    CHECK(r.theta > 0.0);
    CHECK(r.theta < 1.0);
  }
}

TEST_CASE("kappa golden-section search improves the objective") {
  StabilityConstants c;
  c.delta = 2.0;
  const double eta = 0.05;
  const double base = evaluate_certificate(c, eta).lambda_M *
                      evaluate_certificate(c, eta).r2;
  const double kappa_opt = optimize_kappa(c, eta);
  c.kappa = kappa_opt;
  const CertificateResult r = evaluate_certificate(c, eta);
  CHECK(r.lambda_M * r.r2 >= base - 1e-12);
}

TEST_CASE("envelope verification") {
  CertificateResult cert;
  cert.r_bar = 1.0;
  cert.decay_rate = 0.5;

  Trajectory traj;
  traj.has_reference = true;
  for (int k = 0; k <= 100; ++k) {
    const double t = 0.1 * k;
    traj.times.push_back(t);
    traj.errors.push_back(std::exp(-0.2 * t));  // decays slower than certified
  }
  const EnvelopeReport slow = verify_envelope(traj, cert);
  CHECK(!slow.holds);
  CHECK(slow.tail_decays);
  CHECK(slow.empirical_decay_rate == doctest::Approx(0.2).epsilon(1e-6));

  cert.decay_rate = 0.1;  // now conservative
  const EnvelopeReport ok = verify_envelope(traj, cert);
  CHECK(ok.holds);

  SUBCASE("trajectory starting at the equilibrium") {
    Trajectory flat;
    flat.has_reference = true;
    for (int k = 0; k <= 10; ++k) {
      flat.times.push_back(0.1 * k);
      flat.errors.push_back(1e-13);
    }
    CHECK(verify_envelope(flat, cert).holds);
  }
  SUBCASE("missing error channel is an error") {
    Trajectory none;
    none.has_reference = false;
    none.times = {0.0};
    CHECK_THROWS_AS(verify_envelope(none, cert), ContractError);
  }
}

TEST_CASE("d-constants") {
  SUBCASE("lti closed form for A = -I") {
    const LtiPlant plant = identity_plant(2);
    const DConstants d = lti_d_constants(plant, 1.0);
    CHECK(d.d1 == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(d.d2 == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(d.d3 == 1.0);
    CHECK(d.d4 == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(d.d5 == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(d.source == "lti-lyapunov");
  }
  SUBCASE("unicycle estimate is sane and labeled") {
    const UnicyclePlant plant(2.0);
    UnicycleFitOptions opt;
    opt.n_runs = 10;
    opt.horizon = 6.0;
    const DConstants d = unicycle_d_constants_estimate(plant, opt);
    CHECK(d.source == "estimated");
    CHECK(d.d1 > 0.0);
    CHECK(d.d1 <= d.d2);
    CHECK(d.d4 > 0.0);
    CHECK(d.d5 == d.d4);
  }
}

TEST_CASE("max input distance is attained at a corner") {
  const Vector lo = Vector::Constant(2, -10.0);
  const Vector hi = Vector::Constant(2, 10.0);
  const Vector u = (Vector(2) << 1.0, -2.0).finished();
  CHECK(max_input_distance(lo, hi, u) ==
        doctest::Approx(std::hypot(11.0, 12.0)).epsilon(1e-14));
}

TEST_CASE("analyze pipeline end to end on the lti problem") {
  const LtiPlant plant(-Matrix::Identity(2, 2), Matrix::Identity(2, 2),
                       Matrix::Identity(2, 2));
  const OptimizationSpec spec = make_lti_quadratic_spec();
  AnalysisOptions opt;
  opt.n_samples = 150;
  opt.box_radius = 0.5;
  opt.u_box = Box{Vector::Constant(2, -5.0), Vector::Constant(2, 5.0)};
  opt.r0 = 40.0;
  const StabilityReport rep =
      analyze(spec, plant, Vector::Zero(2), Vector::Zero(2), 0.01, opt);

  CHECK(rep.kkt_check.pass);
  CHECK(rep.kkt_check.f_beta_norm <= 1e-6);
  // unconstrained interior optimum: E = -(Q_u + J'Q_x J) = -3I
  CHECK((rep.jac.E + 3.0 * Matrix::Identity(2, 2)).norm() <= 1e-6);
  CHECK(rep.lyapunov_residual <= 1e-10);
  CHECK(rep.constants.e1 == doctest::Approx(3.0).epsilon(1e-6));
  CHECK(rep.cert.theta > 0.0);
  CHECK(rep.cert.theta < 1.0);
  // eta = 0.01 is far below the bound for this benign problem
  CHECK(rep.cert.eta_ok);
  CHECK(rep.cert.M_positive_definite);
  CHECK(rep.cert.decay_rate > 0.0);
}
