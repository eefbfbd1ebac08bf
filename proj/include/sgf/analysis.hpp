#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>

#include "sgf/parallel.hpp"
#include "sgf/simulate.hpp"

namespace sgf {

// NLP oracle --------------------------------------------------------------

/// KKT pair for the target problem
///   min phi(u) + psi(h(u,w))  s.t.  ell(h(u,w)) <= 0, gamma(u) <= 0,
/// with multipliers ordered like the controller constraint stack
/// (state rows first, then input rows).
struct KktPoint {
  Vector u_star;
  Vector multipliers;
  std::vector<int> active_set;
  double kkt_residual = 0.0;
  bool licq_ok = false;
  double licq_min_singular = 0.0;
  bool strict_complementarity_ok = false;
  double min_active_multiplier = 0.0;
  int iterations = 0;
};

struct NlpOracleOptions {
  double tol = 1e-9;
  int pg_iterations = 2000;
  double pg_step0 = 0.2;
  int polish_rounds = 12;
  int newton_max_iter = 60;
  double active_tol = 5e-2;  ///< |c_i| threshold for the initial active guess
};

/// Independent NLP oracle: projected gradient with diminishing steps to
/// locate the basin, then Newton polish on the active-set KKT system (with
/// finite-difference curvature). Entirely separate from the controller QP
/// path. Verifies LICQ and strict complementarity at the result; the flags
/// are reported, not fatal. Throws NumericalError if no KKT point is found.
KktPoint solve_target_problem(const OptimizationSpec& spec, const PlantModel& plant,
                              const Vector& w, const Vector& u_init,
                              const NlpOracleOptions& opt = {});

struct KktCheck {
  double stationarity = 0.0;
  double primal_max = 0.0;
  double dual_min = 0.0;  ///< min multiplier (negative = dual infeasible)
  double comp_max = 0.0;
  bool pass = false;
  double f_beta_norm = 0.0;  ///< |F_beta(h(u,w), u)|, the equilibrium side
};

/// Verifies the KKT conditions of the target problem at (u, lambda) to
/// tolerance tol, and evaluates the controller side of the equivalence.
KktCheck check_kkt(const OptimizationSpec& spec, const PlantModel& plant,
                   const Vector& w, const Vector& u, const Vector& lambda, double tol,
                   const ControllerConfig& ctrl);

// Jacobian of F_beta at the optimizer ---------------------------------------

struct JacobianE {
  Matrix E;                 ///< central differences at fd_step
  Vector eig_real, eig_imag;  ///< spectrum of E itself (reporting)
  Vector eig_sym;             ///< spectrum of (E + E')/2 (definiteness)
  double e1 = 0.0;            ///< -max eig_sym
  double e2 = 0.0;            ///< -min eig_sym
  double e1_raw = 0.0;        ///< -max Re eig(E)
  double e2_raw = 0.0;
  bool sym_raw_disagree = false;  ///< raw and symmetrized spectra disagree > 1e-6
  double fd_consistency = 0.0;    ///< relative gap between fd_step and fd_step/10
};

/// E = d F_beta(h(u,w), u) / du at u_star by central differences, evaluated
/// at fd_step and fd_step/10 (the two must agree to fd_consistency_tol;
/// disagreement usually means the step straddles an active-set boundary).
/// Throws ContractError if the symmetric part is not negative definite.
JacobianE jacobian_E(const OptimizationSpec& spec, const PlantModel& plant,
                     const Vector& w, const Vector& u_star, const ControllerConfig& ctrl,
                     double fd_step = 1e-5, double fd_consistency_tol = 1e-3);

/// Solves P E + E' P = -kappa I by the vectorized (Kronecker) linear solve.
/// Verifies the residual (<= 1e-10) and the quadratic-form sandwich
/// kappa/(2 e2) |v|^2 <= v'Pv <= kappa/(2 e1) |v|^2 on 100 random vectors,
/// with e1, e2 from the symmetric part of E. Throws NumericalError on a
/// singular system, ContractError when a verification fails.
Matrix lyapunov_P(const Matrix& E, double kappa);

// Sampling estimators -------------------------------------------------------

struct Box {
  Vector lo, hi;
};

struct LipschitzEstimate {
  double raw = 0.0;
  double inflated = 0.0;  ///< 1.5 * raw
  Vector arg_a, arg_b;    ///< pair attaining the max quotient
  int n_samples = 0;
};

/// Max difference quotient of `fun` over n_samples random point pairs in the
/// box, inflated by 1.5. Sampling is per-index seeded: results do not depend
/// on the execution policy, and growing n_samples never lowers the raw value.
LipschitzEstimate estimate_lipschitz(const std::function<Vector(const Vector&)>& fun,
                                     const Box& box, int n_samples,
                                     std::uint64_t seed = 1234,
                                     const ExecPolicy& exec = {});

struct RemainderEstimate {
  double L_raw = 0.0;
  double L_inflated = 0.0;
  double delta = 0.0;  ///< ball radius actually sampled
  Vector argmax;
};

/// L such that |F(u) - E (u - u*)| <= L |u - u*|^2 on the sampled delta-ball
/// (max quotient over samples, inflated 1.5x).
RemainderEstimate estimate_quadratic_remainder(
    const std::function<Vector(const Vector&)>& fun, const Vector& u_star,
    const Matrix& E, double delta_ball, int n_samples, std::uint64_t seed = 1234,
    const ExecPolicy& exec = {});

// Stability certificate -------------------------------------------------------

struct StabilityConstants {
  double d1 = 1, d2 = 1, d3 = 1, d4 = 1, d5 = 1;  // Lyapunov constants
  double l_Fx = 1, l_Fu = 1;                      // controller Lipschitz constants
  double l_hu = 1, l_hw = 0;                      // steady-state map constants
  double e1 = 1, e2 = 1;                          // -max/-min eig of sym(E)
  double L = 1, delta = 1;                        // quadratic remainder bound
  double kappa = 1.0, s = 1.0;                    // free parameters
  double M_u = 1.0;                               // max |u - u*| over U_c
  double alpha0 = 0.1;
  double r0 = 1.0;
  double d0 = 0.0;
  double diam_Xeq = 0.0;
};

void validate(const StabilityConstants& c);

struct CertificateResult {
  double s_min = 0.0, theta = 0.0;
  double m11 = 0.0, m12 = 0.0, m22 = 0.0;
  double lambda_M = 0.0;
  bool M_positive_definite = false;
  double eta = 0.0;
  double eta_star_1 = 0.0, eta_star_2 = 0.0;
  double eta_bound = 0.0;  ///< min{eta*_1, eta*_2, alpha0}
  bool eta_ok = false;     ///< eta < eta_bound (reported, not fatal)
  double r1 = 0.0, r2 = 0.0, r_bar = 0.0;
  double decay_rate = 0.0;           ///< 1/2 lambda_M r2
  double input_radius = 0.0;         ///< (e1/L)(1 - s)
  double state_distance_bound = 0.0; ///< sqrt(d1/d2) r0 - diam(Xeq)
  double alpha0_bound_lfx = 0.0;     ///< variant with l_Fx in the factor
  double alpha0_bound_d4 = 0.0;      ///< variant with d4
  double alpha0_bound = 0.0;         ///< conservative min of the two
  std::string alpha0_binding;        ///< "l_Fx-variant" or "d4-variant"
  bool alpha0_ok = false;
};

/// Pure formula evaluation of the closed-form stability certificate at the
/// candidate gain eta. Throws ContractError when s <= s_min (InvalidS); an eta above
/// the bound is reported via eta_ok, never thrown.
CertificateResult evaluate_certificate(const StabilityConstants& c, double eta);

/// Golden-section search over log-kappa maximizing lambda_M * r2. Returns
/// the best kappa found in [1e-3, 1e3].
double optimize_kappa(StabilityConstants c, double eta);

// Envelope verification ------------------------------------------------------

struct EnvelopeReport {
  bool holds = false;
  double max_log_gap = 0.0;  ///< max of log|z~| - log(envelope); <= 0 when holds
  double worst_time = 0.0;
  double certified_rate = 0.0;
  double empirical_decay_rate = 0.0;  ///< -slope of the tail fit of log|z~|
  bool tail_decays = false;           ///< empirical slope strictly negative
};

/// Checks |z~(t)| <= r_bar |z~(t0)| exp(-decay_rate (t - t0)) at every
/// logged sample, and fits the empirical decay rate on the trajectory tail.
/// Requires the trajectory error channel (throws ContractError otherwise).
EnvelopeReport verify_envelope(const Trajectory& traj, const CertificateResult& cert);

// Constant construction helpers ----------------------------------------------

struct DConstants {
  double d1 = 0, d2 = 0, d3 = 0, d4 = 0, d5 = 0;
  std::string source;  ///< "lti-lyapunov" or "estimated"
};

/// d-constants from the quadratic Lyapunov function W = x~' S x~ with
/// S A + A' S = -I: d1 = eig_min(S), d2 = eig_max(S), d3 = 1, d4 = 2|S|,
/// d5 = d4 * l_hu.
DConstants lti_d_constants(const LtiPlant& plant, double l_hu);

struct UnicycleFitOptions {
  int n_runs = 40;
  double horizon = 8.0;
  double dt = 1e-3;
  double radius = 1.0;  ///< initial position offsets sampled in [-r, r]^2
  std::uint64_t seed = 4242;
};

/// Estimated d-constants for the unicycle inner loop: fits (k, a) of the
/// position-error decay over sampled runs, estimates the dynamics Lipschitz
/// constant, and assembles integral-form converse-Lyapunov constants.
/// Labeled "estimated" in reports.
DConstants unicycle_d_constants_estimate(const UnicyclePlant& plant,
                                         const UnicycleFitOptions& opt = {},
                                         const ExecPolicy& exec = {});

/// max |u - u*| over the box [lo, hi] (attained at a corner).
double max_input_distance(const Vector& lo, const Vector& hi, const Vector& u_star);

/// Least-squares slope of log(err) over the tail (second half) of the
/// trajectory; samples below 1e-13 are skipped. Returns the slope
/// (negative = decay).
double tail_log_slope(const Trajectory& traj);

/// Grid/random sample of the equilibrium set h(U_c x {w}), one point per row.
Matrix sample_equilibrium_set(const PlantModel& plant, const Vector& w,
                              const Box& u_box, int points_per_dim,
                              std::uint64_t seed = 99);

// Full pipeline ---------------------------------------------------------------

struct AnalysisOptions {
  NlpOracleOptions oracle;
  ControllerConfig ctrl;  ///< beta and QP tolerances; eta passed separately
  double fd_step = 1e-5;
  double fd_consistency_tol = 1e-3;
  int n_samples = 400;      ///< per sampling estimator
  double delta_ball = 0.05;
  double box_radius = 1.0;  ///< sampling radius around u* / h(u*,w)
  double kappa = 1.0;
  /// Free parameter s in (s_min, 1]; unset = midpoint of the valid range.
  std::optional<double> s;
  bool optimize_kappa = false;
  std::optional<DConstants> d_override;
  double r0 = 10.0;
  std::optional<double> alpha0;  ///< default: 0.9 x the computed bound
  std::optional<double> M_u;     ///< default: corner distance over the input box
  std::optional<Box> u_box;      ///< default: plant sampling box
  int xeq_points_per_dim = 7;
  std::optional<Vector> x0;      ///< initial state, for the d0 distance term
  std::uint64_t seed = 1234;
  ExecPolicy exec;
};

struct StabilityReport {
  KktPoint kkt;
  KktCheck kkt_check;
  JacobianE jac;
  Matrix P;
  double lyapunov_residual = 0.0;
  DConstants d;
  LipschitzEstimate l_Fx_est, l_Fu_est, l_hw_est;
  double l_hu = 0.0;
  RemainderEstimate remainder;
  StabilityConstants constants;
  CertificateResult cert;
  Matrix x_eq_samples;
  double kappa_used = 0.0;
  double eta = 0.0;
};

/// Runs the whole certificate pipeline: NLP oracle, equilibrium/KKT
/// cross-check,
/// Jacobian E, Lyapunov P, sampled Lipschitz/remainder constants, d-constants
/// (closed form for LTI plants, estimated for the unicycle, or overridden),
/// and the certificate formulas at the candidate eta.
StabilityReport analyze(const OptimizationSpec& spec, const PlantModel& plant,
                        const Vector& w, const Vector& u_init, double eta,
                        const AnalysisOptions& opt = {});

}  // namespace sgf
