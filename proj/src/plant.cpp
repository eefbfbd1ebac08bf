#include "sgf/plant.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <numbers>
#include <random>

#include "sgf/problem.hpp"

namespace sgf {

namespace {

Vector sample_box(std::mt19937_64& rng, const Vector& lo, const Vector& hi) {
  Vector v(lo.size());
  for (Eigen::Index i = 0; i < lo.size(); ++i) {
    std::uniform_real_distribution<double> dist(lo(i), hi(i));
    v(i) = dist(rng);
  }
  return v;
}

}  // namespace

void validate_plant(const PlantModel& plant, const PlantCheckOptions& opt) {
  std::mt19937_64 rng(opt.seed);
  for (int k = 0; k < opt.n_points; ++k) {
    const Vector u = sample_box(rng, plant.u_lo, plant.u_hi);
    const Vector u2 = sample_box(rng, plant.u_lo, plant.u_hi);
    const Vector w1 = sample_box(rng, plant.w_lo, plant.w_hi);
    const Vector w2 = sample_box(rng, plant.w_lo, plant.w_hi);

    const double res = plant.dynamics(plant.equilibrium_state(u, w1), u, w1).norm();
    if (!(res <= opt.steady_state_tol))
      throw ContractError("plant: steady-state residual " + std::to_string(res));

    const Vector d1 = plant.steady_state(u, w1) - plant.steady_state(u, w2);
    const Vector d2 = plant.steady_state(u2, w1) - plant.steady_state(u2, w2);
    if (!((d1 - d2).norm() <= opt.decomposition_tol * (1.0 + d1.norm())))
      throw ContractError("plant: h(u,w) does not decompose as h_u(u) + h_w(w)");

    const Matrix j = plant.sensitivity(u);
    const Matrix j_fd = fd_jacobian(
        [&](const Vector& uu) { return plant.steady_state(uu, w1); }, u);
    if (!((j - j_fd).norm() <= opt.jacobian_tol * (1.0 + j_fd.norm())))
      throw ContractError("plant: sensitivity disagrees with finite differences");
  }
}

// LtiPlant ---------------------------------------------------------------

LtiPlant::LtiPlant(Matrix A, Matrix B, Matrix Ew)
    : a_(std::move(A)), b_(std::move(B)), ew_(std::move(Ew)) {
  if (a_.rows() != a_.cols()) throw DimensionError("LtiPlant: A must be square");
  state_dim_ = a_.rows();
  output_dim_ = state_dim_;
  if (b_.rows() != state_dim_) throw DimensionError("LtiPlant: B row count");
  input_dim_ = b_.cols();
  if (ew_.rows() != state_dim_) throw DimensionError("LtiPlant: Ew row count");
  dist_dim_ = ew_.cols();

  Eigen::EigenSolver<Matrix> es(a_);
  if (es.info() != Eigen::Success) throw NumericalError("LtiPlant: eigensolver failed");
  if (es.eigenvalues().real().maxCoeff() > -1e-6)
    throw ContractError("LtiPlant: A is not Hurwitz (spectral abscissa > -1e-6)");

  a_lu_ = Eigen::PartialPivLU<Matrix>(a_);
  j_h_ = -a_lu_.solve(b_);

  u_lo = Vector::Constant(input_dim_, -1.0);
  u_hi = Vector::Constant(input_dim_, 1.0);
  w_lo = Vector::Constant(dist_dim_, -1.0);
  w_hi = Vector::Constant(dist_dim_, 1.0);
}

Vector LtiPlant::dynamics(const Vector& x, const Vector& u, const Vector& w) const {
  require_dim(x, state_dim_, "x");
  require_dim(u, input_dim_, "u");
  require_dim(w, dist_dim_, "w");
  return a_ * x + b_ * u + ew_ * w;
}

Vector LtiPlant::measure(const Vector& x, const Vector&) const { return x; }

Vector LtiPlant::steady_state(const Vector& u, const Vector& w) const {
  require_dim(u, input_dim_, "u");
  require_dim(w, dist_dim_, "w");
  return -a_lu_.solve(b_ * u + ew_ * w);
}

Vector LtiPlant::equilibrium_state(const Vector& u, const Vector& w) const {
  return steady_state(u, w);
}

Matrix LtiPlant::sensitivity(const Vector&) const { return j_h_; }

StabilityCertificate stability_certificate(const LtiPlant& plant) {
  Eigen::EigenSolver<Matrix> es(plant.A());
  const double abscissa = es.eigenvalues().real().maxCoeff();
  if (abscissa > -1e-6) throw ContractError("stability_certificate: A not Hurwitz");

  StabilityCertificate cert;
  cert.a = -abscissa;
  const Eigen::MatrixXcd v = es.eigenvectors();
  Eigen::JacobiSVD<Eigen::MatrixXcd> svd(v);
  const double smin = svd.singularValues().minCoeff();
  if (smin <= 0) throw NumericalError("stability_certificate: defective eigenbasis");
  cert.k = std::max(1.0, svd.singularValues().maxCoeff() / smin);

  // Certify against simulated step responses.
  std::mt19937_64 rng(0x51e9);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  const Eigen::Index n = plant.state_dim();
  const double a_norm = plant.A().norm();
  const double dt = std::min(0.5 / cert.a, 0.05 / std::max(a_norm, 1e-12));
  const int steps =
      static_cast<int>(std::min(std::ceil(5.0 / (cert.a * dt)), 100000.0));
  for (int trial = 0; trial < 20; ++trial) {
    const Vector u = sample_box(rng, plant.u_lo, plant.u_hi);
    const Vector w = sample_box(rng, plant.w_lo, plant.w_hi);
    const Vector h = plant.steady_state(u, w);
    Vector x(n);
    for (Eigen::Index i = 0; i < n; ++i) x(i) = h(i) + unit(rng);
    const double e0 = (x - h).norm();
    auto f = [&](const Vector& xx) { return plant.dynamics(xx, u, w); };
    for (int s = 0; s < steps; ++s) {
      const Vector k1 = f(x);
      const Vector k2 = f(x + 0.5 * dt * k1);
      const Vector k3 = f(x + 0.5 * dt * k2);
      const Vector k4 = f(x + dt * k3);
      x += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      const double t = (s + 1) * dt;
      const double bound = 1.01 * cert.k * e0 * std::exp(-cert.a * t) + 1e-12;
      if ((x - h).norm() > bound)
        throw ContractError("stability_certificate: simulated response escaped "
                            "the k*exp(-a t) envelope");
    }
  }
  return cert;
}

// UnicyclePlant ----------------------------------------------------------

double wrap_angle(double angle) {
  double a = std::remainder(angle, 2.0 * std::numbers::pi);
  if (a <= -std::numbers::pi) a += 2.0 * std::numbers::pi;
  return a;
}

UnicyclePlant::UnicyclePlant(double gain) : gain_(gain) {
  if (!(gain > 0)) throw ContractError("UnicyclePlant: gain must be positive");
  state_dim_ = 3;
  input_dim_ = 2;
  dist_dim_ = 2;
  output_dim_ = 2;
  u_lo = Vector::Constant(2, -10.0);
  u_hi = Vector::Constant(2, 10.0);
  w_lo = Vector::Constant(2, -0.2);
  w_hi = Vector::Constant(2, 0.2);
}

Vector UnicyclePlant::dynamics(const Vector& x, const Vector& u, const Vector& w) const {
  require_dim(x, 3, "x");
  require_dim(u, 2, "u");
  require_dim(w, 2, "w");
  const double dx = u(0) - x(0);
  const double dy = u(1) - x(1);
  const double xi = std::hypot(dx, dy);
  Vector out = Vector::Zero(3);
  // Continuous extension at the atan2 singularity. The threshold sits just
  // above roundoff: a larger deadband would park the interconnection a
  // deadband-width away from the true equilibrium.
  if (xi < 1e-12) return out;
  const double theta_bar = wrap_angle(std::atan2(dy, dx) - x(2));
  const double v1 = gain_ * xi * std::cos(theta_bar);
  const double v2 =
      gain_ * (std::cos(theta_bar) + 1.0) * std::sin(theta_bar) + gain_ * theta_bar;
  out(0) = v1 * std::cos(x(2));
  out(1) = v1 * std::sin(x(2));
  out(2) = v2;
  return out;
}

Vector UnicyclePlant::measure(const Vector& x, const Vector& w) const {
  require_dim(x, 3, "x");
  require_dim(w, 2, "w");
  return x.head(2) + w;
}

Vector UnicyclePlant::steady_state(const Vector& u, const Vector& w) const {
  require_dim(u, 2, "u");
  require_dim(w, 2, "w");
  return u + w;
}

Vector UnicyclePlant::equilibrium_state(const Vector& u, const Vector&) const {
  require_dim(u, 2, "u");
  return (Vector(3) << u(0), u(1), 0.0).finished();
}

Matrix UnicyclePlant::sensitivity(const Vector&) const {
  return Matrix::Identity(2, 2);
}

}  // namespace sgf
