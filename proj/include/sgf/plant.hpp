#pragma once

#include <cstdint>
#include <memory>

#include "sgf/linalg.hpp"

namespace sgf {

/// Continuous-time plant  xdot = f(x, u, w)  with a unique steady state per
/// (u, w) and an optimization-facing output y = measure(x, w). The output is
/// what the feedback controller sees; steady_state()/sensitivity() describe
/// its equilibrium map h(u, w) = h_u(u) + h_w(w) and Jacobian J_h(u).
class PlantModel {
 public:
  virtual ~PlantModel() = default;

  Eigen::Index state_dim() const { return state_dim_; }
  Eigen::Index input_dim() const { return input_dim_; }
  Eigen::Index dist_dim() const { return dist_dim_; }
  Eigen::Index output_dim() const { return output_dim_; }

  virtual Vector dynamics(const Vector& x, const Vector& u, const Vector& w) const = 0;
  virtual Vector measure(const Vector& x, const Vector& w) const = 0;
  /// Steady value of measure() under constant (u, w).
  virtual Vector steady_state(const Vector& u, const Vector& w) const = 0;
  /// A full state vector at which dynamics() vanishes for (u, w).
  virtual Vector equilibrium_state(const Vector& u, const Vector& w) const = 0;
  /// Jacobian of u -> steady_state(u, w) (independent of w by the
  /// h_u + h_w decomposition).
  virtual Matrix sensitivity(const Vector& u) const = 0;

  // Sampling boxes for the validation contract.
  Vector u_lo, u_hi, w_lo, w_hi;

 protected:
  Eigen::Index state_dim_ = 0, input_dim_ = 0, dist_dim_ = 0, output_dim_ = 0;
};

struct PlantCheckOptions {
  int n_points = 100;
  double steady_state_tol = 1e-8;
  double decomposition_tol = 1e-8;
  double jacobian_tol = 1e-5;  // relative
  std::uint64_t seed = 9111;
};

/// Re-checks the PlantModel contract: f vanishes at the equilibrium state,
/// h(u, w1) - h(u, w2) does not depend on u, and sensitivity() matches
/// finite differences of steady_state(). Throws ContractError on failure.
void validate_plant(const PlantModel& plant, const PlantCheckOptions& opt = {});

/// xdot = A x + B u + Ew w, A Hurwitz. h(u, w) = -A^{-1}(B u + Ew w).
class LtiPlant : public PlantModel {
 public:
  LtiPlant(Matrix A, Matrix B, Matrix Ew);

  Vector dynamics(const Vector& x, const Vector& u, const Vector& w) const override;
  Vector measure(const Vector& x, const Vector& w) const override;
  Vector steady_state(const Vector& u, const Vector& w) const override;
  Vector equilibrium_state(const Vector& u, const Vector& w) const override;
  Matrix sensitivity(const Vector&) const override;

  const Matrix& A() const { return a_; }
  const Matrix& B() const { return b_; }
  const Matrix& Ew() const { return ew_; }

 private:
  Matrix a_, b_, ew_;
  Eigen::PartialPivLU<Matrix> a_lu_;
  Matrix j_h_;  // -A^{-1} B
};

struct StabilityCertificate {
  double k = 0.0;  ///< overshoot constant
  double a = 0.0;  ///< decay rate, |x(t) - h| <= k |x0 - h| exp(-a (t - t0))
};

/// Exponential-stability constants of an LTI plant: a from the spectral
/// abscissa, k from the eigenvector condition number, certified against 20
/// simulated step responses. Throws ContractError if a simulated response
/// escapes the envelope.
StabilityCertificate stability_certificate(const LtiPlant& plant);

/// Unicycle with a low-level position tracking loop.
/// State x = (a, b, heading); input u is the commanded planar position; the
/// disturbance w offsets the measured position only:
/// measure(x, w) = (a, b) + w, steady_state(u, w) = u + w, J_h = I.
class UnicyclePlant : public PlantModel {
 public:
  explicit UnicyclePlant(double gain);

  Vector dynamics(const Vector& x, const Vector& u, const Vector& w) const override;
  Vector measure(const Vector& x, const Vector& w) const override;
  Vector steady_state(const Vector& u, const Vector& w) const override;
  Vector equilibrium_state(const Vector& u, const Vector& w) const override;
  Matrix sensitivity(const Vector&) const override;

  double gain() const { return gain_; }

 private:
  double gain_;
};

/// Wraps an angle into (-pi, pi].
double wrap_angle(double angle);

}  // namespace sgf
