#include <doctest.h>

#include <numbers>
#include <random>

#include "sgf/plant.hpp"
#include "sgf/problem.hpp"

using namespace sgf;

namespace {

Matrix random_hurwitz(std::mt19937_64& rng, int n) {
  std::normal_distribution<double> gauss;
  Matrix m(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) m(i, j) = gauss(rng);
  // shift the spectrum well into the left half plane
  return m - (m.norm() + 1.0) * Matrix::Identity(n, n);
}

Vector rk4_plant(const PlantModel& plant, Vector x, const Vector& u, const Vector& w,
                 double dt, int steps) {
  for (int s = 0; s < steps; ++s) {
    const Vector k1 = plant.dynamics(x, u, w);
    const Vector k2 = plant.dynamics(x + 0.5 * dt * k1, u, w);
    const Vector k3 = plant.dynamics(x + 0.5 * dt * k2, u, w);
    const Vector k4 = plant.dynamics(x + dt * k3, u, w);
    x += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return x;
}

}  // namespace

TEST_CASE("lti dynamics vanish at steady state") {
  const LtiPlant plant(-Matrix::Identity(2, 2), Matrix::Identity(2, 2),
                       Matrix::Identity(2, 2));
  const Vector u = (Vector(2) << 0.3, -0.7).finished();
  CHECK(plant.dynamics(u, u, Vector::Zero(2)).norm() == doctest::Approx(0.0));
  CHECK((plant.steady_state(u, Vector::Zero(2)) - u).norm() <= 1e-14);

  const Vector w = (Vector(2) << 0.1, 0.2).finished();
  CHECK((plant.steady_state(u, w) - (u + w)).norm() <= 1e-14);
  CHECK((plant.sensitivity(u) - Matrix::Identity(2, 2)).norm() <= 1e-14);
}

TEST_CASE("unicycle inner-loop equilibrium and the hand-computed field") {
  const UnicyclePlant plant(2.0);
  const Vector w = Vector::Zero(2);

  SUBCASE("at the commanded position the field vanishes") {
    const Vector x = (Vector(3) << 1.0, 2.0, 0.7).finished();
    const Vector u = (Vector(2) << 1.0, 2.0).finished();
    CHECK(plant.dynamics(x, u, w).norm() == doctest::Approx(0.0));
  }
  SUBCASE("xi = 1, theta_bar = pi/2 example") {
    const Vector x = (Vector(3) << 0.0, -1.0, 0.0).finished();
    const Vector u = Vector::Zero(2);
    const Vector xdot = plant.dynamics(x, u, w);
    CHECK(std::abs(xdot(0)) <= 1e-12);
    CHECK(std::abs(xdot(1)) <= 1e-12);
    CHECK(xdot(2) == doctest::Approx(2.0 + std::numbers::pi).epsilon(1e-12));
  }
  SUBCASE("steady state and sensitivity") {
    const Vector u = (Vector(2) << 0.4, -0.2).finished();
    CHECK((plant.steady_state(u, w) - u).norm() <= 1e-15);
    const Vector wd = (Vector(2) << 0.05, -0.05).finished();
    CHECK((plant.steady_state(u, wd) - (u + wd)).norm() <= 1e-15);
    CHECK((plant.sensitivity(u) - Matrix::Identity(2, 2)).norm() == 0.0);
  }
}

TEST_CASE("angle wrapping lands in (-pi, pi]") {
  constexpr double pi = std::numbers::pi;
  CHECK(wrap_angle(0.0) == 0.0);
  CHECK(wrap_angle(pi) == doctest::Approx(pi));
  CHECK(wrap_angle(-pi) == doctest::Approx(pi));
  CHECK(wrap_angle(3.0 * pi) == doctest::Approx(pi));
  CHECK(wrap_angle(2.5 * pi) == doctest::Approx(0.5 * pi));
  CHECK(wrap_angle(-2.5 * pi) == doctest::Approx(-0.5 * pi));
}

TEST_CASE("random stable lti passes the residual oracle") {
  std::mt19937_64 rng(17);
  const Matrix a = random_hurwitz(rng, 3);
  Matrix b(3, 2);
  std::normal_distribution<double> gauss;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 2; ++j) b(i, j) = gauss(rng);
  const LtiPlant plant(a, b, Matrix::Identity(3, 3));

  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  for (int k = 0; k < 100; ++k) {
    Vector u(2), w(3);
    u << dist(rng), dist(rng);
    w << dist(rng), dist(rng), dist(rng);
    CHECK(plant.dynamics(plant.steady_state(u, w), u, w).norm() <= 1e-10);
  }
  const Matrix j_fd = fd_jacobian(
      [&](const Vector& u) { return plant.steady_state(u, Vector::Zero(3)); },
      Vector::Zero(2));
  CHECK((plant.sensitivity(Vector::Zero(2)) - j_fd).norm() <= 1e-6);
}

TEST_CASE("plant contract validation") {
  CHECK_NOTHROW(validate_plant(UnicyclePlant(2.0)));
  CHECK_NOTHROW(validate_plant(LtiPlant(-Matrix::Identity(2, 2),
                                        Matrix::Identity(2, 2),
                                        Matrix::Identity(2, 2))));
}

TEST_CASE("non-Hurwitz A is refused") {
  Matrix a(2, 2);
  a << 0.0, 1.0, -1.0, 0.0;  // purely imaginary spectrum
  CHECK_THROWS_AS(LtiPlant(a, Matrix::Identity(2, 2), Matrix::Identity(2, 2)),
                  ContractError);
}

TEST_CASE("stability certificate") {
  SUBCASE("normal matrices give k = 1 and the dominant rate") {
    const LtiPlant p1(-Matrix::Identity(2, 2), Matrix::Identity(2, 2),
                      Matrix::Zero(2, 0));
    const StabilityCertificate c1 = stability_certificate(p1);
    CHECK(c1.a == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(c1.k == doctest::Approx(1.0).epsilon(1e-9));

    Matrix a = Matrix::Zero(2, 2);
    a(0, 0) = -1.0;
    a(1, 1) = -2.0;
    const LtiPlant p2(a, Matrix::Identity(2, 2), Matrix::Zero(2, 0));
    CHECK(stability_certificate(p2).a == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("random Hurwitz plant stays below the certified envelope") {
    std::mt19937_64 rng(23);
    const Matrix a = random_hurwitz(rng, 3);
    const LtiPlant plant(a, Matrix::Identity(3, 3), Matrix::Zero(3, 0));
    CHECK_NOTHROW(stability_certificate(plant));  // internally checks 20 responses
  }
}

TEST_CASE("unicycle inner loop converges from random starts") {
  const UnicyclePlant plant(2.0);
  const Vector u = (Vector(2) << 0.3, -0.4).finished();
  const Vector w = Vector::Zero(2);
  std::mt19937_64 rng(29);
  std::uniform_real_distribution<double> pos(-1.5, 1.5);
  std::uniform_real_distribution<double> ang(-3.1, 3.1);

  const double t_final = 20.0 / plant.gain();
  const double dt = 1e-3;
  for (int run = 0; run < 50; ++run) {
    Vector x = (Vector(3) << pos(rng), pos(rng), ang(rng)).finished();
    double prev = (x.head(2) - u).norm();
    bool monotone_from_some_time = true;
    double last_increase_t = 0.0;
    const int steps = static_cast<int>(t_final / dt);
    for (int s = 0; s < steps; ++s) {
      x = rk4_plant(plant, x, u, w, dt, 1);
      const double e = (x.head(2) - u).norm();
      if (e > prev + 1e-12) last_increase_t = (s + 1) * dt;
      prev = e;
    }
    const double e_final = (x.head(2) - u).norm();
    CHECK(e_final < 1e-4);
    monotone_from_some_time = last_increase_t < t_final;
    CHECK(monotone_from_some_time);
  }
}
