#include <cmath>
#include <random>

#include <doctest.h>

#include "geofence/flow_engine.hpp"
#include "geofence/vehicle_models.hpp"
#include "oracles.hpp"

using namespace geofence;

namespace {

QuadState::Vector random_state(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  QuadState s;
  s.position = Eigen::Vector3d(u(rng), u(rng), u(rng)) * 20.0;
  s.attitude = Eigen::Quaterniond(u(rng), u(rng), u(rng), u(rng)).normalized();
  s.velocity = Eigen::Vector3d(u(rng), u(rng), u(rng)) * 15.0;
  s.body_rates = Eigen::Vector3d(u(rng), u(rng), u(rng)) * 5.0;
  return s.to_vector();
}

}  // namespace

TEST_CASE("thrust polynomial evaluates by hand") {
  QuadParams p;
  p.thrust_poly = {0.0, 0.0, 20.0};
  CHECK(thrust_from_throttle(0.0, p) == 0.0);
  CHECK(thrust_from_throttle(1.0, p) == doctest::Approx(20.0));
  p.thrust_poly = {0.0, 5.0, 20.0};
  CHECK(thrust_from_throttle(0.5, p) == doctest::Approx(7.5));
}

TEST_CASE("hover throttle matches a bisection root of thrust - weight") {
  for (const std::array<double, 3> poly : {std::array{0.0, 29.9, 9.34}, std::array{1.0, 12.0, 30.0},
                                           std::array{0.0, 40.0, 0.0}}) {
    QuadParams p;
    p.thrust_poly = poly;
    const double ref = oracle::bisect(
        [&](double t) { return poly[0] + poly[1] * t + poly[2] * t * t - p.mass * p.gravity; }, 0.0, 1.0);
    CHECK(hover_throttle(p) == doctest::Approx(ref).epsilon(1e-12));
  }
}

TEST_CASE("default vehicle is a racer: hover near 0.3, thrust-to-weight near 4") {
  const QuadParams p;
  CHECK(hover_throttle(p) == doctest::Approx(0.3).epsilon(0.05));
  CHECK(thrust_from_throttle(1.0, p) / (p.mass * p.gravity) == doctest::Approx(4.0).epsilon(0.05));
}

TEST_CASE("hover is an equilibrium") {
  const QuadParams p;
  QuadState s;
  s.position = {1.0, 2.0, 3.0};
  const QuadCommand u{hover_throttle(p), Eigen::Vector3d::Zero()};
  CHECK(quad_deriv(s, u, p).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("rate loop step and free fall") {
  QuadParams p;
  QuadState s;
  const QuadState::Vector d = quad_deriv(s, QuadCommand{0.0, Eigen::Vector3d(1.0, 0.0, 0.0)}, p);
  CHECK(d[quad_index::kRates] == doctest::Approx(50.0));
  CHECK(d[quad_index::kRates + 1] == 0.0);
  CHECK(d[quad_index::kVel] == 0.0);
  CHECK(d[quad_index::kVel + 1] == 0.0);
  CHECK(d[quad_index::kVel + 2] == doctest::Approx(-p.gravity));
}

TEST_CASE("zero throttle gives exactly -g vertical acceleration at any attitude") {
  std::mt19937_64 rng(1);
  const QuadParams p;
  for (int i = 0; i < 200; ++i) {
    QuadState::Vector x = random_state(rng);
    const QuadState::Vector d = quad_deriv(x, QuadCommand{0.0, Eigen::Vector3d(0.3, -2.0, 1.0)}, p);
    CHECK(d[quad_index::kVel + 2] == -p.gravity);
  }
}

TEST_CASE("quad_deriv matches the hand-written right-hand side") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  QuadParams p;
  p.drag = 0.3;
  for (int i = 0; i < 200; ++i) {
    const QuadState::Vector x = random_state(rng);
    const QuadCommand c{u(rng), Eigen::Vector3d(u(rng) - 0.5, u(rng) - 0.5, u(rng) - 0.5) * 8.0};
    const QuadState::Vector d = quad_deriv(x, c, p);
    const auto ref = oracle::quad_rhs(oracle::to_array(x), c.throttle,
                                      {c.body_rates[0], c.body_rates[1], c.body_rates[2]}, p);
    for (int k = 0; k < QuadState::kDim; ++k) CHECK(d[k] == doctest::Approx(ref[static_cast<std::size_t>(k)]).epsilon(1e-12));
  }
}

TEST_CASE("control-affine in the command, rate loop affine with slope C") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  QuadParams p;
  p.thrust_poly = {0.0, 39.24, 0.0};  // linear thrust so the throttle channel is affine too
  for (int i = 0; i < 50; ++i) {
    const QuadState::Vector x = random_state(rng);
    const QuadCommand a{u(rng), Eigen::Vector3d::Random() * 5.0};
    const QuadCommand b{u(rng), Eigen::Vector3d::Random() * 5.0};
    const double s = u(rng);
    const QuadCommand mid{s * a.throttle + (1 - s) * b.throttle, s * a.body_rates + (1 - s) * b.body_rates};
    const QuadState::Vector lhs = quad_deriv(x, mid, p);
    const QuadState::Vector rhs = s * quad_deriv(x, a, p) + (1 - s) * quad_deriv(x, b, p);
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-9);

    QuadCommand bumped = a;
    bumped.body_rates.x() += 1.0;
    const double slope = quad_deriv(x, bumped, p)[quad_index::kRates] - quad_deriv(x, a, p)[quad_index::kRates];
    CHECK(slope == doctest::Approx(p.rate_gain));
  }
  for (int i = 0; i < 50; ++i) {
    const Eigen::Vector2d x = Eigen::Vector2d::Random() * 2.0;
    const Eigen::Vector2d mid = pendulum_deriv(x, 0.5);
    CHECK((mid - 0.5 * (pendulum_deriv(x, 0.0) + pendulum_deriv(x, 1.0))).norm() < 1e-12);
  }
}

TEST_CASE("pendulum derivative") {
  CHECK(pendulum_deriv(Eigen::Vector2d(0.0, 0.0), 0.0).norm() == 0.0);
  CHECK(pendulum_deriv(Eigen::Vector2d(0.0, 1.0), 0.0).isApprox(Eigen::Vector2d(1.0, 0.0)));
  CHECK(pendulum_deriv(Eigen::Vector2d(std::numbers::pi / 2, 0.0), -1.0).norm() < 1e-15);
}

TEST_CASE("quaternion convention: body z maps to the rotated axis") {
  // 90 deg about body x tips the thrust axis toward world -y
  const Eigen::Quaterniond q(Eigen::AngleAxisd(std::numbers::pi / 2, Eigen::Vector3d::UnitX()));
  QuadState s;
  s.attitude = q;
  const QuadState round = QuadState::from_vector(s.to_vector());
  CHECK(round.attitude.coeffs().isApprox(q.coeffs()));
  const QuadState::Vector v = s.to_vector();
  CHECK(v[quad_index::kQuat] == doctest::Approx(q.w()));
  const Eigen::Vector3d z = body_z_axis(q.w(), q.x(), q.y(), q.z());
  CHECK(z.isApprox(q * Eigen::Vector3d::UnitZ()));
  CHECK(z.isApprox(Eigen::Vector3d(0.0, -1.0, 0.0)));
}

TEST_CASE("quaternion norm holds over a 10 s integration") {
  const QuadParams p;
  const QuadrotorPlant plant{p};
  QuadState s;
  s.body_rates = {3.0, -2.0, 5.0};
  QuadState::Vector x = s.to_vector();
  const QuadCommand u{0.5, Eigen::Vector3d(4.0, -7.0, 2.0)};
  double worst = 0.0;
  for (int k = 0; k < 1000; ++k) {
    x = rk4_step(x, [&](const QuadState::Vector& y) { return plant.deriv(y, u); }, 0.01);
    QuadrotorPlant::project(x);
    worst = std::max(worst, std::abs(x.segment<4>(quad_index::kQuat).norm() - 1.0));
    REQUIRE(x.allFinite());
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("command clamp and parameter validation") {
  const QuadCommand c = clamp_command(QuadCommand{1.7, Eigen::Vector3d(12.0, -30.0, 3.0)}, 10.0);
  CHECK(c.throttle == 1.0);
  CHECK(c.body_rates == Eigen::Vector3d(10.0, -10.0, 3.0));
  CHECK(clamp_command(QuadCommand{-0.2, Eigen::Vector3d::Zero()}, 10.0).throttle == 0.0);

  QuadParams p;
  CHECK_NOTHROW(p.validate());
  p.mass = 0.0;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
  p = QuadParams{};
  p.thrust_poly = {0.0, 5.0, 0.0};  // cannot lift itself
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
  p.thrust_poly = {0.0, 40.0, -30.0};  // decreasing near full throttle
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
  p = QuadParams{};
  p.rate_gain = -1.0;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
}

TEST_CASE("throttle inverse saturates outside the reachable thrust") {
  const QuadParams p;
  CHECK(throttle_for_thrust(-1.0, p) == 0.0);
  CHECK(throttle_for_thrust(1e6, p) == 1.0);
  for (double t : {0.1, 0.37, 0.9}) CHECK(throttle_for_thrust(thrust_from_throttle(t, p), p) == doctest::Approx(t));
}
