#include "geofence/vehicle_models.hpp"

#include <algorithm>
#include <atomic>
#include <cassert>
#include <cmath>
#include <stdexcept>
#include <string>

namespace geofence {

namespace {

std::atomic<std::uint64_t> g_clamped_throttle{0};

double poly(const std::array<double, 3>& a, double t) { return a[0] + t * (a[1] + t * a[2]); }

}  // namespace

void QuadParams::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("vehicle: " + what); };
  if (!(mass > 0.0)) fail("mass must be > 0");
  if (!(gravity > 0.0)) fail("gravity must be > 0");
  if (!(rate_gain > 0.0)) fail("rate_gain must be > 0");
  if (!(rate_limit > 0.0)) fail("rate_limit must be > 0");
  if (!(drag >= 0.0)) fail("drag must be >= 0");
  // Nonnegative and nondecreasing on [0,1]: the derivative a1 + 2 a2 t is
  // affine, so checking both endpoints is enough.
  if (poly(thrust_poly, 0.0) < 0.0) fail("thrust_poly(0) must be >= 0");
  if (thrust_poly[1] < 0.0 || thrust_poly[1] + 2.0 * thrust_poly[2] < 0.0) {
    fail("thrust_poly must be nondecreasing on [0,1]");
  }
  if (!(poly(thrust_poly, 1.0) > mass * gravity)) fail("thrust_poly(1) must exceed weight");
}

QuadState::Vector QuadState::to_vector() const {
  Vector x;
  x.segment<3>(quad_index::kPos) = position;
  x[quad_index::kQuat + 0] = attitude.w();
  x[quad_index::kQuat + 1] = attitude.x();
  x[quad_index::kQuat + 2] = attitude.y();
  x[quad_index::kQuat + 3] = attitude.z();
  x.segment<3>(quad_index::kVel) = velocity;
  x.segment<3>(quad_index::kRates) = body_rates;
  return x;
}

QuadState QuadState::from_vector(const Vector& x) {
  QuadState s;
  s.position = x.segment<3>(quad_index::kPos);
  s.attitude = Eigen::Quaterniond(x[quad_index::kQuat], x[quad_index::kQuat + 1],
                                  x[quad_index::kQuat + 2], x[quad_index::kQuat + 3]);
  s.velocity = x.segment<3>(quad_index::kVel);
  s.body_rates = x.segment<3>(quad_index::kRates);
  return s;
}

QuadCommand clamp_command(const QuadCommand& u, double rate_limit) {
  QuadCommand out;
  out.throttle = std::clamp(u.throttle, 0.0, 1.0);
  out.body_rates = u.body_rates.cwiseMax(-rate_limit).cwiseMin(rate_limit);
  return out;
}

double thrust_from_throttle(double throttle, const QuadParams& p) {
#ifndef NDEBUG
  if (throttle < 0.0 || throttle > 1.0) g_clamped_throttle.fetch_add(1, std::memory_order_relaxed);
#endif
  return poly(p.thrust_poly, std::clamp(throttle, 0.0, 1.0));
}

std::uint64_t clamped_throttle_count() { return g_clamped_throttle.load(); }

double throttle_for_thrust(double thrust, const QuadParams& p) {
  const auto& [a0, a1, a2] = p.thrust_poly;
  if (thrust <= a0) return 0.0;
  if (thrust >= a0 + a1 + a2) return 1.0;
  const double c = a0 - thrust;  // < 0 here
  double t;
  if (std::abs(a2) < 1e-12) {
    t = -c / a1;
  } else {
    // Root of a2 t^2 + a1 t + c on [0,1]; the form below avoids cancellation.
    const double disc = std::max(a1 * a1 - 4.0 * a2 * c, 0.0);
    t = (2.0 * -c) / (a1 + std::sqrt(disc));
  }
  return std::clamp(t, 0.0, 1.0);
}

double hover_throttle(const QuadParams& p) { return throttle_for_thrust(p.mass * p.gravity, p); }

double rate_gain(const QuadState::Vector&, const QuadParams& p) {
  switch (p.rate_gain_model) {
    case RateGainModel::kConstant:
      break;
  }
  return p.rate_gain;
}

Eigen::Vector3d body_z_axis(double qw, double qx, double qy, double qz) {
  return {2.0 * (qx * qz + qw * qy), 2.0 * (qy * qz - qw * qx), 1.0 - 2.0 * (qx * qx + qy * qy)};
}

QuadState::Vector quad_deriv(const QuadState::Vector& x, const QuadCommand& u,
                             const QuadParams& p) {
  assert(x.allFinite());
  using namespace quad_index;
  const double qw = x[kQuat], qx = x[kQuat + 1], qy = x[kQuat + 2], qz = x[kQuat + 3];
  const double wx = x[kRates], wy = x[kRates + 1], wz = x[kRates + 2];

  QuadState::Vector dx;
  dx.segment<3>(kPos) = x.segment<3>(kVel);

  // q_dot = 1/2 q (x) (0, w_b)
  dx[kQuat + 0] = -0.5 * (qx * wx + qy * wy + qz * wz);
  dx[kQuat + 1] = 0.5 * (qw * wx + qy * wz - qz * wy);
  dx[kQuat + 2] = 0.5 * (qw * wy + qz * wx - qx * wz);
  dx[kQuat + 3] = 0.5 * (qw * wz + qx * wy - qy * wx);

  const double accel = thrust_from_throttle(u.throttle, p) / p.mass;
  dx.segment<3>(kVel) = body_z_axis(qw, qx, qy, qz) * accel - p.drag * x.segment<3>(kVel);
  dx[kVel + 2] -= p.gravity;

  dx.segment<3>(kRates) = rate_gain(x, p) * (u.body_rates - x.segment<3>(kRates));
  return dx;
}

void QuadrotorPlant::project(State& x) {
  auto q = x.segment<4>(quad_index::kQuat);
  const double n = q.norm();
  if (n > 0.0) q /= n;
}

Eigen::Vector2d pendulum_deriv(const Eigen::Vector2d& x, double u) {
  return {x[1], std::sin(x[0]) + u};
}

}  // namespace geofence
