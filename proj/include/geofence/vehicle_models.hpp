#pragma once

#include <array>
#include <cstdint>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace geofence {

/// How the rate-tracking gain C is evaluated. Only the state-independent
/// variant is shipped; the enum keeps the hook selectable from config.
enum class RateGainModel { kConstant };

/// Closed-loop quadrotor + onboard rate controller parameters.
struct QuadParams {
  double mass = 1.0;      // kg
  double gravity = 9.81;  // m/s^2
  double rate_gain = 50.0;  // C, 1/s
  RateGainModel rate_gain_model = RateGainModel::kConstant;
  /// Total thrust in N as a0 + a1*t + a2*t^2 for throttle t in [0,1].
  std::array<double, 3> thrust_poly{0.0, 29.9, 9.34};
  double rate_limit = 10.0;  // rad/s, per axis
  double drag = 0.0;         // linear velocity drag, 1/s

  /// Throws std::invalid_argument when a physical invariant is broken.
  void validate() const;
};

/// Quadrotor state. The attitude quaternion rotates body-frame vectors into
/// the world frame (so R(q) e_z is the thrust axis in world coordinates).
/// Vector layout, scalar-first: [px py pz | qw qx qy qz | vx vy vz | wx wy wz].
struct QuadState {
  static constexpr int kDim = 13;
  using Vector = Eigen::Matrix<double, kDim, 1>;

  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  Eigen::Quaterniond attitude = Eigen::Quaterniond::Identity();
  Eigen::Vector3d velocity = Eigen::Vector3d::Zero();
  Eigen::Vector3d body_rates = Eigen::Vector3d::Zero();

  Vector to_vector() const;
  static QuadState from_vector(const Vector& x);
};

namespace quad_index {
inline constexpr int kPos = 0;
inline constexpr int kQuat = 3;
inline constexpr int kVel = 7;
inline constexpr int kRates = 10;
}  // namespace quad_index

/// Throttle + desired body rates: the filter's input and output alphabet.
struct QuadCommand {
  double throttle = 0.0;
  Eigen::Vector3d body_rates = Eigen::Vector3d::Zero();

  bool operator==(const QuadCommand&) const = default;
};

QuadCommand clamp_command(const QuadCommand& u, double rate_limit);

double thrust_from_throttle(double throttle, const QuadParams& p);

/// Inverse of the thrust polynomial on [0,1]; thrust outside the reachable
/// range saturates at the corresponding throttle endpoint.
double throttle_for_thrust(double thrust, const QuadParams& p);

double hover_throttle(const QuadParams& p);

double rate_gain(const QuadState::Vector& x, const QuadParams& p);

/// Body z-axis expressed in the world frame, R(q) e_z. q need not be unit.
Eigen::Vector3d body_z_axis(double qw, double qx, double qy, double qz);

/// Number of out-of-range throttles clamped by thrust_from_throttle. Only
/// counted in builds without NDEBUG.
std::uint64_t clamped_throttle_count();

QuadState::Vector quad_deriv(const QuadState::Vector& x, const QuadCommand& u,
                             const QuadParams& p);

inline QuadState::Vector quad_deriv(const QuadState& x, const QuadCommand& u,
                                    const QuadParams& p) {
  return quad_deriv(x.to_vector(), u, p);
}

struct PendulumState {
  double theta = 0.0;
  double theta_dot = 0.0;

  Eigen::Vector2d to_vector() const { return {theta, theta_dot}; }
  static PendulumState from_vector(const Eigen::Vector2d& x) { return {x[0], x[1]}; }
};

/// Inverted pendulum, x = (theta, theta_dot): xdot = (theta_dot, sin theta) + (0, 1) u.
Eigen::Vector2d pendulum_deriv(const Eigen::Vector2d& x, double u);

inline Eigen::Vector2d pendulum_deriv(const PendulumState& x, double u) {
  return pendulum_deriv(x.to_vector(), u);
}

// Plant adapters consumed by the flow engine. `project` maps an integrated
// state back onto the state manifold.

struct QuadrotorPlant {
  static constexpr int kDim = QuadState::kDim;
  using State = QuadState::Vector;
  using Input = QuadCommand;

  QuadParams params;

  State deriv(const State& x, const Input& u) const { return quad_deriv(x, u, params); }
  static void project(State& x);
};

struct PendulumPlant {
  static constexpr int kDim = 2;
  using State = Eigen::Vector2d;
  using Input = double;

  State deriv(const State& x, Input u) const { return pendulum_deriv(x, u); }
  static void project(State&) {}
};

}  // namespace geofence
