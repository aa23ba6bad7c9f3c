#include "geofence/safety_filter.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

#include <Eigen/Geometry>

namespace geofence {

void GeofenceBox::validate() const {
  if (!center.allFinite() || !half_extents.allFinite() || !inflation.allFinite()) {
    throw std::invalid_argument("geofence: non-finite geometry");
  }
  if ((inflation.array() <= 0.0).any()) throw std::invalid_argument("geofence: inflation must be > 0");
  if ((half_extents.array() <= inflation.array()).any()) {
    throw std::invalid_argument("geofence: half_extents must exceed the inflation margin");
  }
}

GeofenceBox GeofenceBox::shrunk() const {
  GeofenceBox inner;
  inner.center = center;
  inner.half_extents = half_extents - inflation;
  inner.inflation.setZero();
  return inner;
}

void FilterParams::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("filter: " + what); };
  if (!(beta > 0.0)) fail("beta must be > 0");
  if (!(delta > 0.0)) fail("delta must be > 0");
  if (!(epsilon > 0.0)) fail("epsilon must be > 0");
  if (!(v_floor > 0.0)) fail("v_floor must be > 0");
  if (!(k_v > 0.0)) fail("k_v must be > 0");
  if (!(k_q > 0.0)) fail("k_q must be > 0");
  if (!(v_backup_max > 0.0)) fail("v_backup_max must be > 0");
  if (!(backup_set_weight > 0.0)) fail("backup_set_weight must be > 0");
  if (!(face_blend >= 0.0)) fail("face_blend must be >= 0");
  if (!(lookahead_dt >= 0.0)) fail("lookahead_dt must be >= 0");
  if (lookahead_substeps < 1) fail("lookahead_substeps must be >= 1");
}

double geofence_h(const Eigen::Vector3d& p, const GeofenceBox& box) {
  const Eigen::Vector3d d = p - box.center;
  return (box.half_extents.array().square() - d.array().square()).minCoeff();
}

int active_axis(const Eigen::Vector3d& p, const GeofenceBox& box) {
  const Eigen::Vector3d d = p - box.center;
  Eigen::Index axis = 0;
  (box.half_extents.array().square() - d.array().square()).minCoeff(&axis);
  return static_cast<int>(axis);
}

double face_distance(const Eigen::Vector3d& p, const GeofenceBox& box) {
  const int i = active_axis(p, box);
  return box.half_extents[i] - std::abs(p[i] - box.center[i]);
}

double backup_set_h(const Eigen::Vector3d& v, double epsilon) { return epsilon - v.norm(); }

Eigen::Vector3d backup_desired_velocity(const Eigen::Vector3d& p, const GeofenceBox& box, double delta,
                                        double v_max) {
  Eigen::Vector3d v_des = Eigen::Vector3d::Zero();
  for (int i = 0; i < 3; ++i) {
    const double offset = p[i] - box.center[i];
    const double clearance = box.half_extents[i] * box.half_extents[i] - offset * offset;
    if (clearance >= delta) continue;
    const double side = offset > 0.0 ? 1.0 : (offset < 0.0 ? -1.0 : 0.0);
    v_des[i] = -side * std::min(delta - clearance, v_max);
  }
  return v_des;
}

constexpr double kMinVerticalAccelFraction = 0.25;

QuadCommand velocity_tracking_command(const QuadState::Vector& x, const Eigen::Vector3d& v_des, double k_v,
                                      double k_q, const QuadParams& qp, double max_tilt) {
  using namespace quad_index;
  Eigen::Vector3d a_des = k_v * (v_des - x.segment<3>(kVel));
  a_des.z() += qp.gravity;

  // Stay inside the thrust envelope, spending it on the vertical axis first.
  // The vertical floor keeps the thrust axis in the upper hemisphere.
  const double a_max = thrust_from_throttle(1.0, qp) / qp.mass;
  a_des.z() = std::clamp(a_des.z(), kMinVerticalAccelFraction * qp.gravity, a_max);
  double lateral_room = std::sqrt(a_max * a_max - a_des.z() * a_des.z());
  if (max_tilt < kNoTiltLimit) lateral_room = std::min(lateral_room, a_des.z() * std::tan(max_tilt));
  const double lateral = a_des.head<2>().norm();
  if (lateral > lateral_room) a_des.head<2>() *= lateral_room / lateral;

  const double a_norm = a_des.norm();
  QuadCommand u;
  if (a_norm < 1e-6) {
    u.throttle = hover_throttle(qp);
    return u;
  }
  u.throttle = std::clamp(throttle_for_thrust(qp.mass * a_norm, qp), 0.0, 1.0);

  const Eigen::Quaterniond q =
      Eigen::Quaterniond(x[kQuat], x[kQuat + 1], x[kQuat + 2], x[kQuat + 3]).normalized();
  const Eigen::Vector3d z_body = q * Eigen::Vector3d::UnitZ();
  const Eigen::Vector3d z_des = a_des / a_norm;

  // Axis-angle rotation taking the current thrust axis onto the desired one.
  const Eigen::Vector3d cross = z_body.cross(z_des);
  const double s = cross.norm();
  const double c = z_body.dot(z_des);
  Eigen::Vector3d rot_world = Eigen::Vector3d::Zero();
  if (s > 1e-12) {
    rot_world = cross * (std::atan2(s, c) / s);
  } else if (c < 0.0) {
    rot_world = (q * Eigen::Vector3d::UnitX()) * std::numbers::pi;
  }
  Eigen::Vector3d rates = k_q * (q.conjugate() * rot_world);
  rates.z() = 0.0;
  u.body_rates = rates.cwiseMax(-qp.rate_limit).cwiseMin(qp.rate_limit);
  return u;
}

QuadCommand backup_controller(const QuadState::Vector& x, const GeofenceBox& box, const FilterParams& fp,
                              const QuadParams& qp) {
  const Eigen::Vector3d v_des =
      backup_desired_velocity(x.segment<3>(quad_index::kPos), box, fp.delta, fp.v_backup_max);
  return velocity_tracking_command(x, v_des, fp.k_v, fp.k_q, qp);
}

double regulation_lambda(double h_I, double v_perp_speed, const FilterParams& fp, bool scaled) {
  const double h_plus = h_I > 0.0 ? h_I : 0.0;  // NaN and -inf map to 0
  const double scale = scaled ? std::max(v_perp_speed, fp.v_floor) : 1.0;
  if (h_plus == 0.0) return 0.0;
  return -std::expm1(-fp.beta * h_plus / scale);
}

double v_perp(const QuadState::Vector& x, const GeofenceBox& box, double blend) {
  const Eigen::Vector3d d = x.segment<3>(quad_index::kPos) - box.center;
  const Eigen::Vector3d v = x.segment<3>(quad_index::kVel);
  // Per-face term (r - s d)(r + |d|): the nearer face of an axis gets
  // r^2 - d^2, the farther one (r + |d|)^2, so the min over faces is h.
  std::array<double, 6> g{};
  double m = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 3; ++i) {
    const double r = box.half_extents[i];
    for (int k = 0; k < 2; ++k) {
      const double side = k == 0 ? 1.0 : -1.0;
      g[2 * i + k] = (r - side * d[i]) * (r + std::abs(d[i]));
      m = std::min(m, g[2 * i + k]);
    }
  }
  const double tol = 1e-9 * std::max(1.0, std::abs(m));
  double best = 0.0;
  for (int f = 0; f < 6; ++f) {
    const double gap = g[f] - m;
    double w;
    if (gap <= tol) {
      w = 1.0;
    } else if (blend > 0.0) {
      w = std::max(0.0, 1.0 - gap / blend);
    } else {
      w = 0.0;
    }
    if (w == 0.0) continue;
    const double side = f % 2 == 0 ? 1.0 : -1.0;
    best = std::max(best, w * side * v[f / 2]);
  }
  return best;
}

QuadCommand mix_commands(const QuadCommand& pilot, const QuadCommand& backup, double lambda) {
  QuadCommand u;
  u.throttle = backup.throttle + lambda * (pilot.throttle - backup.throttle);
  u.body_rates = backup.body_rates + lambda * (pilot.body_rates - backup.body_rates);
  return u;
}

namespace {

constexpr int kLookaheadCuts = 3;

struct QuadBarrierParts {
  GeofenceBox inner;
  const FilterParams& fp;
  const QuadParams& qp;

  QuadCommand backup(const QuadState::Vector& s) const { return backup_controller(s, inner, fp, qp); }
  double safe(const QuadState::Vector& s) const { return geofence_h(s.segment<3>(quad_index::kPos), inner); }
  double backup_set(const QuadState::Vector& s) const {
    return fp.backup_set_weight * backup_set_h(s.segment<3>(quad_index::kVel), fp.epsilon);
  }

  double implicit_barrier(const QuadState::Vector& x, const FlowConfig& cfg,
                          TrajectoryBuffer<QuadState::kDim>& scratch) const {
    const QuadrotorPlant plant{qp};
    return evaluate_implicit_barrier(
        x, [this](const QuadState::Vector& s) { return backup(s); }, plant, cfg,
        [this](const QuadState::Vector& s) { return safe(s); },
        [this](const QuadState::Vector& s) { return backup_set(s); }, scratch);
  }
};

}  // namespace

double quad_implicit_barrier(const QuadState::Vector& x, const GeofenceBox& box, const FilterParams& fp,
                             const QuadParams& qp, const FlowConfig& cfg,
                             TrajectoryBuffer<QuadState::kDim>& scratch) {
  const QuadBarrierParts parts{box.shrunk(), fp, qp};
  return parts.implicit_barrier(x, cfg, scratch);
}

FilterOutput filter_command(const QuadState::Vector& x, const QuadCommand& u_des, const GeofenceBox& box,
                            const FilterParams& fp, const QuadParams& qp, const FlowConfig& cfg,
                            TrajectoryBuffer<QuadState::kDim>& scratch) {
  const QuadBarrierParts parts{box.shrunk(), fp, qp};
  FilterOutput out;
  out.h_I = parts.implicit_barrier(x, cfg, scratch);
  out.v_perp = v_perp(x, parts.inner, fp.face_blend);
  out.lambda = regulation_lambda(out.h_I, out.v_perp, fp, fp.scaled_lambda);
  out.lambda_nominal = out.lambda;
  out.backup_cmd = parts.backup(x);
  if (out.lambda == 0.0) {
    out.u_cmd = out.backup_cmd;
    return out;
  }
  out.u_cmd = clamp_command(mix_commands(u_des, out.backup_cmd, out.lambda), qp.rate_limit);
  if (fp.lookahead_dt <= 0.0) return out;

  // h_I can fall off a cliff within one tick (fast attitude changes near a
  // face); never hold a command whose next state leaves S_I.
  const QuadrotorPlant plant{qp};
  const double h = fp.lookahead_dt / fp.lookahead_substeps;
  for (int attempt = 0; attempt < kLookaheadCuts; ++attempt) {
    QuadState::Vector next = x;
    for (int i = 0; i < fp.lookahead_substeps; ++i) {
      next = rk4_step(next, [&](const QuadState::Vector& s) { return plant.deriv(s, out.u_cmd); }, h);
      QuadrotorPlant::project(next);
    }
    if (parts.implicit_barrier(next, cfg, scratch) >= 0.0) return out;
    out.lambda *= 0.25;
    out.u_cmd = clamp_command(mix_commands(u_des, out.backup_cmd, out.lambda), qp.rate_limit);
  }
  out.lambda = 0.0;
  out.u_cmd = out.backup_cmd;
  return out;
}

GeofenceShield::GeofenceShield(const GeofenceBox& box, const FilterParams& fp, const QuadParams& qp,
                               const FlowConfig& cfg)
    : box_(box), fp_(fp), qp_(qp), cfg_(cfg), scratch_((cfg.validate(), cfg.n_steps())) {
  box_.validate();
  fp_.validate();
  qp_.validate();
}

// ---------------------------------------------------------------------------

void PendulumFilterParams::validate() const {
  if (!gain.allFinite()) throw std::invalid_argument("pendulum: non-finite gain");
  if (!(beta > 0.0)) throw std::invalid_argument("pendulum: beta must be > 0");
  if (!(delta > 0.0)) throw std::invalid_argument("pendulum: delta must be > 0");
  if (!(backup_set_weight > 0.0)) throw std::invalid_argument("pendulum: backup_set_weight must be > 0");
  flow.validate();
}

double pendulum_h(const Eigen::Vector2d& x) { return std::min(1.0 - x[0] * x[0], 2.0 - x[1] * x[1]); }

double pendulum_backup_set_h(const Eigen::Vector2d& x, double delta) {
  constexpr double kAngle = std::numbers::pi / 12.0;
  return std::min(kAngle * kAngle - x[0] * x[0], delta * delta - x[1] * x[1]);
}

double pendulum_implicit_barrier(const Eigen::Vector2d& x, const PendulumFilterParams& params,
                                 TrajectoryBuffer<2>& scratch) {
  const PendulumPlant plant;
  return evaluate_implicit_barrier(
      x, [&](const Eigen::Vector2d& s) { return pendulum_backup(s, params.gain); }, plant, params.flow,
      [](const Eigen::Vector2d& s) { return pendulum_h(s); },
      [&](const Eigen::Vector2d& s) { return params.backup_set_weight * pendulum_backup_set_h(s, params.delta); },
      scratch);
}

PendulumFilterOutput pendulum_filter(const Eigen::Vector2d& x, double u_des, const PendulumFilterParams& params,
                                     TrajectoryBuffer<2>& scratch) {
  PendulumFilterOutput out;
  out.h_I = pendulum_implicit_barrier(x, params, scratch);
  const double h_plus = out.h_I > 0.0 ? out.h_I : 0.0;
  out.lambda = h_plus == 0.0 ? 0.0 : -std::expm1(-params.beta * h_plus);
  out.backup = pendulum_backup(x, params.gain);
  out.u = out.lambda == 0.0 ? out.backup : out.backup + out.lambda * (u_des - out.backup);
  return out;
}

}  // namespace geofence
