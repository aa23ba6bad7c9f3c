#pragma once

#include <numbers>

#include <Eigen/Core>

#include "geofence/flow_engine.hpp"
#include "geofence/vehicle_models.hpp"

namespace geofence {

/// Axis-aligned geofence. The barrier evaluated inside the implicit CBF uses
/// the box shrunk by `inflation` on every face, which covers excursions
/// between rollout samples.
struct GeofenceBox {
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  Eigen::Vector3d half_extents = Eigen::Vector3d::Constant(10.0);
  Eigen::Vector3d inflation = Eigen::Vector3d::Constant(0.2);

  void validate() const;
  /// Box with half extents reduced by the inflation margin (and zero margin).
  GeofenceBox shrunk() const;
};

struct FilterParams {
  double beta = 0.5;      // lambda decay gain
  double delta = 1.0;     // push-back depth, in h units (m^2)
  double epsilon = 0.1;   // backup-set speed bound, m/s
  double v_floor = 1.0;   // smallest divisor speed in the scaled lambda, m/s
  double k_v = 2.0;       // velocity-tracking gain, 1/s
  double k_q = 5.0;       // attitude-to-rate gain, 1/s
  double v_backup_max = 2.0;  // per-axis push-back speed saturation, m/s
  /// Positive weight on the backup-set term inside h_I. It leaves the zero
  /// level set (and so S_I) unchanged and puts h_B on the m^2 scale of h.
  double backup_set_weight = 1.0;
  /// Band (m^2) over which a face's term may exceed the minimum and still
  /// feed v_perp, weighted down linearly. 0 uses only the binding face.
  double face_blend = 100.0;
  bool scaled_lambda = true;
  /// Hold time of the applied command (one control period). When > 0 the
  /// blended command is integrated forward over it and lambda is cut back
  /// (x1/4, x1/16, then 0) until the predicted state keeps h_I >= 0.
  double lookahead_dt = 0.0;
  int lookahead_substeps = 1;

  void validate() const;
};

struct FilterOutput {
  QuadCommand u_cmd;
  QuadCommand backup_cmd;
  double lambda = 0.0;          // applied
  double lambda_nominal = 0.0;  // regulation function, before the lookahead cut
  double h_I = 0.0;
  double v_perp = 0.0;
};

/// min_i r_i^2 - (p_i - c_i)^2, positive inside the box.
double geofence_h(const Eigen::Vector3d& p, const GeofenceBox& box);

/// Axis whose term attains the minimum in geofence_h.
int active_axis(const Eigen::Vector3d& p, const GeofenceBox& box);

/// Signed distance to the nearest face of the active axis, meters.
double face_distance(const Eigen::Vector3d& p, const GeofenceBox& box);

/// epsilon - |v|
double backup_set_h(const Eigen::Vector3d& v, double epsilon);

/// Per-axis push-back velocity: zero while the axis clearance
/// r_i^2 - (p_i - c_i)^2 is at least delta, otherwise pointing inward with
/// magnitude delta - clearance, saturated at v_max.
Eigen::Vector3d backup_desired_velocity(const Eigen::Vector3d& p, const GeofenceBox& box, double delta,
                                        double v_max);

inline constexpr double kNoTiltLimit = std::numbers::pi / 2.0;

/// Velocity tracking cascade on SE(3): acceleration demand k_v (v_des - v) + g e_z
/// inside the thrust envelope (vertical first), throttle from its magnitude,
/// and body rates k_q times the tilt error between the current and the
/// demanded thrust axis. Yaw rate is commanded to zero. `max_tilt` below
/// pi/2 also caps the thrust axis tilt from vertical.
QuadCommand velocity_tracking_command(const QuadState::Vector& x, const Eigen::Vector3d& v_des, double k_v,
                                      double k_q, const QuadParams& qp,
                                      double max_tilt = kNoTiltLimit);

/// Stop-and-push-back velocity controller on SE(3), expressed as a rate
/// command for the onboard rate loop.
QuadCommand backup_controller(const QuadState::Vector& x, const GeofenceBox& box, const FilterParams& fp,
                              const QuadParams& qp);

inline QuadCommand backup_controller(const QuadState& x, const GeofenceBox& box, const FilterParams& fp,
                                     const QuadParams& qp) {
  return backup_controller(x.to_vector(), box, fp, qp);
}

/// 1 - exp(-beta h+) or, scaled, 1 - exp(-beta h+ / max(v_perp, v_floor)).
double regulation_lambda(double h_I, double v_perp, const FilterParams& fp, bool scaled);

/// Approach speed toward the face that attains the min in geofence_h,
/// floored at zero. Ties take the largest approach speed. With blend > 0,
/// faces whose term is within `blend` of the minimum also count, scaled by
/// 1 - gap / blend, which keeps v_perp continuous when the binding face
/// changes.
double v_perp(const QuadState::Vector& x, const GeofenceBox& box, double blend = 0.0);

inline double v_perp(const QuadState& x, const GeofenceBox& box, double blend = 0.0) {
  return v_perp(x.to_vector(), box, blend);
}

/// backup + lambda (pilot - backup), componentwise and unclamped.
QuadCommand mix_commands(const QuadCommand& pilot, const QuadCommand& backup, double lambda);

/// The geofence shield. Evaluates h_I by rolling out the backup controller
/// from x and blends pilot and backup commands with the regulation function.
/// `scratch` must hold cfg.n_steps() + 1 samples; no allocation happens here.
FilterOutput filter_command(const QuadState::Vector& x, const QuadCommand& u_des, const GeofenceBox& box,
                            const FilterParams& fp, const QuadParams& qp, const FlowConfig& cfg,
                            TrajectoryBuffer<QuadState::kDim>& scratch);

/// h_I alone, with the same barrier composition filter_command uses.
double quad_implicit_barrier(const QuadState::Vector& x, const GeofenceBox& box, const FilterParams& fp,
                             const QuadParams& qp, const FlowConfig& cfg,
                             TrajectoryBuffer<QuadState::kDim>& scratch);

/// Owns the configuration and rollout scratch for one control loop.
class GeofenceShield {
 public:
  GeofenceShield(const GeofenceBox& box, const FilterParams& fp, const QuadParams& qp, const FlowConfig& cfg);

  FilterOutput filter(const QuadState::Vector& x, const QuadCommand& u_des) {
    return filter_command(x, u_des, box_, fp_, qp_, cfg_, scratch_);
  }
  FilterOutput filter(const QuadState& x, const QuadCommand& u_des) { return filter(x.to_vector(), u_des); }

  double implicit_barrier(const QuadState::Vector& x) {
    return quad_implicit_barrier(x, box_, fp_, qp_, cfg_, scratch_);
  }

  const GeofenceBox& box() const { return box_; }
  const FilterParams& filter_params() const { return fp_; }
  const QuadParams& quad_params() const { return qp_; }
  const FlowConfig& flow() const { return cfg_; }
  /// Rollout of the most recent barrier evaluation.
  const TrajectoryBuffer<QuadState::kDim>& last_rollout() const { return scratch_; }

 private:
  GeofenceBox box_;
  FilterParams fp_;
  QuadParams qp_;
  FlowConfig cfg_;
  TrajectoryBuffer<QuadState::kDim> scratch_;
};

// ---------------------------------------------------------------------------
// Inverted pendulum variant of the same pipeline.

struct PendulumFilterParams {
  Eigen::Vector2d gain = Eigen::Vector2d(8.0, 5.0);  // F in pi(x) = -F x
  double beta = 5.0;
  double delta = 0.1;  // backup-set angular speed bound, rad/s
  double backup_set_weight = 1.0;
  FlowConfig flow{2.0, 0.01};

  void validate() const;
};

struct PendulumFilterOutput {
  double u = 0.0;
  double backup = 0.0;
  double lambda = 0.0;
  double h_I = 0.0;
};

/// min{1 - theta^2, 2 - theta_dot^2}
double pendulum_h(const Eigen::Vector2d& x);
/// min{(pi/12)^2 - theta^2, delta^2 - theta_dot^2}
double pendulum_backup_set_h(const Eigen::Vector2d& x, double delta);
inline double pendulum_backup(const Eigen::Vector2d& x, const Eigen::Vector2d& gain) { return -gain.dot(x); }

double pendulum_implicit_barrier(const Eigen::Vector2d& x, const PendulumFilterParams& params,
                                 TrajectoryBuffer<2>& scratch);

PendulumFilterOutput pendulum_filter(const Eigen::Vector2d& x, double u_des, const PendulumFilterParams& params,
                                     TrajectoryBuffer<2>& scratch);

}  // namespace geofence
