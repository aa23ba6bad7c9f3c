#pragma once

#include <optional>
#include <utility>

#include <Eigen/Core>

#include "geofence/flow_engine.hpp"
#include "geofence/safety_filter.hpp"

namespace geofence {

/// Backup-CBF QP baseline for the pendulum: h_I enters the classic CBF
/// constraint grad(h_I) (f + g u) >= -alpha h_I, with the gradient taken by
/// central finite differences of the rollout.
struct QPBaselineParams {
  double alpha = 5.0;     // linear class-K gain, alpha(h) = alpha * h
  double fd_step = 1e-4;  // finite-difference step on each state coordinate
  std::optional<std::pair<double, double>> input_bounds;

  void validate() const;
};

/// Central finite-difference gradient of a scalar function of the pendulum
/// state. Costs two evaluations per coordinate.
template <typename Fn>
Eigen::Vector2d central_gradient(Fn&& fn, const Eigen::Vector2d& x, double step) {
  Eigen::Vector2d grad;
  for (int i = 0; i < 2; ++i) {
    Eigen::Vector2d hi = x;
    Eigen::Vector2d lo = x;
    hi[i] += step;
    lo[i] -= step;
    grad[i] = (fn(hi) - fn(lo)) / (2.0 * step);
  }
  return grad;
}

Eigen::Vector2d hI_gradient_fd(const Eigen::Vector2d& x, const PendulumFilterParams& params, double step,
                               TrajectoryBuffer<2>& scratch);

/// Closest u to u_des on the half-space a u >= b. `infeasible` is set when
/// |a| < 1e-10 and the constraint fails at u_des.
struct HalfSpaceSolution {
  double u = 0.0;
  bool active = false;
  bool infeasible = false;
};
HalfSpaceSolution solve_halfspace_qp(double a, double b, double u_des);

struct QPFilterOutput {
  double u = 0.0;
  double h_I = 0.0;
  Eigen::Vector2d gradient = Eigen::Vector2d::Zero();
  double a = 0.0;  // grad(h_I) . g(x)
  double b = 0.0;  // -alpha h_I - grad(h_I) . f(x)
  bool active = false;
  bool infeasible = false;  // fell back to the backup command
};

QPFilterOutput qp_filter(const Eigen::Vector2d& x, double u_des, const PendulumFilterParams& pendulum,
                         const QPBaselineParams& qp, TrajectoryBuffer<2>& scratch);

}  // namespace geofence
