#include "geofence/cbf_qp_baseline.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace geofence {

void QPBaselineParams::validate() const {
  if (!(alpha > 0.0)) throw std::invalid_argument("qp: alpha must be > 0");
  if (!(fd_step > 0.0)) throw std::invalid_argument("qp: fd_step must be > 0");
  if (input_bounds && !(input_bounds->first < input_bounds->second)) {
    throw std::invalid_argument("qp: input bounds must satisfy lo < hi");
  }
}

Eigen::Vector2d hI_gradient_fd(const Eigen::Vector2d& x, const PendulumFilterParams& params, double step,
                               TrajectoryBuffer<2>& scratch) {
  return central_gradient(
      [&](const Eigen::Vector2d& s) { return pendulum_implicit_barrier(s, params, scratch); }, x, step);
}

HalfSpaceSolution solve_halfspace_qp(double a, double b, double u_des) {
  if (a * u_des >= b) return {u_des, false, false};
  if (std::abs(a) < 1e-10) return {u_des, true, true};
  return {b / a, true, false};
}

QPFilterOutput qp_filter(const Eigen::Vector2d& x, double u_des, const PendulumFilterParams& pendulum,
                         const QPBaselineParams& qp, TrajectoryBuffer<2>& scratch) {
  QPFilterOutput out;
  out.h_I = pendulum_implicit_barrier(x, pendulum, scratch);
  out.gradient = hI_gradient_fd(x, pendulum, qp.fd_step, scratch);

  // Pendulum drift f(x) = (theta_dot, sin theta) and input direction g = (0, 1).
  const Eigen::Vector2d drift(x[1], std::sin(x[0]));
  out.a = out.gradient[1];
  out.b = -qp.alpha * out.h_I - out.gradient.dot(drift);

  const HalfSpaceSolution sol = std::isfinite(out.h_I) ? solve_halfspace_qp(out.a, out.b, u_des)
                                                        : HalfSpaceSolution{u_des, true, true};
  out.active = sol.active;
  out.infeasible = sol.infeasible;
  out.u = sol.infeasible ? pendulum_backup(x, pendulum.gain) : sol.u;
  if (qp.input_bounds) out.u = std::clamp(out.u, qp.input_bounds->first, qp.input_bounds->second);
  return out;
}

}  // namespace geofence
