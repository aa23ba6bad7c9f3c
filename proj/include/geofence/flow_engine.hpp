#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>

namespace geofence {

/// Fixed-step integration grid for the backup rollout.
struct FlowConfig {
  double horizon = 3.0;  // T, s
  double dt = 0.01;      // s

  int n_steps() const { return static_cast<int>(std::lround(horizon / dt)); }

  /// Throws std::invalid_argument unless dt > 0, horizon >= dt and the grid
  /// lands on the horizon to within 1e-12.
  void validate() const {
    if (!(dt > 0.0) || !std::isfinite(dt)) throw std::invalid_argument("flow: dt must be > 0");
    if (!(horizon >= dt)) throw std::invalid_argument("flow: horizon must be >= dt");
    if (std::abs(n_steps() * dt - horizon) > 1e-12) {
      throw std::invalid_argument("flow: horizon must be an integer multiple of dt");
    }
  }
};

inline constexpr double kDivergedBarrier = -std::numeric_limits<double>::infinity();

/// Fixed-capacity storage for one backup rollout. Sized once at
/// construction; rollouts only overwrite.
template <int N>
class TrajectoryBuffer {
 public:
  using State = Eigen::Matrix<double, N, 1>;

  explicit TrajectoryBuffer(int n_steps)
      : times_(static_cast<std::size_t>(n_steps) + 1), states_(static_cast<std::size_t>(n_steps) + 1) {
    if (n_steps < 1) throw std::invalid_argument("trajectory buffer needs at least one step");
  }

  /// Number of samples the buffer holds (n_steps + 1).
  int capacity() const { return static_cast<int>(states_.size()); }
  int n_steps() const { return capacity() - 1; }
  /// Samples written by the last rollout.
  int size() const { return filled_; }
  bool diverged() const { return diverged_; }
  bool complete() const { return !diverged_ && filled_ == capacity(); }

  std::span<const double> times() const { return {times_.data(), static_cast<std::size_t>(filled_)}; }
  std::span<const State> states() const { return {states_.data(), static_cast<std::size_t>(filled_)}; }
  const State& terminal() const { return states_[static_cast<std::size_t>(filled_ - 1)]; }

 private:
  template <typename Plant, typename Backup, int M>
  friend void rollout_backup(const typename Plant::State&, Backup&&, const Plant&, const FlowConfig&,
                             TrajectoryBuffer<M>&);

  std::vector<double> times_;
  std::vector<State> states_;
  int filled_ = 0;
  bool diverged_ = false;
};

/// One classic fourth-order Runge-Kutta step of xdot = field(x).
template <typename State, typename Field>
State rk4_step(const State& x, Field&& field, double dt) {
  const double half = 0.5 * dt;
  const State k1 = field(x);
  const State k2 = field(State(x + half * k1));
  const State k3 = field(State(x + half * k2));
  const State k4 = field(State(x + dt * k3));
  return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

/// Integrates xdot = plant.deriv(x, backup(x)) from x0 with classic RK4 on
/// the fixed grid of `cfg`, projecting onto the state manifold after every
/// step. Writes all n_steps + 1 samples into `out` without allocating. A
/// non-finite state stops the rollout and marks `out` as diverged.
template <typename Plant, typename Backup, int N>
void rollout_backup(const typename Plant::State& x0, Backup&& backup, const Plant& plant,
                    const FlowConfig& cfg, TrajectoryBuffer<N>& out) {
  static_assert(Plant::kDim == N, "trajectory buffer dimension does not match the plant");
  using State = typename Plant::State;

  const int n = cfg.n_steps();
  if (out.capacity() != n + 1) throw std::invalid_argument("trajectory buffer capacity != n_steps + 1");

  out.diverged_ = false;
  out.filled_ = 0;

  State x = x0;
  if (!x.allFinite()) {
    out.diverged_ = true;
    return;
  }
  out.times_[0] = 0.0;
  out.states_[0] = x;
  out.filled_ = 1;

  auto field = [&](const State& s) -> State { return plant.deriv(s, backup(s)); };

  for (int k = 1; k <= n; ++k) {
    x = rk4_step(x, field, cfg.dt);
    Plant::project(x);
    if (!x.allFinite()) {
      out.diverged_ = true;
      return;
    }
    out.times_[static_cast<std::size_t>(k)] = k == n ? cfg.horizon : k * cfg.dt;
    out.states_[static_cast<std::size_t>(k)] = x;
    out.filled_ = k + 1;
  }
}

/// min( min_k h(traj[k]), h_backup(traj[T]) ). Diverged or partial rollouts
/// evaluate to kDivergedBarrier.
template <int N, typename SafeFn, typename BackupSetFn>
double implicit_barrier(const TrajectoryBuffer<N>& traj, SafeFn&& h, BackupSetFn&& h_backup) {
  if (!traj.complete()) return kDivergedBarrier;
  double value = h_backup(traj.terminal());
  for (const auto& x : traj.states()) value = std::min(value, h(x));
  return std::isnan(value) ? kDivergedBarrier : value;
}

/// Implicit barrier h_I(x0): backup rollout followed by implicit_barrier.
template <typename Plant, typename Backup, typename SafeFn, typename BackupSetFn, int N>
double evaluate_implicit_barrier(const typename Plant::State& x0, Backup&& backup, const Plant& plant,
                                 const FlowConfig& cfg, SafeFn&& h, BackupSetFn&& h_backup,
                                 TrajectoryBuffer<N>& scratch) {
  rollout_backup(x0, backup, plant, cfg, scratch);
  return implicit_barrier(scratch, h, h_backup);
}

}  // namespace geofence
