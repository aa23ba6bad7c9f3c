#pragma once

#include <optional>
#include <vector>

#include "geofence/pilot.hpp"
#include "geofence/safety_filter.hpp"
#include "geofence/scenario.hpp"
#include "geofence/telemetry.hpp"

namespace geofence {

/// Thrown when a scenario starts outside the invariant set without
/// allow_outside_invariant_set.
class ScenarioRejected : public ScenarioError {
 public:
  using ScenarioError::ScenarioError;
};

/// Advances the plant by dt holding u constant (classic RK4).
QuadState::Vector integrate_quad(const QuadState::Vector& x, const QuadCommand& u, const QuadParams& p, double dt);

/// Infinity norm of the command difference, rates scaled by rate_limit so
/// both throttle and rates live on [0,1]-sized axes.
double command_distance(const QuadCommand& a, const QuadCommand& b, double rate_limit);

/// Closed-loop quadrotor simulation stepped one control tick at a time.
/// Shared by the batch runner and the real-time cockpit loop.
class QuadSimulation {
 public:
  explicit QuadSimulation(const Scenario& scenario);

  /// Filters the desired command at the current state and returns the tick's
  /// telemetry. Does not advance time.
  TelemetryRow evaluate(const std::optional<QuadCommand>& fresh);
  /// Integrates the plant over one control period holding `u_cmd`.
  void advance(const QuadCommand& u_cmd);

  double time() const { return static_cast<double>(tick_) * control_dt_; }
  long tick() const { return tick_; }
  const QuadState::Vector& state() const { return x_; }
  const GeofenceShield& shield() const { return shield_; }
  double initial_barrier() const { return initial_h_I_; }

 private:
  GeofenceShield shield_;
  PilotLink link_;
  QuadState::Vector x_;
  double control_dt_;
  int substeps_;
  double physics_dt_;
  long tick_ = 0;
  double initial_h_I_ = 0.0;
};

struct QuadRunResult {
  TelemetryLog log;
  bool violated = false;
  double violation_time = 0.0;
  double wall_seconds = 0.0;
};

/// Runs a quadrotor scenario: one log row per control tick from t = 0 to
/// t = duration, stopping early on a geofence violation.
QuadRunResult run_scenario(const Scenario& scenario, QuadPilotSource& pilot);
QuadRunResult run_scenario(const Scenario& scenario);

struct Metrics {
  double top_speed = 0.0;
  double peak_descent_speed = 0.0;
  double min_h = 0.0;
  double min_face_distance = 0.0;
  double min_lambda = 0.0;
  /// Braking face: shortest time to contact at the braking onset. Distance
  /// to it at the first later tick with approach speed below 0.1 m/s. NaN
  /// when the filter never braked.
  double stop_distance_to_face = 0.0;
  int stop_axis = -1;
  double stop_side = 1.0;
  double braking_onset_time = 0.0;
  double stop_time = 0.0;
  double max_command_step = 0.0;
  double duration = 0.0;
};

/// `braking_lambda`: lambda below this marks the braking onset.
Metrics compute_metrics(const TelemetryLog& log, const GeofenceBox& box, double rate_limit,
                        double braking_lambda = 0.9);

/// One interval during which lambda stayed below the threshold.
struct Engagement {
  std::size_t begin = 0;  // row index
  std::size_t end = 0;    // one past the last row below the threshold
  int axis = 0;
  double side = 1.0;  // +1 for the upper face of `axis`
  double closest_distance = 0.0;
  /// Largest distance from the same face reached after the engagement and
  /// before the next one starts.
  double retreat_distance = 0.0;
};

std::vector<Engagement> find_engagements(const TelemetryLog& log, const GeofenceBox& box, double lambda_threshold);

// ---------------------------------------------------------------------------
// Pendulum runs (regulation filter or QP baseline).

struct PendulumRow {
  double t = 0.0;
  double theta = 0.0;
  double theta_dot = 0.0;
  double u_des = 0.0;
  double u = 0.0;
  double h_I = 0.0;
  double lambda = 1.0;  // regulation filter only
  double call_seconds = 0.0;
  bool infeasible = false;
};

struct PendulumRun {
  std::vector<PendulumRow> rows;
  int infeasible_count = 0;
};

/// Simulates the pendulum scenario with the chosen filter. `beta`/`alpha`
/// override the scenario's gains when given.
PendulumRun run_pendulum(const Scenario& scenario, PendulumFilterKind kind, std::optional<double> beta = {},
                         std::optional<double> alpha = {});

}  // namespace geofence
