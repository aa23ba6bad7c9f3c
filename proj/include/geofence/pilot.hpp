#pragma once

#include <optional>

#include "geofence/scenario.hpp"
#include "geofence/vehicle_models.hpp"

namespace geofence {

/// Where desired commands come from: a script, or a live operator.
class QuadPilotSource {
 public:
  virtual ~QuadPilotSource() = default;
  /// A fresh command for this tick, or nullopt when nothing was received.
  virtual std::optional<QuadCommand> poll(double t, const QuadState::Vector& x) = 0;
};

/// Plays back a PilotProfile. Velocity segments model a pilot flying toward
/// a target velocity with full stick authority.
class ScriptedQuadPilot final : public QuadPilotSource {
 public:
  ScriptedQuadPilot(PilotProfile profile, QuadParams vehicle);
  std::optional<QuadCommand> poll(double t, const QuadState::Vector& x) override;

 private:
  PilotProfile profile_;
  QuadParams vehicle_;
};

/// RC-link semantics: the latest command is held, and after `timeout`
/// seconds without a fresh one the desired input drops to zero throttle and
/// zero rates.
class PilotLink {
 public:
  explicit PilotLink(double timeout) : timeout_(timeout) {}

  QuadCommand update(double t, const std::optional<QuadCommand>& fresh);
  bool timed_out(double t) const;

 private:
  double timeout_;
  std::optional<double> last_time_;
  QuadCommand last_;
};

/// Scripted scalar pilot for the pendulum.
double scripted_pendulum_input(const PilotProfile& profile, double t);

}  // namespace geofence
