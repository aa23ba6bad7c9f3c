#include "geofence/pilot.hpp"

#include <numbers>

#include "geofence/safety_filter.hpp"

namespace geofence {

namespace {

const PilotSegment* active_segment(const PilotProfile& profile, double t) {
  for (const auto& s : profile.segments) {
    if (t < s.until) return &s;
  }
  return nullptr;
}

}  // namespace

ScriptedQuadPilot::ScriptedQuadPilot(PilotProfile profile, QuadParams vehicle)
    : profile_(std::move(profile)), vehicle_(vehicle) {}

std::optional<QuadCommand> ScriptedQuadPilot::poll(double t, const QuadState::Vector& x) {
  const PilotSegment* s = active_segment(profile_, t);
  if (s == nullptr) return std::nullopt;
  switch (s->mode) {
    case PilotMode::kCommand:
      return s->command;
    case PilotMode::kVelocity:
      return velocity_tracking_command(x, s->target_velocity, profile_.k_v, profile_.k_q, vehicle_,
                                       profile_.max_tilt_deg * std::numbers::pi / 180.0);
    case PilotMode::kSilent:
      return std::nullopt;
  }
  return std::nullopt;
}

bool PilotLink::timed_out(double t) const {
  // Small slack so a timeout that is an exact multiple of the tick fires on time.
  return !last_time_ || t - *last_time_ >= timeout_ - 1e-9;
}

QuadCommand PilotLink::update(double t, const std::optional<QuadCommand>& fresh) {
  if (fresh) {
    last_ = *fresh;
    last_time_ = t;
  }
  if (timed_out(t)) return QuadCommand{};
  return last_;
}

double scripted_pendulum_input(const PilotProfile& profile, double t) {
  const PilotSegment* s = active_segment(profile, t);
  if (s == nullptr || s->mode == PilotMode::kSilent) return 0.0;
  return s->pendulum_input;
}

}  // namespace geofence
