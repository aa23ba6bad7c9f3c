#pragma once

#include <array>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <thread>

#include <json.hpp>

#include "geofence/scenario.hpp"
#include "geofence/sim_harness.hpp"

namespace geofence::cockpit {

/// Every message on the wire is {"version": kProtocolVersion, "type": ..., "payload": {...}}.
inline constexpr int kProtocolVersion = 1;

enum class Phase { kIdle, kArmed, kFlying, kViolatedHalt };
std::string_view phase_name(Phase p);

/// Stick sample from the cockpit. Axes are normalized: throttle in [0,1],
/// rates in [-1,1] (scaled by the vehicle rate limit on arrival).
struct PilotInputMsg {
  std::int64_t seq = 0;
  double timestamp_ms = 0.0;
  double throttle = 0.0;
  double roll_rate = 0.0;
  double pitch_rate = 0.0;
  double yaw_rate = 0.0;
};

struct Envelope {
  std::string type;
  nlohmann::json payload;
};

/// Parses and checks the envelope. On failure returns nullopt and fills `error`.
std::optional<Envelope> parse_envelope(std::string_view text, std::string* error = nullptr);
std::optional<PilotInputMsg> parse_input(const nlohmann::json& payload, std::string* error = nullptr);
nlohmann::json input_to_json(const PilotInputMsg& msg);
/// roll -> body x, pitch -> body y, yaw -> body z.
QuadCommand to_command(const PilotInputMsg& msg, double rate_limit);
std::string make_message(std::string_view type, nlohmann::json payload);

struct TelemetryFrame {
  std::uint64_t seq = 0;  // frame counter within the session
  double t = 0.0;
  Phase phase = Phase::kIdle;
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  Eigen::Vector4d quaternion = Eigen::Vector4d(1, 0, 0, 0);  // w x y z
  Eigen::Vector3d velocity = Eigen::Vector3d::Zero();
  double h_I = 0.0;
  double lambda = 0.0;
  double v_perp = 0.0;
  QuadCommand u_des;
  QuadCommand u_cmd;
  double last_input_age_ms = -1.0;  // -1 before any input
  std::uint64_t malformed_inputs = 0;
  std::uint64_t stale_inputs = 0;
};

nlohmann::json frame_to_json(const TelemetryFrame& f, const GeofenceBox* geofence = nullptr);
nlohmann::json geofence_to_json(const GeofenceBox& box);

/// Single-producer / single-consumer latest-value cell (triple buffer).
/// Neither side ever waits; the consumer sees only the newest value.
template <typename T>
class LatestCell {
 public:
  void publish(const T& value) {
    slots_[back_] = value;
    back_ = middle_.exchange(back_ | kFresh, std::memory_order_acq_rel) & kIndex;
  }

  /// Copies the newest value into `out` if one arrived since the last call.
  bool consume(T& out) {
    if ((middle_.load(std::memory_order_relaxed) & kFresh) == 0) return false;
    front_ = middle_.exchange(front_, std::memory_order_acq_rel) & kIndex;
    out = slots_[front_];
    return true;
  }

 private:
  static constexpr unsigned kFresh = 4;
  static constexpr unsigned kIndex = 3;
  std::array<T, 3> slots_{};
  std::atomic<unsigned> middle_{1};
  unsigned back_ = 0;
  unsigned front_ = 2;
};

struct StampedCommand {
  std::int64_t seq = 0;
  QuadCommand command;
};

/// Network-side input filter: parses payloads, drops malformed and
/// out-of-order messages, counts both.
class InputGate {
 public:
  enum class Result { kAccepted, kStale, kMalformed };

  explicit InputGate(double rate_limit) : rate_limit_(rate_limit) {}
  Result offer(const nlohmann::json& payload, StampedCommand* accepted);
  void count_malformed() { malformed_.fetch_add(1, std::memory_order_relaxed); }

  std::uint64_t malformed() const { return malformed_.load(std::memory_order_relaxed); }
  std::uint64_t stale() const { return stale_.load(std::memory_order_relaxed); }

 private:
  double rate_limit_;
  std::optional<std::int64_t> last_seq_;
  std::atomic<std::uint64_t> malformed_{0};
  std::atomic<std::uint64_t> stale_{0};
};

struct SessionConfig {
  double telemetry_hz = 60.0;
  bool record_log = false;  // keep a TelemetryLog of every flying tick
};

/// The control loop body, stepped in virtual time: one call per 2.5 ms
/// tick. Owns the simulation; no threads, no clocks.
class SessionCore {
 public:
  SessionCore(const Scenario& scenario, SessionConfig config = {});

  Phase phase() const { return phase_; }
  /// armed -> flying. Returns false from any other phase.
  bool fly();
  void stop() { phase_ = Phase::kIdle; }

  /// Advances one control tick. Input only moves the drone while flying;
  /// the first input while armed starts the flight. Returns a frame when
  /// the decimation clock fires or the phase changed to violated-halt.
  std::optional<TelemetryFrame> tick(const std::optional<StampedCommand>& fresh);

  long ticks() const { return loop_ticks_; }
  double sim_time() const { return sim_.time(); }
  const Scenario& scenario() const { return scenario_; }
  const TelemetryLog& log() const { return log_; }
  /// Last frame built, whether or not it was emitted.
  const TelemetryFrame& last_frame() const { return frame_; }
  void set_input_counters(std::uint64_t malformed, std::uint64_t stale) {
    frame_.malformed_inputs = malformed;
    frame_.stale_inputs = stale;
  }

 private:
  void fill_frame(const TelemetryRow& row);

  Scenario scenario_;
  SessionConfig config_;
  QuadSimulation sim_;
  Phase phase_ = Phase::kArmed;
  long loop_ticks_ = 0;
  double next_frame_time_ = 0.0;
  std::optional<double> last_input_time_;
  TelemetryFrame frame_;
  TelemetryLog log_;
};

/// Tick lateness histogram, 10 us bins up to 10 ms.
class JitterHistogram {
 public:
  static constexpr int kBins = 1000;
  static constexpr double kBinUs = 10.0;
  void record(double late_us);
  std::uint64_t count() const;
  /// Upper edge of the bin holding the q-quantile, in microseconds.
  double quantile_us(double q) const;

 private:
  std::array<std::atomic<std::uint64_t>, kBins + 1> bins_{};
};

/// A SessionCore running on its own thread at the scenario's control rate.
/// Input and telemetry cross threads through LatestCells only.
class LiveSession {
 public:
  LiveSession(const Scenario& scenario, SessionConfig config = {});
  ~LiveSession();
  LiveSession(const LiveSession&) = delete;
  LiveSession& operator=(const LiveSession&) = delete;

  void start();
  void stop();

  /// Network side. Returns the gate verdict.
  InputGate::Result submit_input(const nlohmann::json& payload);
  void count_malformed() { gate_.count_malformed(); }
  void request_fly() { fly_requested_.store(true, std::memory_order_release); }
  bool latest_frame(TelemetryFrame& out) { return frames_.consume(out); }

  Phase phase() const { return phase_.load(std::memory_order_acquire); }
  const Scenario& scenario() const { return scenario_; }
  const JitterHistogram& jitter() const { return jitter_; }
  long ticks() const { return ticks_.load(std::memory_order_relaxed); }
  std::uint64_t malformed() const { return gate_.malformed(); }
  std::uint64_t stale() const { return gate_.stale(); }
  /// Sim-time age of the last applied input in ms, -1 before any.
  double last_input_age_ms() const { return input_age_ms_.load(std::memory_order_relaxed); }

 private:
  void run();

  Scenario scenario_;
  SessionCore core_;
  InputGate gate_;
  LatestCell<StampedCommand> inputs_;
  LatestCell<TelemetryFrame> frames_;
  std::atomic<bool> fly_requested_{false};
  std::atomic<bool> running_{false};
  std::atomic<Phase> phase_{Phase::kArmed};
  std::atomic<long> ticks_{0};
  std::atomic<double> input_age_ms_{-1.0};
  JitterHistogram jitter_;
  std::thread thread_;
};

}  // namespace geofence::cockpit
