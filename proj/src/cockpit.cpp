#include "geofence/cockpit.hpp"

#include <algorithm>
#include <cmath>

namespace geofence::cockpit {

using nlohmann::json;

std::string_view phase_name(Phase p) {
  switch (p) {
    case Phase::kIdle:
      return "idle";
    case Phase::kArmed:
      return "armed";
    case Phase::kFlying:
      return "flying";
    case Phase::kViolatedHalt:
      return "violated-halt";
  }
  return "idle";
}

namespace {

void set_error(std::string* error, std::string what) {
  if (error) *error = std::move(what);
}

json vec(const Eigen::Vector3d& v) { return json::array({v.x(), v.y(), v.z()}); }

json command_json(const QuadCommand& u) {
  return {{"throttle", u.throttle}, {"body_rates", vec(u.body_rates)}};
}

bool finite_number(const json& j) { return j.is_number() && std::isfinite(j.get<double>()); }

}  // namespace

std::optional<Envelope> parse_envelope(std::string_view text, std::string* error) {
  const json j = json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    set_error(error, "not a JSON object");
    return std::nullopt;
  }
  if (!j.contains("version") || !j["version"].is_number_integer()) {
    set_error(error, "missing integer version");
    return std::nullopt;
  }
  if (j["version"].get<int>() != kProtocolVersion) {
    set_error(error, "unsupported version " + j["version"].dump());
    return std::nullopt;
  }
  if (!j.contains("type") || !j["type"].is_string()) {
    set_error(error, "missing type");
    return std::nullopt;
  }
  Envelope e;
  e.type = j["type"].get<std::string>();
  if (e.type != "input" && e.type != "control" && e.type != "telemetry") {
    set_error(error, "unknown type '" + e.type + "'");
    return std::nullopt;
  }
  e.payload = j.value("payload", json::object());
  if (!e.payload.is_object()) {
    set_error(error, "payload must be an object");
    return std::nullopt;
  }
  return e;
}

std::optional<PilotInputMsg> parse_input(const json& p, std::string* error) {
  if (!p.is_object()) {
    set_error(error, "input payload must be an object");
    return std::nullopt;
  }
  if (!p.contains("seq") || !p["seq"].is_number_integer() || p["seq"].get<std::int64_t>() < 0) {
    set_error(error, "seq must be a non-negative integer");
    return std::nullopt;
  }
  if (!p.contains("timestamp_ms") || !finite_number(p["timestamp_ms"])) {
    set_error(error, "timestamp_ms must be a number");
    return std::nullopt;
  }
  if (!p.contains("axes") || !p["axes"].is_object()) {
    set_error(error, "axes must be an object");
    return std::nullopt;
  }
  const json& a = p["axes"];
  PilotInputMsg m;
  m.seq = p["seq"].get<std::int64_t>();
  m.timestamp_ms = p["timestamp_ms"].get<double>();
  struct Axis {
    const char* name;
    double* slot;
    double lo;
  };
  for (const Axis& ax : {Axis{"throttle", &m.throttle, 0.0}, Axis{"roll_rate", &m.roll_rate, -1.0},
                         Axis{"pitch_rate", &m.pitch_rate, -1.0}, Axis{"yaw_rate", &m.yaw_rate, -1.0}}) {
    if (!a.contains(ax.name) || !finite_number(a[ax.name])) {
      set_error(error, std::string("axes.") + ax.name + " must be a number");
      return std::nullopt;
    }
    const double v = a[ax.name].get<double>();
    if (v < ax.lo || v > 1.0) {
      set_error(error, std::string("axes.") + ax.name + " out of range");
      return std::nullopt;
    }
    *ax.slot = v;
  }
  return m;
}

json input_to_json(const PilotInputMsg& m) {
  return {{"seq", m.seq},
          {"timestamp_ms", m.timestamp_ms},
          {"axes",
           {{"throttle", m.throttle}, {"roll_rate", m.roll_rate}, {"pitch_rate", m.pitch_rate}, {"yaw_rate", m.yaw_rate}}}};
}

QuadCommand to_command(const PilotInputMsg& m, double rate_limit) {
  return {m.throttle, Eigen::Vector3d(m.roll_rate, m.pitch_rate, m.yaw_rate) * rate_limit};
}

std::string make_message(std::string_view type, json payload) {
  return json{{"version", kProtocolVersion}, {"type", type}, {"payload", std::move(payload)}}.dump();
}

json geofence_to_json(const GeofenceBox& box) {
  return {{"center", vec(box.center)}, {"half_extents", vec(box.half_extents)}, {"inflation", vec(box.inflation)}};
}

json frame_to_json(const TelemetryFrame& f, const GeofenceBox* geofence) {
  json j{{"seq", f.seq},
         {"t", f.t},
         {"phase", phase_name(f.phase)},
         {"position", vec(f.position)},
         {"quaternion", json::array({f.quaternion[0], f.quaternion[1], f.quaternion[2], f.quaternion[3]})},
         {"velocity", vec(f.velocity)},
         {"h_I", f.h_I},
         {"lambda", f.lambda},
         {"v_perp", f.v_perp},
         {"u_des", command_json(f.u_des)},
         {"u_cmd", command_json(f.u_cmd)},
         {"last_input_age_ms", f.last_input_age_ms},
         {"malformed_inputs", f.malformed_inputs},
         {"stale_inputs", f.stale_inputs}};
  if (geofence) j["geofence"] = geofence_to_json(*geofence);
  return j;
}

InputGate::Result InputGate::offer(const json& payload, StampedCommand* accepted) {
  const auto msg = parse_input(payload);
  if (!msg) {
    count_malformed();
    return Result::kMalformed;
  }
  if (last_seq_ && msg->seq <= *last_seq_) {
    stale_.fetch_add(1, std::memory_order_relaxed);
    return Result::kStale;
  }
  last_seq_ = msg->seq;
  if (accepted) *accepted = {msg->seq, to_command(*msg, rate_limit_)};
  return Result::kAccepted;
}

// ---------------------------------------------------------------------------

SessionCore::SessionCore(const Scenario& scenario, SessionConfig config)
    : scenario_(scenario), config_(config), sim_(scenario) {
  if (!(config_.telemetry_hz > 0.0)) throw std::invalid_argument("telemetry_hz must be > 0");
  if (config_.record_log) log_.reserve(1 << 16);
  TelemetryRow row;
  row.state = sim_.state();
  row.lambda = 1.0;
  row.h_I = sim_.initial_barrier();
  fill_frame(row);
}

bool SessionCore::fly() {
  if (phase_ != Phase::kArmed) return false;
  phase_ = Phase::kFlying;
  return true;
}

void SessionCore::fill_frame(const TelemetryRow& row) {
  frame_.t = row.t;
  frame_.phase = phase_;
  frame_.position = row.state.segment<3>(quad_index::kPos);
  frame_.quaternion = row.state.segment<4>(quad_index::kQuat);
  frame_.velocity = row.state.segment<3>(quad_index::kVel);
  frame_.h_I = row.h_I;
  frame_.lambda = row.lambda;
  frame_.v_perp = row.v_perp;
  frame_.u_des = row.u_des;
  frame_.u_cmd = row.u_cmd;
  frame_.last_input_age_ms = last_input_time_ ? (row.t - *last_input_time_) * 1e3 : -1.0;
}

std::optional<TelemetryFrame> SessionCore::tick(const std::optional<StampedCommand>& fresh) {
  const double loop_time = static_cast<double>(loop_ticks_) * scenario_.control_dt;
  ++loop_ticks_;
  if (phase_ == Phase::kArmed && fresh) phase_ = Phase::kFlying;

  bool halted_now = false;
  if (phase_ == Phase::kFlying) {
    if (fresh) last_input_time_ = sim_.time();
    const TelemetryRow row = sim_.evaluate(fresh ? std::optional<QuadCommand>(fresh->command) : std::nullopt);
    if (config_.record_log) log_.append(row);
    if (geofence_h(row.state.segment<3>(quad_index::kPos), scenario_.geofence) < 0.0) {
      phase_ = Phase::kViolatedHalt;
      halted_now = true;
    } else {
      sim_.advance(row.u_cmd);
    }
    fill_frame(row);
  }
  frame_.phase = phase_;

  if (halted_now || loop_time + 1e-9 >= next_frame_time_) {
    next_frame_time_ += 1.0 / config_.telemetry_hz;
    ++frame_.seq;
    return frame_;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------

void JitterHistogram::record(double late_us) {
  const int bin = std::clamp(static_cast<int>(late_us / kBinUs), 0, kBins);
  bins_[static_cast<std::size_t>(bin)].fetch_add(1, std::memory_order_relaxed);
}

std::uint64_t JitterHistogram::count() const {
  std::uint64_t n = 0;
  for (const auto& b : bins_) n += b.load(std::memory_order_relaxed);
  return n;
}

double JitterHistogram::quantile_us(double q) const {
  const std::uint64_t n = count();
  if (n == 0) return 0.0;
  const auto target = static_cast<std::uint64_t>(std::ceil(q * static_cast<double>(n)));
  std::uint64_t seen = 0;
  for (int i = 0; i <= kBins; ++i) {
    seen += bins_[static_cast<std::size_t>(i)].load(std::memory_order_relaxed);
    if (seen >= target) return (i + 1) * kBinUs;
  }
  return (kBins + 1) * kBinUs;
}

LiveSession::LiveSession(const Scenario& scenario, SessionConfig config)
    : scenario_(scenario), core_(scenario, config), gate_(scenario.vehicle.rate_limit) {}

LiveSession::~LiveSession() { stop(); }

void LiveSession::start() {
  if (running_.exchange(true)) return;
  frames_.publish(core_.last_frame());
  thread_ = std::thread([this] { run(); });
}

void LiveSession::stop() {
  running_.store(false);
  if (thread_.joinable()) thread_.join();
}

InputGate::Result LiveSession::submit_input(const json& payload) {
  StampedCommand cmd;
  const InputGate::Result r = gate_.offer(payload, &cmd);
  if (r == InputGate::Result::kAccepted) inputs_.publish(cmd);
  return r;
}

void LiveSession::run() {
  using clock = std::chrono::steady_clock;
  const auto period = std::chrono::duration_cast<clock::duration>(std::chrono::duration<double>(scenario_.control_dt));
  auto deadline = clock::now();
  StampedCommand in;
  while (running_.load(std::memory_order_relaxed)) {
    std::this_thread::sleep_until(deadline);
    const auto woke = clock::now();
    jitter_.record(std::chrono::duration<double, std::micro>(woke - deadline).count());

    if (fly_requested_.exchange(false, std::memory_order_acq_rel)) core_.fly();
    std::optional<StampedCommand> fresh;
    if (inputs_.consume(in)) fresh = in;
    core_.set_input_counters(gate_.malformed(), gate_.stale());
    const auto frame = core_.tick(fresh);
    if (frame) frames_.publish(*frame);
    ticks_.store(core_.ticks(), std::memory_order_relaxed);
    input_age_ms_.store(core_.last_frame().last_input_age_ms, std::memory_order_relaxed);
    phase_.store(core_.phase(), std::memory_order_release);
    if (core_.phase() == Phase::kViolatedHalt) break;

    deadline += period;
    // a long stall (debugger, suspend) resynchronises instead of bursting
    if (clock::now() - deadline > 8 * period) deadline = clock::now();
  }
}

}  // namespace geofence::cockpit
