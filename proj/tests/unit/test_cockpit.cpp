#include <cmath>
#include <filesystem>
#include <random>
#include <sstream>
#include <thread>

#include <doctest.h>

#include "geofence/cockpit.hpp"
#include "oracles.hpp"

using namespace geofence;
using namespace geofence::cockpit;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

Scenario shipped(const std::string& id, const std::vector<std::string>& overrides = {}) {
  return load_scenario(*find_scenario(id, {fs::path(GEOFENCE_SCENARIO_DIR)}), overrides);
}

json input(std::int64_t seq, double throttle, double roll = 0.0, double pitch = 0.0, double yaw = 0.0) {
  PilotInputMsg m;
  m.seq = seq;
  m.timestamp_ms = static_cast<double>(seq);
  m.throttle = throttle;
  m.roll_rate = roll;
  m.pitch_rate = pitch;
  m.yaw_rate = yaw;
  return input_to_json(m);
}

std::optional<StampedCommand> stamped(std::int64_t seq, const QuadCommand& u) { return StampedCommand{seq, u}; }

}  // namespace

TEST_CASE("envelope parsing checks version, type and payload") {
  std::string why;
  const auto ok = parse_envelope(R"({"version":1,"type":"control","payload":{"action":"fly"}})", &why);
  REQUIRE(ok);
  CHECK(ok->type == "control");
  CHECK(ok->payload["action"] == "fly");

  CHECK_FALSE(parse_envelope(R"({"type":"control","payload":{}})", &why));
  CHECK(why.find("version") != std::string::npos);
  CHECK_FALSE(parse_envelope(R"({"version":2,"type":"control","payload":{}})", &why));
  CHECK_FALSE(parse_envelope(R"({"version":"1","type":"control","payload":{}})"));
  CHECK_FALSE(parse_envelope(R"({"version":1,"type":"banana","payload":{}})"));
  CHECK_FALSE(parse_envelope(R"({"version":1,"type":"input","payload":[1,2]})"));
  CHECK_FALSE(parse_envelope("{not json"));
  CHECK_FALSE(parse_envelope("[]"));
  // payload may be omitted
  CHECK(parse_envelope(R"({"version":1,"type":"control"})"));

  const auto round = parse_envelope(make_message("telemetry", {{"x", 1}}));
  REQUIRE(round);
  CHECK(round->payload["x"] == 1);
}

TEST_CASE("pilot input parsing and ranges") {
  const auto m = parse_input(input(7, 0.5, -1.0, 1.0, 0.25));
  REQUIRE(m);
  CHECK(m->seq == 7);
  CHECK(m->throttle == 0.5);
  CHECK(m->roll_rate == -1.0);
  CHECK(m->pitch_rate == 1.0);
  CHECK(m->yaw_rate == 0.25);

  std::string why;
  CHECK_FALSE(parse_input(input(1, 1.2), &why));
  CHECK(why.find("throttle") != std::string::npos);
  CHECK_FALSE(parse_input(input(1, -0.1)));
  CHECK_FALSE(parse_input(input(1, 0.5, 1.5)));
  CHECK_FALSE(parse_input(input(-1, 0.5)));
  json j = input(1, 0.5);
  j["seq"] = 1.5;
  CHECK_FALSE(parse_input(j));
  j = input(1, 0.5);
  j["axes"].erase("yaw_rate");
  CHECK_FALSE(parse_input(j));
  j = input(1, 0.5);
  j["axes"]["pitch_rate"] = "fast";
  CHECK_FALSE(parse_input(j));
  j = input(1, 0.5);
  j.erase("timestamp_ms");
  CHECK_FALSE(parse_input(j));
}

TEST_CASE("normalized sticks scale by the rate limit onto body axes") {
  PilotInputMsg m;
  m.throttle = 0.4;
  m.roll_rate = 1.0;
  m.pitch_rate = -0.5;
  m.yaw_rate = 0.25;
  const QuadCommand u = to_command(m, 8.0);
  CHECK(u.throttle == 0.4);
  CHECK(u.body_rates.x() == 8.0);
  CHECK(u.body_rates.y() == -4.0);
  CHECK(u.body_rates.z() == 2.0);
}

TEST_CASE("latest cell hands over only the newest value") {
  LatestCell<int> cell;
  int out = -1;
  CHECK_FALSE(cell.consume(out));
  cell.publish(1);
  cell.publish(2);
  cell.publish(3);
  REQUIRE(cell.consume(out));
  CHECK(out == 3);
  CHECK_FALSE(cell.consume(out));
  cell.publish(4);
  REQUIRE(cell.consume(out));
  CHECK(out == 4);

  SUBCASE("concurrent producer, values seen in order and the last one arrives") {
    LatestCell<std::array<long, 8>> c;
    constexpr long kN = 200000;
    std::thread producer([&] {
      for (long i = 1; i <= kN; ++i) {
        std::array<long, 8> v;
        v.fill(i);
        c.publish(v);
      }
    });
    long last = 0;
    bool torn = false, backwards = false;
    std::array<long, 8> v{};
    while (last < kN) {
      if (!c.consume(v)) {
        std::this_thread::yield();
        continue;
      }
      for (long e : v) torn = torn || e != v[0];
      backwards = backwards || v[0] <= last;
      last = v[0];
    }
    producer.join();
    CHECK_FALSE(torn);
    CHECK_FALSE(backwards);
    CHECK(last == kN);
  }
}

TEST_CASE("input gate drops stale and malformed messages and counts them") {
  InputGate gate(10.0);
  StampedCommand cmd;
  CHECK(gate.offer(input(1, 0.3), &cmd) == InputGate::Result::kAccepted);
  CHECK(cmd.seq == 1);
  CHECK(cmd.command.throttle == 0.3);
  CHECK(gate.offer(input(1, 0.9), &cmd) == InputGate::Result::kStale);
  CHECK(gate.offer(input(0, 0.9), &cmd) == InputGate::Result::kStale);
  CHECK(cmd.command.throttle == 0.3);
  CHECK(gate.offer(input(5, 0.6, 0.5), &cmd) == InputGate::Result::kAccepted);
  CHECK(cmd.command.body_rates.x() == 5.0);
  CHECK(gate.offer(json{{"seq", 6}}, &cmd) == InputGate::Result::kMalformed);
  CHECK(gate.offer(input(3, 0.1), &cmd) == InputGate::Result::kStale);
  CHECK(gate.stale() == 3);
  CHECK(gate.malformed() == 1);
  // a malformed message does not advance the sequence
  CHECK(gate.offer(input(6, 0.1), &cmd) == InputGate::Result::kAccepted);
}

TEST_CASE("session is armed at the initial hover and holds state") {
  const Scenario s = shipped("free_fall_70m");
  SessionCore core(s);
  CHECK(core.phase() == Phase::kArmed);
  for (int k = 0; k < 400; ++k) core.tick(std::nullopt);
  CHECK(core.phase() == Phase::kArmed);
  CHECK(core.sim_time() == 0.0);
  const TelemetryFrame& f = core.last_frame();
  CHECK(f.position.z() == doctest::Approx(70.5));
  CHECK(f.velocity.norm() == 0.0);
  CHECK(f.h_I > 0.0);
  CHECK(f.last_input_age_ms == -1.0);
}

TEST_CASE("phase transitions") {
  const Scenario s = shipped("horizontal_sprint");
  SUBCASE("fly only from armed") {
    SessionCore core(s);
    CHECK(core.fly());
    CHECK(core.phase() == Phase::kFlying);
    CHECK_FALSE(core.fly());
    core.stop();
    CHECK(core.phase() == Phase::kIdle);
    CHECK_FALSE(core.fly());
    const double t = core.sim_time();
    core.tick(std::nullopt);
    CHECK(core.sim_time() == t);
  }
  SUBCASE("first input starts the flight") {
    SessionCore core(s);
    core.tick(std::nullopt);
    CHECK(core.phase() == Phase::kArmed);
    core.tick(stamped(1, {0.3, Eigen::Vector3d::Zero()}));
    CHECK(core.phase() == Phase::kFlying);
    CHECK(core.sim_time() == doctest::Approx(s.control_dt));
  }
  SUBCASE("a start outside the invariant set is refused") {
    CHECK_THROWS_AS(SessionCore(shipped("horizontal_sprint", {"initial_state.velocity=[60.0, 0.0, 0.0]"})),
                    ScenarioRejected);
  }
  SUBCASE("violation halts and reports at once") {
    const Scenario out = shipped("horizontal_sprint", {"allow_outside_invariant_set=true",
                                                       "initial_state.position=[200.0, 0.0, 0.0]"});
    SessionCore core(out);
    core.fly();
    const auto f = core.tick(std::nullopt);
    REQUIRE(f);
    CHECK(f->phase == Phase::kViolatedHalt);
    CHECK(core.phase() == Phase::kViolatedHalt);
    const double t = core.sim_time();
    CHECK_FALSE(core.fly());
    for (int k = 0; k < 10; ++k) core.tick(stamped(10 + k, {1.0, Eigen::Vector3d::Zero()}));
    CHECK(core.sim_time() == t);
    CHECK(core.phase() == Phase::kViolatedHalt);
  }
}

TEST_CASE("one second of flight gives 60 +- 1 frames") {
  const Scenario s = shipped("free_fall_70m");
  for (double hz : {60.0, 30.0, 100.0}) {
    SessionConfig cfg;
    cfg.telemetry_hz = hz;
    SessionCore core(s, cfg);
    core.fly();
    const int ticks = static_cast<int>(std::lround(1.0 / s.control_dt));
    int frames = 0;
    std::uint64_t last_seq = 0;
    bool ordered = true;
    for (int k = 0; k < ticks; ++k) {
      if (const auto f = core.tick(std::nullopt)) {
        ++frames;
        ordered = ordered && f->seq == last_seq + 1;
        last_seq = f->seq;
      }
    }
    CHECK(ordered);
    CHECK(std::abs(frames - hz) <= 1.0);
  }
  CHECK_THROWS(SessionCore(s, SessionConfig{0.0, false}));
}

TEST_CASE("input silence decays to zero command and the filter catches the fall") {
  const Scenario s = shipped("free_fall_70m");
  SessionConfig cfg;
  cfg.record_log = true;
  SessionCore core(s, cfg);
  const double hover = hover_throttle(s.vehicle);
  const int hold = 200;  // 0.5 s of live input
  for (int k = 0; k < hold; ++k) core.tick(stamped(k + 1, {hover, Eigen::Vector3d::Zero()}));
  CHECK(core.last_frame().last_input_age_ms == doctest::Approx(0.0));
  for (int k = 0; k < 4000; ++k) core.tick(std::nullopt);
  CHECK(core.phase() == Phase::kFlying);

  const auto& rows = core.log().rows();
  const double last_input_t = rows[hold - 1].t;
  double min_h = 1e300, min_z = 1e300;
  bool zero_after_timeout = true, held_before = true;
  for (const auto& r : rows) {
    min_h = std::min(min_h, geofence_h(r.state.segment<3>(quad_index::kPos), s.geofence));
    min_z = std::min(min_z, r.state[quad_index::kPos + 2]);
    const double age = r.t - last_input_t;
    if (age > s.pilot.input_timeout + 1e-9) zero_after_timeout = zero_after_timeout && r.u_des == QuadCommand{};
    if (age > 0.0 && age < s.pilot.input_timeout - 1e-9) held_before = held_before && r.u_des.throttle == hover;
  }
  CHECK(zero_after_timeout);
  CHECK(held_before);
  CHECK(min_h >= 0.0);
  CHECK(min_z < 10.0);  // it really fell
  CHECK(core.last_frame().velocity.norm() < 0.5);
  CHECK(core.last_frame().last_input_age_ms == doctest::Approx((core.sim_time() - s.control_dt - last_input_t) * 1e3));
}

TEST_CASE("frames agree with the batch log of the same run") {
  const Scenario s = shipped("free_fall_70m");
  const QuadRunResult batch = run_scenario(s);
  std::stringstream csv;
  batch.log.write_csv(csv);
  std::string line;
  std::getline(csv, line);
  std::vector<std::pair<double, double>> csv_lambda_h;  // lambda, h_I per row
  while (std::getline(csv, line)) {
    std::vector<double> cols;
    std::stringstream ls(line);
    for (std::string c; std::getline(ls, c, ',');) cols.push_back(std::stod(c));
    csv_lambda_h.emplace_back(cols[23], cols[22]);
  }
  REQUIRE(csv_lambda_h.size() == batch.log.size());

  SessionCore core(s);
  core.fly();
  std::size_t matched = 0;
  bool same = true;
  while (core.sim_time() < s.duration - 1e-9) {
    const auto f = core.tick(std::nullopt);
    if (!f) continue;
    const auto k = static_cast<std::size_t>(std::lround(f->t / s.control_dt));
    REQUIRE(k < batch.log.size());
    const TelemetryRow& r = batch.log.rows()[k];
    same = same && r.t == f->t && r.lambda == f->lambda && r.h_I == f->h_I && r.u_cmd == f->u_cmd &&
           r.state.segment<3>(quad_index::kPos) == f->position;
    // CSV is printed with limited precision
    same = same && std::abs(csv_lambda_h[k].first - f->lambda) <= 1e-6 * std::max(1.0, std::abs(f->lambda)) &&
           std::abs(csv_lambda_h[k].second - f->h_I) <= 1e-6 * std::max(1.0, std::abs(f->h_I));
    ++matched;
  }
  CHECK(same);
  CHECK(matched >= static_cast<std::size_t>(s.duration * 60.0) - 1);
}

namespace {

struct FuzzRun {
  TelemetryLog log;
  bool violated = false;
  std::uint64_t malformed = 0, stale = 0;
};

// Bang-bang sticks held for random spans, with garbage, rewinds and radio gaps.
FuzzRun fuzz(const Scenario& s, std::uint64_t seed, int ticks) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> axis(-1.0, 1.0), unit(0.0, 1.0);
  std::uniform_int_distribution<int> hold(1, 400);
  SessionConfig cfg;
  cfg.record_log = true;
  SessionCore core(s, cfg);
  InputGate gate(s.vehicle.rate_limit);
  std::int64_t seq = 0;
  int left = 0;
  json msg = input(0, 0.5);
  for (int k = 0; k < ticks && core.phase() != Phase::kViolatedHalt; ++k) {
    if (left-- <= 0) {
      left = hold(rng);
      const double pick = unit(rng);
      auto bang = [&] { return axis(rng) > 0.0 ? 1.0 : -1.0; };
      msg = input(++seq, unit(rng) < 0.5 ? 1.0 : unit(rng), bang(), bang(), axis(rng));
      if (pick < 0.1) msg["axes"]["throttle"] = 3.0;
      if (pick > 0.95) msg["seq"] = std::max<std::int64_t>(0, seq - 5);
      if (pick > 0.9 && pick <= 0.95) left = 200;  // radio gap
    }
    std::optional<StampedCommand> fresh;
    StampedCommand c;
    if (left > 40 || k % 3 != 0) {
      if (gate.offer(msg, &c) == InputGate::Result::kAccepted) fresh = c;
      msg["seq"] = ++seq;
    }
    core.tick(fresh);
  }
  FuzzRun r;
  r.log = core.log();
  r.violated = core.phase() == Phase::kViolatedHalt;
  r.malformed = gate.malformed();
  r.stale = gate.stale();
  return r;
}

double min_box_h(const TelemetryLog& log, const GeofenceBox& box) {
  double m = std::numeric_limits<double>::infinity();
  for (const auto& r : log.rows()) m = std::min(m, geofence_h(r.state.segment<3>(quad_index::kPos), box));
  return m;
}

}  // namespace

TEST_CASE("fuzzed input streams never leave the geofence") {
  for (const char* id : {"horizontal_sprint", "free_fall_70m", "reliability_z_climb"}) {
    const Scenario s = shipped(id);
    for (std::uint64_t seed : {11u, 12u, 13u}) {
      const FuzzRun r = fuzz(s, seed, 6000);
      CAPTURE(id);
      CAPTURE(seed);
      CHECK_FALSE(r.violated);
      CHECK(r.log.size() == 6000);
      CHECK(min_box_h(r.log, s.geofence) >= 0.0);
      CHECK(r.malformed > 0);
      CHECK(r.stale > 0);
    }
  }
}

TEST_CASE("without the lookahead a fuzzed pilot can step off the h_I cliff; with it no held command does") {
  const Scenario s = shipped("horizontal_sprint");
  const Scenario bare = shipped("horizontal_sprint", {"filter.lookahead=false"});
  REQUIRE(bare.filter.lookahead_dt == 0.0);
  const FuzzRun r = fuzz(bare, 11, 6000);
  CHECK(r.violated);

  GeofenceShield guarded(s.geofence, s.filter, s.vehicle, s.flow);
  int checked = 0, cut = 0, escapes = 0;
  for (const auto& row : r.log.rows()) {
    const FilterOutput g = guarded.filter(row.state, row.u_des);
    if (!(g.lambda > 0.0)) continue;
    ++checked;
    cut += g.lambda < g.lambda_nominal ? 1 : 0;
    const auto next = oracle::hold_command(oracle::to_array(row.state), g.u_cmd, s.vehicle, s.control_dt,
                                           s.physics_substeps());
    escapes += guarded.implicit_barrier(oracle::to_vector(next)) < 0.0 ? 1 : 0;
  }
  MESSAGE(checked << " states, lambda cut back at " << cut);
  CHECK(checked > 1000);
  CHECK(cut > 0);
  CHECK(escapes == 0);
}

TEST_CASE("telemetry frame JSON carries the documented fields") {
  const Scenario s = shipped("horizontal_sprint");
  SessionCore core(s);
  core.set_input_counters(2, 3);
  const auto f = core.tick(std::nullopt);
  REQUIRE(f);
  const json j = frame_to_json(*f, &s.geofence);
  for (const char* key : {"seq", "t", "phase", "position", "quaternion", "velocity", "h_I", "lambda", "v_perp", "u_des",
                          "u_cmd", "last_input_age_ms", "malformed_inputs", "stale_inputs", "geofence"}) {
    CHECK_MESSAGE(j.contains(key), key);
  }
  CHECK(j["phase"] == "armed");
  CHECK(j["quaternion"].size() == 4);
  CHECK(j["quaternion"][0] == doctest::Approx(1.0));
  CHECK(j["geofence"]["half_extents"][0] == s.geofence.half_extents.x());
  CHECK(j["malformed_inputs"] == 2);
  CHECK(j["stale_inputs"] == 3);
  CHECK(j["u_cmd"]["body_rates"].size() == 3);
  CHECK_FALSE(frame_to_json(*f).contains("geofence"));
  for (Phase p : {Phase::kIdle, Phase::kArmed, Phase::kFlying, Phase::kViolatedHalt}) CHECK(!phase_name(p).empty());
  CHECK(phase_name(Phase::kViolatedHalt) == "violated-halt");
}

TEST_CASE("jitter histogram quantiles") {
  JitterHistogram h;
  CHECK(h.quantile_us(0.99) == 0.0);
  for (int i = 0; i < 99; ++i) h.record(5.0);
  h.record(2345.0);
  CHECK(h.count() == 100);
  CHECK(h.quantile_us(0.5) == 10.0);
  CHECK(h.quantile_us(0.99) == 10.0);
  CHECK(h.quantile_us(1.0) == 2350.0);
  h.record(1e9);  // overflow bin
  h.record(-3.0);
  CHECK(h.count() == 102);
  CHECK(h.quantile_us(1.0) > 1e4);
}

TEST_CASE("live session runs at the control rate and tolerates a stalled consumer") {
  const Scenario s = shipped("free_fall_70m");
  LiveSession live(s);
  live.start();
  TelemetryFrame f;
  REQUIRE(live.latest_frame(f));
  CHECK(f.phase == Phase::kArmed);
  live.request_fly();
  CHECK(live.submit_input(input(1, hover_throttle(s.vehicle))) == InputGate::Result::kAccepted);
  CHECK(live.submit_input(input(1, 0.5)) == InputGate::Result::kStale);
  CHECK(live.submit_input(json::object()) == InputGate::Result::kMalformed);

  // nobody reads frames for three seconds
  const auto t0 = std::chrono::steady_clock::now();
  std::this_thread::sleep_for(std::chrono::seconds(3));
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const long ticks = live.ticks();
  REQUIRE(live.latest_frame(f));
  live.stop();

  CHECK(live.phase() == Phase::kFlying);
  CHECK(f.phase == Phase::kFlying);
  CHECK(f.malformed_inputs == 1);
  CHECK(f.stale_inputs == 1);
  CHECK(live.last_input_age_ms() > 2500.0);
  const double expected = wall / s.control_dt;
  CHECK(static_cast<double>(ticks) == doctest::Approx(expected).epsilon(0.05));
  const double p99 = live.jitter().quantile_us(0.99);
  MESSAGE("tick lateness p99 " << p99 << " us over " << live.jitter().count() << " ticks");
  CHECK(p99 < 500.0);
  const long after = live.ticks();
  std::this_thread::sleep_for(std::chrono::milliseconds(20));
  CHECK(live.ticks() == after);
}
