#include <cmath>
#include <filesystem>
#include <sstream>

#include <doctest.h>

#include "geofence/alloc_probe.hpp"
#include "geofence/bench.hpp"
#include "geofence/compare.hpp"
#include "geofence/sim_harness.hpp"

using namespace geofence;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

Scenario shipped(const std::string& id, const std::vector<std::string>& overrides = {}) {
  return load_scenario(*find_scenario(id, {fs::path(GEOFENCE_SCENARIO_DIR)}), overrides);
}

json hover_doc(double duration) {
  const QuadParams qp;
  return json{{"schema_version", 1},
              {"name", "hover"},
              {"duration", duration},
              {"geofence", {{"center", {0, 0, 0}}, {"half_extents", {30, 30, 30}}}},
              {"filter", {{"backup_set_weight", 1e4}}},
              {"pilot", {{"segments", json::array({json{{"throttle", hover_throttle(qp)}}})}}}};
}

TelemetryRow row_at(double t, const Eigen::Vector3d& p, const Eigen::Vector3d& v, double lambda) {
  TelemetryRow r;
  r.t = t;
  QuadState s;
  s.position = p;
  s.velocity = v;
  r.state = s.to_vector();
  r.lambda = lambda;
  return r;
}

}  // namespace

TEST_CASE("zero duration gives one row") {
  const QuadRunResult r = run_scenario(parse_scenario(hover_doc(0.0)));
  CHECK(r.log.size() == 1);
  CHECK_FALSE(r.violated);
}

TEST_CASE("hover deep inside stays put with lambda near 1") {
  const QuadRunResult r = run_scenario(parse_scenario(hover_doc(2.0)));
  CHECK(r.log.size() == 801);
  for (const auto& row : r.log.rows()) {
    CHECK(row.state.segment<3>(quad_index::kPos).norm() < 1e-9);
    CHECK(row.lambda > 0.999);
  }
}

TEST_CASE("log time strictly increases, one row per tick, CSV has the fixed header") {
  const QuadRunResult r = run_scenario(parse_scenario(hover_doc(0.05)));
  CHECK(r.log.size() == 21);
  for (std::size_t k = 1; k < r.log.size(); ++k) {
    CHECK(r.log.rows()[k].t == doctest::Approx(k * 0.0025));
  }
  TelemetryLog bad;
  bad.append(row_at(1.0, {}, {}, 1.0));
  CHECK_THROWS_AS(bad.append(row_at(1.0, {}, {}, 1.0)), std::logic_error);

  std::ostringstream csv;
  r.log.write_csv(csv);
  std::istringstream lines(csv.str());
  std::string header, first;
  std::getline(lines, header);
  std::getline(lines, first);
  CHECK(header ==
        "t,px,py,pz,qw,qx,qy,qz,vx,vy,vz,wx,wy,wz,throttle_des,wdx_des,wdy_des,wdz_des,throttle_cmd,wx_cmd,wy_cmd,"
        "wz_cmd,hI,lambda,vperp");
  CHECK(std::count(first.begin(), first.end(), ',') == 24);
}

TEST_CASE("start outside the invariant set is rejected unless flagged") {
  json doc = hover_doc(1.0);
  doc["initial_state"] = {{"position", {25, 0, 0}}, {"velocity", {30, 0, 0}}};
  CHECK_THROWS_AS(run_scenario(parse_scenario(doc)), ScenarioRejected);
  doc["allow_outside_invariant_set"] = true;
  CHECK_NOTHROW(run_scenario(parse_scenario(doc)));
}

TEST_CASE("runs are bit-identical") {
  const Scenario s = shipped("horizontal_sprint", {"duration=3.0"});
  const QuadRunResult a = run_scenario(s);
  const QuadRunResult b = run_scenario(s);
  REQUIRE(a.log.size() == b.log.size());
  for (std::size_t k = 0; k < a.log.size(); ++k) {
    CHECK(a.log.rows()[k].state == b.log.rows()[k].state);
    CHECK(a.log.rows()[k].u_cmd == b.log.rows()[k].u_cmd);
  }
}

TEST_CASE("metrics on synthetic logs") {
  GeofenceBox box;
  box.half_extents = Eigen::Vector3d::Constant(10);
  TelemetryLog constant;
  for (int k = 0; k < 5; ++k) constant.append(row_at(k * 0.1, {1, 2, 3}, {3, 4, 0}, 0.7));
  const Metrics m = compute_metrics(constant, box, 10.0);
  CHECK(m.top_speed == doctest::Approx(5.0));
  CHECK(m.min_lambda == 0.7);
  CHECK(m.min_h == doctest::Approx(91.0));
  CHECK(m.min_face_distance == doctest::Approx(7.0));
  CHECK(m.max_command_step == 0.0);

  TelemetryLog crossing;
  crossing.append(row_at(0.0, {9, 0, 0}, {5, 0, 0}, 1.0));
  crossing.append(row_at(0.1, {10.5, 0, 0}, {5, 0, 0}, 1.0));
  const Metrics c = compute_metrics(crossing, box, 10.0);
  CHECK(c.min_h < 0.0);
  CHECK(c.min_face_distance < 0.0);

  // braking toward +x while drifting toward nothing else
  TelemetryLog brake;
  brake.append(row_at(0.0, {5, 0, 0}, {4, 0.5, 0}, 1.0));
  brake.append(row_at(0.1, {6, 0, 0}, {3, 0.5, 0}, 0.5));
  brake.append(row_at(0.2, {7, 0, 0}, {1, 0.5, 0}, 0.2));
  brake.append(row_at(0.3, {7.5, 0, 0}, {0.05, 0.5, 0}, 0.1));
  const Metrics b = compute_metrics(brake, box, 10.0);
  CHECK(b.braking_onset_time == doctest::Approx(0.1));
  CHECK(b.stop_axis == 0);
  CHECK(b.stop_distance_to_face == doctest::Approx(2.5));
  CHECK_THROWS(compute_metrics(TelemetryLog{}, box, 10.0));
}

TEST_CASE("radio loss: desired input drops to zero after the timeout") {
  PilotLink link(0.1);
  const QuadCommand c{0.6, Eigen::Vector3d(1, 2, 3)};
  CHECK(link.update(0.0, c) == c);
  CHECK(link.update(0.0975, std::nullopt) == c);
  CHECK(link.update(0.1, std::nullopt) == QuadCommand{});
  CHECK(link.update(0.2, c) == c);
  CHECK(PilotLink(0.1).update(0.0, std::nullopt) == QuadCommand{});
}

TEST_CASE("shipped quadrotor scenarios stay inside the geofence") {
  for (const auto& id : list_scenarios({fs::path(GEOFENCE_SCENARIO_DIR)})) {
    if (id == "four_flight_reliability" || id == "pendulum_compare") continue;
    CAPTURE(id);
    const Scenario s = shipped(id);
    const QuadRunResult r = run_scenario(s);
    const Metrics m = compute_metrics(r.log, s.geofence, s.vehicle.rate_limit);
    CHECK_FALSE(r.violated);
    CHECK(m.min_h >= 0.0);
    CHECK((m.min_h >= 0.0) == (m.min_face_distance >= 0.0));
  }
}

TEST_CASE("smaller beta brakes earlier") {
  const Metrics soft = [] {
    const Scenario s = shipped("horizontal_sprint", {"filter.beta=0.02"});
    return compute_metrics(run_scenario(s).log, s.geofence, s.vehicle.rate_limit);
  }();
  const Metrics hard = [] {
    const Scenario s = shipped("horizontal_sprint");
    return compute_metrics(run_scenario(s).log, s.geofence, s.vehicle.rate_limit);
  }();
  CHECK(soft.braking_onset_time < hard.braking_onset_time);
  CHECK(soft.top_speed < hard.top_speed);
}

TEST_CASE("engagements and retreat") {
  const Scenario s = shipped("reliability_x_forward");
  const QuadRunResult r = run_scenario(s);
  const auto es = find_engagements(r.log, s.geofence, 0.5);
  CHECK(es.size() == 3);
  for (const auto& e : es) {
    CHECK(e.axis == 0);
    CHECK(e.side == 1.0);
    CHECK(e.retreat_distance - e.closest_distance >= 5.0);
  }
}

TEST_CASE("pendulum: both filters contain 2 rad/s^2, larger beta gets closer to the boundary") {
  const Scenario s = shipped("pendulum_compare");
  double prev = 0.0;
  for (double beta : {1.0, 5.0, 20.0}) {
    const FilterRunSummary r = summarize(run_pendulum(s, PendulumFilterKind::kRegulation, beta), 0.1);
    CHECK(r.contained);
    CHECK(r.max_abs_theta > prev);
    prev = r.max_abs_theta;
  }
  CHECK(summarize(run_pendulum(s, PendulumFilterKind::kQp), 0.1).contained);
}

TEST_CASE("sign flips near the boundary") {
  PendulumRun run;
  for (double u : {1.0, -1.0, 0.0, -2.0, 3.0}) run.rows.push_back(PendulumRow{.theta = 0.99, .u = u});
  CHECK(count_boundary_sign_flips(run, 0.1) == 2);
  run.rows[2].theta = 0.0;  // leaves the band: chain resets
  CHECK(count_boundary_sign_flips(run, 0.1) == 2);
  run.rows[1].theta = 0.0;
  CHECK(count_boundary_sign_flips(run, 0.1) == 1);
}

TEST_CASE("bench: empty input, allocation count, cost linear in n_steps") {
  const Scenario s = parse_scenario(json{{"schema_version", 1}, {"name", "b"}});
  CHECK(bench_filter({}, s).samples == 0);

  const auto states = representative_states(s, 300, 5);
  BenchOptions opt;
  opt.allocation_counter = alloc_probe::thread_allocations;
  opt.repeats = 3;
  const TimingReport base = bench_filter(states, s, opt);
  REQUIRE(base.allocations);
  CHECK(*base.allocations == 0);
  const Scenario twice = parse_scenario(json{{"schema_version", 1}, {"name", "b"}}, {"flow.horizon=6.0"});
  const TimingReport doubled = bench_filter(states, twice, opt);
  CHECK(doubled.n_steps == 2 * base.n_steps);
  const double ratio = doubled.median_us / base.median_us;
  CHECK(ratio > 1.5);
  CHECK(ratio < 2.6);
}
