#include "geofence/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "geofence/safety_filter.hpp"

namespace geofence {

std::vector<QuadState::Vector> representative_states(const Scenario& scenario, std::size_t n, std::uint64_t seed,
                                                      double max_speed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::uniform_real_distribution<double> tilt(0.0, std::numbers::pi / 3.0);
  const GeofenceBox& box = scenario.geofence;

  std::vector<QuadState::Vector> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    QuadState s;
    for (int k = 0; k < 3; ++k) {
      // cbrt pushes samples toward the faces
      s.position[k] = box.center[k] + std::cbrt(unit(rng)) * (box.half_extents[k] - box.inflation[k]);
    }
    Eigen::Vector3d dir(unit(rng), unit(rng), unit(rng));
    if (dir.norm() < 1e-9) dir = Eigen::Vector3d::UnitX();
    s.velocity = dir.normalized() * (0.5 * (unit(rng) + 1.0) * max_speed);
    Eigen::Vector3d axis(unit(rng), unit(rng), 0.0);
    if (axis.norm() < 1e-9) axis = Eigen::Vector3d::UnitX();
    s.attitude = Eigen::Quaterniond(Eigen::AngleAxisd(tilt(rng), axis.normalized()));
    s.body_rates = Eigen::Vector3d(unit(rng), unit(rng), unit(rng)) * 2.0;
    out.push_back(s.to_vector());
  }
  return out;
}

TimingReport bench_filter(const std::vector<QuadState::Vector>& states, const Scenario& scenario,
                          const BenchOptions& options) {
  TimingReport report;
  report.n_steps = scenario.flow.n_steps();
  if (states.empty()) return report;

  GeofenceShield shield(scenario.geofence, scenario.filter, scenario.vehicle, scenario.flow);
  const QuadCommand u_des{0.8, Eigen::Vector3d(1.0, -1.0, 0.0)};
  double sink = 0.0;
  for (int i = 0; i < options.warmup_calls; ++i) {
    sink += shield.filter(states[static_cast<std::size_t>(i) % states.size()], u_des).lambda;
  }

  const int repeats = std::max(options.repeats, 1);
  std::vector<double> us(states.size() * static_cast<std::size_t>(repeats));
  const std::uint64_t alloc_before = options.allocation_counter ? options.allocation_counter() : 0;
  std::size_t k = 0;
  for (int r = 0; r < repeats; ++r) {
    for (const auto& x : states) {
      const auto t0 = std::chrono::steady_clock::now();
      sink += shield.filter(x, u_des).lambda;
      const auto t1 = std::chrono::steady_clock::now();
      us[k++] = std::chrono::duration<double, std::micro>(t1 - t0).count();
    }
  }
  if (options.allocation_counter) report.allocations = options.allocation_counter() - alloc_before;
  volatile double keep = sink;
  (void)keep;

  report.samples = us.size();
  report.mean_us = std::accumulate(us.begin(), us.end(), 0.0) / static_cast<double>(us.size());
  std::sort(us.begin(), us.end());
  report.median_us = us[us.size() / 2];
  report.p99_us = us[static_cast<std::size_t>(std::floor(0.99 * static_cast<double>(us.size() - 1)))];
  report.max_us = us.back();
  return report;
}

}  // namespace geofence
