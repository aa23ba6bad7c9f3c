#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "geofence/scenario.hpp"
#include "geofence/vehicle_models.hpp"

namespace geofence {

struct TimingReport {
  std::size_t samples = 0;
  int n_steps = 0;
  double median_us = 0.0;
  double p99_us = 0.0;
  double mean_us = 0.0;
  double max_us = 0.0;
  /// Heap allocations over the timed calls; empty when no counter was given.
  std::optional<std::uint64_t> allocations;
};

struct BenchOptions {
  int warmup_calls = 200;
  int repeats = 1;  // passes over the sample set
  /// Per-thread allocation counter, e.g. alloc_probe::thread_allocations.
  std::function<std::uint64_t()> allocation_counter;
};

/// States spread over the scenario geofence: positions inside the box with a
/// bias toward the faces, speeds up to `max_speed` and tilts up to 60 deg.
std::vector<QuadState::Vector> representative_states(const Scenario& scenario, std::size_t n, std::uint64_t seed,
                                                     double max_speed = 30.0);

/// Wall time of filter_command per call on the scenario's filter setup.
TimingReport bench_filter(const std::vector<QuadState::Vector>& states, const Scenario& scenario,
                          const BenchOptions& options = {});

}  // namespace geofence
