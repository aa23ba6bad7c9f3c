#pragma once

#include "geofence/scenario.hpp"
#include "geofence/sim_harness.hpp"

namespace geofence {

struct FilterRunSummary {
  PendulumRun run;
  double max_abs_theta = 0.0;
  double max_abs_theta_dot = 0.0;
  bool contained = false;  // |theta| <= 1 and |theta_dot| <= sqrt(2) on every row
  double median_call_us = 0.0;
  double p99_call_us = 0.0;
  int sign_flips = 0;
  int infeasible_count = 0;
};

/// Sign changes of the applied input over rows whose safe-set value
/// h(theta, theta_dot) is below `band`. Rows outside the band reset the count
/// chain, zeros are skipped.
int count_boundary_sign_flips(const PendulumRun& run, double band);

FilterRunSummary summarize(PendulumRun run, double band);

struct ComparisonReport {
  double boundary_band = 0.0;
  FilterRunSummary regulation;
  FilterRunSummary qp;
  FilterRunSummary regulation_high_gain;
  FilterRunSummary qp_high_gain;

  /// median regulation call time / median QP call time at the default gains
  double timing_ratio() const { return regulation.median_call_us / qp.median_call_us; }
};

/// Runs the pendulum scenario with both filters at the scenario gains and at
/// its high-gain setting.
ComparisonReport compare_filters(const Scenario& scenario, double boundary_band = 0.1);

}  // namespace geofence
