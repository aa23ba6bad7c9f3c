#include "geofence/compare.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "geofence/safety_filter.hpp"

namespace geofence {

namespace {

double quantile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const auto k = static_cast<std::size_t>(std::floor(q * static_cast<double>(v.size() - 1)));
  return v[k];
}

}  // namespace

int count_boundary_sign_flips(const PendulumRun& run, double band) {
  int flips = 0;
  double last = 0.0;
  for (const auto& row : run.rows) {
    if (pendulum_h(Eigen::Vector2d(row.theta, row.theta_dot)) >= band) {
      last = 0.0;
      continue;
    }
    if (row.u == 0.0) continue;
    if (last != 0.0 && (row.u > 0.0) != (last > 0.0)) ++flips;
    last = row.u;
  }
  return flips;
}

FilterRunSummary summarize(PendulumRun run, double band) {
  FilterRunSummary s;
  std::vector<double> times;
  times.reserve(run.rows.size());
  for (const auto& row : run.rows) {
    s.max_abs_theta = std::max(s.max_abs_theta, std::abs(row.theta));
    s.max_abs_theta_dot = std::max(s.max_abs_theta_dot, std::abs(row.theta_dot));
    times.push_back(row.call_seconds * 1e6);
  }
  s.contained = s.max_abs_theta <= 1.0 && s.max_abs_theta_dot <= std::numbers::sqrt2;
  s.median_call_us = quantile(times, 0.5);
  s.p99_call_us = quantile(times, 0.99);
  s.sign_flips = count_boundary_sign_flips(run, band);
  s.infeasible_count = run.infeasible_count;
  s.run = std::move(run);
  return s;
}

ComparisonReport compare_filters(const Scenario& scenario, double boundary_band) {
  ComparisonReport r;
  r.boundary_band = boundary_band;
  r.regulation = summarize(run_pendulum(scenario, PendulumFilterKind::kRegulation), boundary_band);
  r.qp = summarize(run_pendulum(scenario, PendulumFilterKind::kQp), boundary_band);
  const double beta = scenario.pendulum.high_gain_beta;
  const double alpha = scenario.pendulum.high_gain_alpha;
  r.regulation_high_gain =
      summarize(run_pendulum(scenario, PendulumFilterKind::kRegulation, beta, alpha), boundary_band);
  r.qp_high_gain = summarize(run_pendulum(scenario, PendulumFilterKind::kQp, beta, alpha), boundary_band);
  return r;
}

}  // namespace geofence
