#include "geofence/sim_harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "geofence/cbf_qp_baseline.hpp"

namespace geofence {

QuadState::Vector integrate_quad(const QuadState::Vector& x, const QuadCommand& u, const QuadParams& p, double dt) {
  QuadState::Vector next = rk4_step(x, [&](const QuadState::Vector& s) { return quad_deriv(s, u, p); }, dt);
  QuadrotorPlant::project(next);
  return next;
}

double command_distance(const QuadCommand& a, const QuadCommand& b, double rate_limit) {
  const double rates = (a.body_rates - b.body_rates).cwiseAbs().maxCoeff() / rate_limit;
  return std::max(std::abs(a.throttle - b.throttle), rates);
}

QuadSimulation::QuadSimulation(const Scenario& scenario)
    : shield_(scenario.geofence, scenario.filter, scenario.vehicle, scenario.flow),
      link_(scenario.pilot.input_timeout),
      x_(scenario.initial_quad.to_vector()),
      control_dt_(scenario.control_dt),
      substeps_(scenario.physics_substeps()),
      physics_dt_(scenario.physics_dt) {
  initial_h_I_ = shield_.implicit_barrier(x_);
  if (!(initial_h_I_ > 0.0) && !scenario.allow_outside_invariant_set) {
    throw ScenarioRejected(fmt::format(
        "scenario '{}': initial state is outside the invariant set (h_I = {:.6g}); set "
        "allow_outside_invariant_set to run it anyway",
        scenario.name, initial_h_I_));
  }
}

TelemetryRow QuadSimulation::evaluate(const std::optional<QuadCommand>& fresh) {
  TelemetryRow row;
  row.t = time();
  row.state = x_;
  row.u_des = link_.update(row.t, fresh);
  const FilterOutput out = shield_.filter(x_, row.u_des);
  row.u_cmd = out.u_cmd;
  row.h_I = out.h_I;
  row.lambda = out.lambda;
  row.v_perp = out.v_perp;
  return row;
}

void QuadSimulation::advance(const QuadCommand& u_cmd) {
  for (int i = 0; i < substeps_; ++i) x_ = integrate_quad(x_, u_cmd, shield_.quad_params(), physics_dt_);
  ++tick_;
}

QuadRunResult run_scenario(const Scenario& scenario, QuadPilotSource& pilot) {
  if (scenario.plant != PlantKind::kQuadrotor) throw ScenarioError("run_scenario: not a quadrotor scenario");
  const auto start = std::chrono::steady_clock::now();
  QuadSimulation sim(scenario);
  QuadRunResult result;
  const int ticks = scenario.control_ticks();
  result.log.reserve(static_cast<std::size_t>(ticks) + 1);

  for (int k = 0; k <= ticks; ++k) {
    const TelemetryRow row = sim.evaluate(pilot.poll(sim.time(), sim.state()));
    result.log.append(row);
    if (geofence_h(row.state.segment<3>(quad_index::kPos), scenario.geofence) < 0.0) {
      result.violated = true;
      result.violation_time = row.t;
      break;
    }
    if (k < ticks) sim.advance(row.u_cmd);
  }
  result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

QuadRunResult run_scenario(const Scenario& scenario) {
  ScriptedQuadPilot pilot(scenario.pilot, scenario.vehicle);
  return run_scenario(scenario, pilot);
}

Metrics compute_metrics(const TelemetryLog& log, const GeofenceBox& box, double rate_limit, double braking_lambda) {
  Metrics m;
  if (log.empty()) throw std::invalid_argument("compute_metrics: empty log");
  m.min_h = std::numeric_limits<double>::infinity();
  m.min_face_distance = std::numeric_limits<double>::infinity();
  m.min_lambda = std::numeric_limits<double>::infinity();
  m.stop_distance_to_face = std::numeric_limits<double>::quiet_NaN();
  m.braking_onset_time = std::numeric_limits<double>::quiet_NaN();
  m.stop_time = std::numeric_limits<double>::quiet_NaN();
  m.duration = log.back().t - log.rows().front().t;

  std::optional<std::size_t> onset;
  int axis = -1;
  double side = 1.0;
  const auto& rows = log.rows();
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto& r = rows[k];
    const Eigen::Vector3d p = r.state.segment<3>(quad_index::kPos);
    const Eigen::Vector3d v = r.state.segment<3>(quad_index::kVel);
    m.top_speed = std::max(m.top_speed, v.norm());
    m.peak_descent_speed = std::max(m.peak_descent_speed, -v.z());
    m.min_h = std::min(m.min_h, geofence_h(p, box));
    m.min_face_distance = std::min(m.min_face_distance, face_distance(p, box));
    m.min_lambda = std::min(m.min_lambda, r.lambda);
    if (k > 0) m.max_command_step = std::max(m.max_command_step, command_distance(r.u_cmd, rows[k - 1].u_cmd, rate_limit));

    if (!onset && r.lambda < braking_lambda) {
      onset = k;
      m.braking_onset_time = r.t;
      // face with the shortest time to contact
      double best = std::numeric_limits<double>::infinity();
      for (int i = 0; i < 3; ++i) {
        for (const double s : {1.0, -1.0}) {
          const double gap = box.half_extents[i] - s * (p[i] - box.center[i]);
          const double closing = s * v[i];
          const double ttc = closing > 1e-9 ? gap / closing : std::numeric_limits<double>::infinity();
          if (ttc < best) {
            best = ttc;
            axis = i;
            side = s;
          }
        }
      }
      if (axis < 0) {
        axis = active_axis(p, box);
        side = p[axis] >= box.center[axis] ? 1.0 : -1.0;
      }
    }
    if (onset && std::isnan(m.stop_time) && side * v[axis] < 0.1) {
      m.stop_time = r.t;
      m.stop_axis = axis;
      m.stop_side = side;
      m.stop_distance_to_face = box.half_extents[axis] - side * (p[axis] - box.center[axis]);
    }
  }
  return m;
}

std::vector<Engagement> find_engagements(const TelemetryLog& log, const GeofenceBox& box, double lambda_threshold) {
  std::vector<Engagement> out;
  const auto& rows = log.rows();
  auto distance_from = [&](std::size_t k, int axis, double side) {
    const double p = rows[k].state[quad_index::kPos + axis];
    return box.half_extents[axis] - side * (p - box.center[axis]);
  };

  std::size_t k = 0;
  while (k < rows.size()) {
    if (rows[k].lambda >= lambda_threshold) {
      ++k;
      continue;
    }
    Engagement e;
    e.begin = k;
    while (k < rows.size() && rows[k].lambda < lambda_threshold) ++k;
    e.end = k;
    // The face is the one the drone got closest to during the engagement.
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = e.begin; j < e.end; ++j) {
      const Eigen::Vector3d p = rows[j].state.segment<3>(quad_index::kPos);
      const double d = face_distance(p, box);
      if (d < best) {
        best = d;
        e.axis = active_axis(p, box);
        e.side = p[e.axis] >= box.center[e.axis] ? 1.0 : -1.0;
      }
    }
    e.closest_distance = best;
    out.push_back(e);
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::size_t stop = i + 1 < out.size() ? out[i + 1].begin : rows.size();
    double far = out[i].closest_distance;
    for (std::size_t j = out[i].begin; j < stop; ++j) far = std::max(far, distance_from(j, out[i].axis, out[i].side));
    out[i].retreat_distance = far;
  }
  return out;
}

PendulumRun run_pendulum(const Scenario& scenario, PendulumFilterKind kind, std::optional<double> beta,
                         std::optional<double> alpha) {
  if (scenario.plant != PlantKind::kPendulum) throw ScenarioError("run_pendulum: not a pendulum scenario");
  PendulumFilterParams params = scenario.pendulum.filter;
  if (beta) params.beta = *beta;
  params.validate();
  QPBaselineParams qp;
  qp.alpha = alpha.value_or(scenario.pendulum.alpha);
  qp.fd_step = scenario.pendulum.fd_step;
  qp.input_bounds = scenario.pendulum.input_bounds;
  qp.validate();

  TrajectoryBuffer<2> scratch(params.flow.n_steps());
  Eigen::Vector2d x = scenario.initial_pendulum.to_vector();

  const double h0 = pendulum_implicit_barrier(x, params, scratch);
  if (!(h0 > 0.0) && !scenario.allow_outside_invariant_set) {
    throw ScenarioRejected(fmt::format("scenario '{}': initial state is outside the invariant set (h_I = {:.6g})",
                                       scenario.name, h0));
  }

  PendulumRun run;
  const int ticks = scenario.control_ticks();
  const int substeps = scenario.physics_substeps();
  run.rows.reserve(static_cast<std::size_t>(ticks) + 1);
  const PendulumPlant plant;

  for (int k = 0; k <= ticks; ++k) {
    PendulumRow row;
    row.t = k * scenario.control_dt;
    row.theta = x[0];
    row.theta_dot = x[1];
    row.u_des = scripted_pendulum_input(scenario.pilot, row.t);

    const auto t0 = std::chrono::steady_clock::now();
    if (kind == PendulumFilterKind::kRegulation) {
      const PendulumFilterOutput out = pendulum_filter(x, row.u_des, params, scratch);
      row.u = out.u;
      row.h_I = out.h_I;
      row.lambda = out.lambda;
    } else {
      const QPFilterOutput out = qp_filter(x, row.u_des, params, qp, scratch);
      row.u = out.u;
      row.h_I = out.h_I;
      row.infeasible = out.infeasible;
      run.infeasible_count += out.infeasible ? 1 : 0;
    }
    row.call_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    run.rows.push_back(row);
    if (k == ticks) break;

    const double u = row.u;
    for (int i = 0; i < substeps; ++i) {
      x = rk4_step(x, [&](const Eigen::Vector2d& s) { return plant.deriv(s, u); }, scenario.physics_dt);
    }
  }
  return run;
}

}  // namespace geofence
