#include "geofence/cli.hpp"

#include <atomic>
#include <cmath>
#include <fstream>
#include <iostream>
#include <mutex>
#include <thread>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>

#include "geofence/alloc_probe.hpp"
#include "geofence/bench.hpp"
#include "geofence/cockpit_server.hpp"

namespace geofence::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// NaN and inf are not JSON; they go out as null.
json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json document_header(const char* kind, const Scenario& s) {
  return {{"schema_version", kMetricsSchemaVersion}, {"kind", kind}, {"scenario", s.name}};
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
}

void write_pendulum_csv(std::ostream& out, const PendulumRun& run) {
  out << "t,theta,theta_dot,u_des,u,hI,lambda,call_us,infeasible\n";
  for (const auto& r : run.rows) {
    fmt::print(out, "{:.6f},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.3f},{}\n", r.t, r.theta, r.theta_dot,
               r.u_des, r.u, r.h_I, r.lambda, r.call_seconds * 1e6, r.infeasible ? 1 : 0);
  }
}

struct RunOutcome {
  json doc;
  bool violated = false;
};

// One scenario run. Writes telemetry CSV and metrics.json into `out` when set.
RunOutcome run_one(const Scenario& s, PendulumFilterKind kind, const fs::path& out) {
  RunOutcome o;
  if (!out.empty()) fs::create_directories(out);
  if (s.plant == PlantKind::kQuadrotor) {
    const QuadRunResult r = run_scenario(s);
    const Metrics m = compute_metrics(r.log, s.geofence, s.vehicle.rate_limit);
    o.doc = metrics_json(s, r, m);
    o.violated = r.violated;
    if (!out.empty()) {
      std::ofstream csv(out / "telemetry.csv");
      r.log.write_csv(csv);
    }
  } else {
    const FilterRunSummary sum = summarize(run_pendulum(s, kind), 0.1);
    o.doc = pendulum_json(s, sum, kind);
    o.violated = !sum.contained;
    if (!out.empty()) {
      std::ofstream csv(out / "telemetry.csv");
      write_pendulum_csv(csv, sum.run);
    }
  }
  if (!out.empty()) write_text(out / "metrics.json", o.doc.dump(2) + "\n");
  return o;
}

PendulumFilterKind filter_kind(const std::string& name) {
  return name == "qp" ? PendulumFilterKind::kQp : PendulumFilterKind::kRegulation;
}

std::string csv_cell(const json& v) {
  if (v.is_null()) return "";
  if (v.is_string()) {
    std::string s = v.get<std::string>();
    if (s.find_first_of(",\"") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
    return q + "\"";
  }
  return csv_cell(json(v.dump()));
}

}  // namespace

json metrics_json(const Scenario& s, const QuadRunResult& r, const Metrics& m) {
  json j = document_header("quadrotor_run", s);
  j["violated"] = r.violated;
  j["violation_time"] = r.violated ? num(r.violation_time) : json(nullptr);
  j["wall_seconds"] = r.wall_seconds;
  j["ticks"] = r.log.size();
  j["metrics"] = {{"top_speed", num(m.top_speed)},
                  {"top_speed_kmh", num(m.top_speed * 3.6)},
                  {"peak_descent_speed", num(m.peak_descent_speed)},
                  {"min_h", num(m.min_h)},
                  {"min_face_distance", num(m.min_face_distance)},
                  {"min_lambda", num(m.min_lambda)},
                  {"stop_distance_to_face", num(m.stop_distance_to_face)},
                  {"stop_axis", m.stop_axis},
                  {"stop_side", num(m.stop_side)},
                  {"braking_onset_time", num(m.braking_onset_time)},
                  {"stop_time", num(m.stop_time)},
                  {"max_command_step", num(m.max_command_step)},
                  {"duration", num(m.duration)}};
  return j;
}

json pendulum_json(const Scenario& s, const FilterRunSummary& f, PendulumFilterKind kind) {
  json j = document_header("pendulum_run", s);
  j["filter"] = kind == PendulumFilterKind::kQp ? "qp" : "regulation";
  j["violated"] = !f.contained;
  j["metrics"] = {{"max_abs_theta", num(f.max_abs_theta)},
                  {"max_abs_theta_dot", num(f.max_abs_theta_dot)},
                  {"contained", f.contained},
                  {"median_call_us", num(f.median_call_us)},
                  {"p99_call_us", num(f.p99_call_us)},
                  {"sign_flips", f.sign_flips},
                  {"infeasible_count", f.infeasible_count}};
  return j;
}

json comparison_json(const ComparisonReport& r) {
  auto one = [](const FilterRunSummary& f) {
    return json{{"contained", f.contained},
                {"max_abs_theta", num(f.max_abs_theta)},
                {"max_abs_theta_dot", num(f.max_abs_theta_dot)},
                {"median_call_us", num(f.median_call_us)},
                {"p99_call_us", num(f.p99_call_us)},
                {"sign_flips", f.sign_flips},
                {"infeasible_count", f.infeasible_count}};
  };
  return {{"schema_version", kMetricsSchemaVersion},
          {"kind", "pendulum_comparison"},
          {"boundary_band", r.boundary_band},
          {"timing_ratio", num(r.timing_ratio())},
          {"regulation", one(r.regulation)},
          {"qp", one(r.qp)},
          {"regulation_high_gain", one(r.regulation_high_gain)},
          {"qp_high_gain", one(r.qp_high_gain)}};
}

std::pair<std::string, std::vector<std::string>> parse_grid(const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0) throw ScenarioError("grid '" + spec + "' must look like key=v1,v2,...");
  std::vector<std::string> values;
  std::string cur;
  int depth = 0;
  bool quoted = false;
  for (std::size_t i = eq + 1; i < spec.size(); ++i) {
    const char c = spec[i];
    if (c == '"' && (i == 0 || spec[i - 1] != '\\')) quoted = !quoted;
    if (!quoted && (c == '[' || c == '{')) ++depth;
    if (!quoted && (c == ']' || c == '}')) --depth;
    if (c == ',' && depth == 0 && !quoted) {
      values.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  values.push_back(cur);
  for (const auto& v : values) {
    if (v.empty()) throw ScenarioError("grid '" + spec + "' has an empty value");
  }
  return {spec.substr(0, eq), values};
}

std::vector<std::vector<std::string>> cartesian(
    const std::vector<std::pair<std::string, std::vector<std::string>>>& axes) {
  if (axes.empty()) return {};
  std::vector<std::vector<std::string>> rows{{}};
  for (const auto& [key, values] : axes) {
    std::vector<std::vector<std::string>> next;
    for (const auto& row : rows) {
      for (const auto& v : values) {
        auto r = row;
        r.push_back(key + "=" + v);
        next.push_back(std::move(r));
      }
    }
    rows = std::move(next);
  }
  return rows;
}

fs::path resolve_scenario(const std::string& arg, const std::vector<fs::path>& dirs) {
  if (arg.empty()) throw ScenarioError("no scenario given");
  if (fs::is_regular_file(arg)) return arg;
  if (const auto p = find_scenario(arg, dirs)) return *p;
  std::string ids;
  for (const auto& id : list_scenarios(dirs)) ids += (ids.empty() ? "" : ", ") + id;
  throw ScenarioError("no scenario file or id '" + arg + "' (known ids: " + ids + ")");
}

// ---------------------------------------------------------------------------

namespace {

struct Common {
  std::string scenario;
  std::string out;
  std::vector<std::string> overrides;
  std::vector<std::string> dirs;

  std::vector<fs::path> search() const {
    std::vector<fs::path> d(dirs.begin(), dirs.end());
    d.emplace_back(GEOFENCE_SCENARIO_DIR);
    return d;
  }
};

void add_common(CLI::App* app, Common& c, bool scenario_required) {
  auto* opt = app->add_option("--scenario,-s", c.scenario, "scenario file or id");
  if (scenario_required) opt->required();
  app->add_option("--out,-o", c.out, "output directory");
  app->add_option("--set", c.overrides, "dotted.key=value override, repeatable")->take_all();
  app->add_option("--scenario-dir", c.dirs, "extra directory searched for scenario ids");
}

int cmd_run(const Common& c, const std::string& filter, std::ostream& out, std::ostream& err) {
  const fs::path path = resolve_scenario(c.scenario, c.search());
  std::vector<fs::path> members{path};
  std::ifstream probe(path);
  const json doc = json::parse(probe, nullptr, false);
  const bool suite = !doc.is_discarded() && is_suite_document(doc);
  if (suite) members = load_suite(path);

  bool violated = false;
  json summary = json::array();
  for (const auto& member : members) {
    const Scenario s = load_scenario(member, c.overrides);
    fs::path dir = c.out.empty() ? fs::path() : fs::path(c.out);
    if (suite && !dir.empty()) dir /= s.name;
    const RunOutcome o = run_one(s, filter_kind(filter), dir);
    violated = violated || o.violated;
    summary.push_back(o.doc);
    if (o.violated) err << "scenario '" << s.name << "': safety violation\n";
  }
  out << (suite ? summary.dump(2) : summary[0].dump(2)) << "\n";
  return violated ? kExitViolation : kExitOk;
}

int cmd_sweep(const Common& c, const std::vector<std::string>& grid, int jobs, const std::string& filter,
              std::ostream& out, std::ostream& err) {
  std::vector<std::pair<std::string, std::vector<std::string>>> axes;
  for (const auto& g : grid) axes.push_back(parse_grid(g));
  const auto rows = cartesian(axes);
  const fs::path path = resolve_scenario(c.scenario, c.search());

  // check every override before spending time on runs
  for (const auto& row : rows) {
    auto all = c.overrides;
    all.insert(all.end(), row.begin(), row.end());
    (void)load_scenario(path, all);
  }

  std::vector<RunOutcome> results(rows.size());
  std::vector<std::string> errors(rows.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < rows.size(); i = next++) {
      try {
        auto all = c.overrides;
        all.insert(all.end(), rows[i].begin(), rows[i].end());
        const Scenario s = load_scenario(path, all);
        const fs::path dir = c.out.empty() ? fs::path() : fs::path(c.out) / fmt::format("run_{:03d}", i);
        results[i] = run_one(s, filter_kind(filter), dir);
      } catch (const std::exception& e) {
        errors[i] = e.what();
        results[i].violated = true;
      }
    }
  };
  std::vector<std::thread> pool;
  const int n = std::max(1, std::min<int>(jobs, static_cast<int>(rows.size())));
  for (int t = 1; t < n; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  // one column per grid key, then the outcome, then every metric
  std::vector<std::string> metric_keys;
  for (const auto& r : results) {
    if (!r.doc.contains("metrics")) continue;
    for (const auto& [k, v] : r.doc["metrics"].items()) metric_keys.push_back(k);
    break;
  }
  std::string table = "run";
  for (const auto& [key, values] : axes) table += "," + key;
  table += ",violated,error";
  for (const auto& k : metric_keys) table += "," + k;
  table += "\n";
  json all = json::array();
  bool violated = false;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    table += std::to_string(i);
    for (const auto& kv : rows[i]) table += "," + csv_cell(json(kv.substr(kv.find('=') + 1)));
    table += results[i].violated ? ",1," : ",0,";
    table += csv_cell(json(errors[i]));
    for (const auto& k : metric_keys) {
      const json& m = results[i].doc.contains("metrics") ? results[i].doc["metrics"] : json::object();
      table += "," + (m.contains(k) ? (m[k].is_boolean() ? std::string(m[k] ? "1" : "0") : csv_cell(m[k])) : "");
    }
    table += "\n";
    json entry{{"run", i}, {"overrides", rows[i]}, {"violated", results[i].violated}};
    if (!errors[i].empty()) entry["error"] = errors[i];
    if (results[i].doc.contains("metrics")) entry["metrics"] = results[i].doc["metrics"];
    all.push_back(std::move(entry));
    violated = violated || results[i].violated;
    if (results[i].violated) err << "run " << i << ": violation" << (errors[i].empty() ? "" : " (" + errors[i] + ")") << "\n";
  }
  out << table;
  if (!c.out.empty()) {
    fs::create_directories(c.out);
    write_text(fs::path(c.out) / "sweep.csv", table);
    write_text(fs::path(c.out) / "sweep.json",
               json{{"schema_version", kMetricsSchemaVersion}, {"kind", "sweep"}, {"runs", all}}.dump(2) + "\n");
  }
  return violated ? kExitViolation : kExitOk;
}

int cmd_compare(const Common& c, std::ostream& out) {
  const Scenario s = load_scenario(resolve_scenario(c.scenario.empty() ? "pendulum_compare" : c.scenario, c.search()),
                                   c.overrides);
  if (s.plant != PlantKind::kPendulum) throw ScenarioError("compare needs a pendulum scenario");
  const ComparisonReport r = compare_filters(s);
  const json j = comparison_json(r);
  if (!c.out.empty()) {
    fs::create_directories(c.out);
    write_text(fs::path(c.out) / "compare.json", j.dump(2) + "\n");
  }
  out << j.dump(2) << "\n";
  return r.regulation.contained && r.qp.contained ? kExitOk : kExitViolation;
}

int cmd_bench(const Common& c, int states, std::uint64_t seed, int repeats, std::ostream& out) {
  const Scenario s = c.scenario.empty()
                         ? parse_scenario(default_scenario_document(PlantKind::kQuadrotor), c.overrides)
                         : load_scenario(resolve_scenario(c.scenario, c.search()), c.overrides);
  if (s.plant != PlantKind::kQuadrotor) throw ScenarioError("bench needs a quadrotor scenario");
  BenchOptions opt;
  opt.repeats = repeats;
  opt.allocation_counter = alloc_probe::thread_allocations;
  const TimingReport t = bench_filter(representative_states(s, static_cast<std::size_t>(states), seed), s, opt);
  const json j{{"schema_version", kMetricsSchemaVersion},
               {"kind", "bench"},
               {"scenario", s.name},
               {"samples", t.samples},
               {"rollout_samples", t.n_steps + 1},
               {"median_us", t.median_us},
               {"p99_us", t.p99_us},
               {"mean_us", t.mean_us},
               {"max_us", t.max_us},
               {"allocations", t.allocations ? json(*t.allocations) : json(nullptr)},
               {"zero_allocations", t.allocations && *t.allocations == 0}};
  if (!c.out.empty()) {
    fs::create_directories(c.out);
    write_text(fs::path(c.out) / "bench.json", j.dump(2) + "\n");
  }
  out << j.dump(2) << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Geofence shield: scenario runs, sweeps, benchmarks and the cockpit server", "geofence"};
  app.require_subcommand(1);
  Common common;
  std::string filter = "regulation";

  auto* run = app.add_subcommand("run", "run a scenario or suite, write telemetry.csv and metrics.json");
  add_common(run, common, true);
  run->add_option("--filter", filter, "pendulum filter")->check(CLI::IsMember({"regulation", "qp"}));

  std::vector<std::string> grid;
  int jobs = 1;
  auto* sweep = app.add_subcommand("sweep", "cartesian parameter sweep, one run per grid point");
  add_common(sweep, common, true);
  sweep->add_option("--grid", grid, "key=v1,v2,... (repeatable)")->take_all();
  sweep->add_option("--jobs,-j", jobs, "parallel runs")->check(CLI::PositiveNumber);
  sweep->add_option("--filter", filter, "pendulum filter")->check(CLI::IsMember({"regulation", "qp"}));

  auto* compare = app.add_subcommand("compare", "pendulum: regulation filter vs QP filter");
  add_common(compare, common, false);

  int states = 2000, repeats = 1;
  std::uint64_t seed = 7;
  auto* bench = app.add_subcommand("bench", "time the filter on representative states");
  add_common(bench, common, false);
  bench->add_option("--states", states, "number of states")->check(CLI::PositiveNumber);
  bench->add_option("--seed", seed, "state sampler seed");
  bench->add_option("--repeats", repeats, "passes over the states")->check(CLI::PositiveNumber);

  cockpit::ServerOptions serve_opt;
  serve_opt.handle_signals = true;
  std::string assets;
  std::vector<std::string> serve_dirs;
  auto* serve = app.add_subcommand("serve", "cockpit websocket + static file server");
  serve->add_option("--port,-p", serve_opt.port, "listen port, 0 picks one");
  serve->add_option("--address", serve_opt.address, "listen address");
  serve->add_option("--assets", assets, "static asset directory");
  serve->add_option("--scenario-dir", serve_dirs, "extra directory searched for scenario ids");
  serve->add_option("--telemetry-hz", serve_opt.telemetry_hz, "telemetry frame rate")->check(CLI::PositiveNumber);
  serve->add_option("--display-latency-ms", serve_opt.display_latency_ms, "artificial telemetry delay")
      ->check(CLI::NonNegativeNumber);

  auto* list = app.add_subcommand("list", "list scenario ids");
  list->add_option("--scenario-dir", common.dirs, "extra directory searched for scenario ids");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return kExitInvalid;
  }

  try {
    if (*run) return cmd_run(common, filter, out, err);
    if (*sweep) return cmd_sweep(common, grid, jobs, filter, out, err);
    if (*compare) return cmd_compare(common, out);
    if (*bench) return cmd_bench(common, states, seed, repeats, out);
    if (*list) {
      for (const auto& id : list_scenarios(common.search())) out << id << "\n";
      return kExitOk;
    }
    if (*serve) {
      serve_opt.assets = assets;
      for (const auto& d : serve_dirs) serve_opt.scenario_dirs.emplace_back(d);
      serve_opt.scenario_dirs.emplace_back(GEOFENCE_SCENARIO_DIR);
      cockpit::CockpitServer server(serve_opt);
      out << "cockpit listening on http://" << serve_opt.address << ":" << server.port() << "/" << std::endl;
      server.run();
      out << "cockpit stopped" << std::endl;
      return kExitOk;
    }
  } catch (const ScenarioRejected& e) {
    err << "rejected: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const ScenarioError& e) {
    err << "invalid scenario: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitInvalid;
  }
  return kExitInvalid;
}

}  // namespace geofence::cli
