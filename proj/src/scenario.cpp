#include "geofence/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace geofence {

using nlohmann::json;

namespace {

json vec3(const Eigen::Vector3d& v) { return json::array({v.x(), v.y(), v.z()}); }

Eigen::Vector3d read_vec3(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 3) throw ScenarioError(where + ": expected an array of 3 numbers");
  Eigen::Vector3d v;
  for (int i = 0; i < 3; ++i) {
    if (!j[static_cast<std::size_t>(i)].is_number()) throw ScenarioError(where + ": expected numbers");
    v[i] = j[static_cast<std::size_t>(i)].get<double>();
  }
  return v;
}

double read_number(const json& obj, const char* key, const std::string& where) {
  const auto& j = obj.at(key);
  if (!j.is_number()) throw ScenarioError(where + "." + key + ": expected a number");
  return j.get<double>();
}

bool read_bool(const json& obj, const char* key, const std::string& where) {
  const auto& j = obj.at(key);
  if (!j.is_boolean()) throw ScenarioError(where + "." + key + ": expected true/false");
  return j.get<bool>();
}

std::string read_string(const json& obj, const char* key, const std::string& where) {
  const auto& j = obj.at(key);
  if (!j.is_string()) throw ScenarioError(where + "." + key + ": expected a string");
  return j.get<std::string>();
}

bool same_kind(const json& a, const json& b) {
  if (a.is_number() && b.is_number()) return true;
  return a.type() == b.type();
}

// Recursively lays `user` over `defaults`. Objects merge key by key and
// reject keys the defaults do not have; everything else is replaced.
void merge_into(json& defaults, const json& user, const std::string& where) {
  if (!user.is_object()) throw ScenarioError(where + ": expected an object");
  for (const auto& [key, value] : user.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    if (!defaults.contains(key)) throw ScenarioError("unknown key '" + path + "'");
    json& slot = defaults[key];
    if (slot.is_object()) {
      merge_into(slot, value, path);
    } else if (slot.is_null() || value.is_null() || same_kind(slot, value)) {
      slot = value;
    } else {
      throw ScenarioError(path + ": expected " + std::string(slot.type_name()) + ", got " + value.type_name());
    }
  }
}

json default_pilot() {
  PilotProfile p;
  return {{"external", p.external},
          {"input_timeout", p.input_timeout},
          {"k_v", p.k_v},
          {"k_q", p.k_q},
          {"max_tilt_deg", p.max_tilt_deg},
          {"segments", json::array()}};
}

PilotSegment parse_segment(const json& j, PlantKind plant, const std::string& where) {
  static const std::set<std::string> kQuadKeys{"until", "mode", "throttle", "body_rates", "target"};
  static const std::set<std::string> kPendulumKeys{"until", "mode", "u"};
  const auto& allowed = plant == PlantKind::kQuadrotor ? kQuadKeys : kPendulumKeys;
  if (!j.is_object()) throw ScenarioError(where + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    if (!allowed.contains(key)) throw ScenarioError("unknown key '" + where + "." + key + "'");
  }
  PilotSegment s;
  if (j.contains("until")) s.until = read_number(j, "until", where);
  const std::string mode = j.contains("mode") ? read_string(j, "mode", where) : "command";
  if (mode == "command") {
    s.mode = PilotMode::kCommand;
  } else if (mode == "velocity" && plant == PlantKind::kQuadrotor) {
    s.mode = PilotMode::kVelocity;
  } else if (mode == "silent") {
    s.mode = PilotMode::kSilent;
  } else {
    throw ScenarioError(where + ".mode: unsupported mode '" + mode + "'");
  }
  if (plant == PlantKind::kQuadrotor) {
    if (j.contains("throttle")) s.command.throttle = read_number(j, "throttle", where);
    if (j.contains("body_rates")) s.command.body_rates = read_vec3(j.at("body_rates"), where + ".body_rates");
    if (j.contains("target")) s.target_velocity = read_vec3(j.at("target"), where + ".target");
    if (s.mode == PilotMode::kVelocity && !j.contains("target")) {
      throw ScenarioError(where + ": velocity segments need a target");
    }
  } else if (j.contains("u")) {
    s.pendulum_input = read_number(j, "u", where);
  }
  return s;
}

}  // namespace

int Scenario::control_ticks() const { return static_cast<int>(std::lround(duration / control_dt)); }

int Scenario::physics_substeps() const { return static_cast<int>(std::lround(control_dt / physics_dt)); }

json default_scenario_document(PlantKind plant) {
  json doc;
  doc["schema_version"] = kScenarioSchemaVersion;
  doc["name"] = "unnamed";
  doc["description"] = "";
  doc["duration"] = 10.0;
  doc["control_dt"] = 0.0025;
  doc["physics_dt"] = 0.0005;
  doc["allow_outside_invariant_set"] = false;
  doc["pilot"] = default_pilot();

  if (plant == PlantKind::kQuadrotor) {
    doc["plant"] = "quadrotor";
    const QuadParams v;
    doc["vehicle"] = {{"mass", v.mass},
                      {"gravity", v.gravity},
                      {"rate_gain", v.rate_gain},
                      {"rate_gain_model", "constant"},
                      {"thrust_poly", json::array({v.thrust_poly[0], v.thrust_poly[1], v.thrust_poly[2]})},
                      {"rate_limit", v.rate_limit},
                      {"drag", v.drag}};
    const GeofenceBox b;
    doc["geofence"] = {{"center", vec3(b.center)}, {"half_extents", vec3(b.half_extents)},
                       {"inflation", vec3(b.inflation)}};
    const FilterParams f;
    doc["filter"] = {{"beta", f.beta},
                     {"delta", f.delta},
                     {"epsilon", f.epsilon},
                     {"v_floor", f.v_floor},
                     {"k_v", f.k_v},
                     {"k_q", f.k_q},
                     {"v_backup_max", f.v_backup_max},
                     {"backup_set_weight", f.backup_set_weight},
                     {"face_blend", f.face_blend},
                     {"scaled_lambda", f.scaled_lambda},
                     {"lookahead", true}};
    const FlowConfig c;
    doc["flow"] = {{"horizon", c.horizon}, {"dt", c.dt}};
    doc["initial_state"] = {{"position", json::array({0.0, 0.0, 0.0})},
                            {"attitude", json::array({1.0, 0.0, 0.0, 0.0})},
                            {"velocity", json::array({0.0, 0.0, 0.0})},
                            {"body_rates", json::array({0.0, 0.0, 0.0})}};
  } else {
    doc["plant"] = "pendulum";
    const PendulumSetup p;
    doc["pendulum"] = {{"gain", json::array({p.filter.gain[0], p.filter.gain[1]})},
                       {"beta", p.filter.beta},
                       {"delta", p.filter.delta},
                       {"backup_set_weight", p.filter.backup_set_weight},
                       {"horizon", p.filter.flow.horizon},
                       {"dt", p.filter.flow.dt},
                       {"alpha", p.alpha},
                       {"fd_step", p.fd_step},
                       {"input_bounds", nullptr},
                       {"filter", "regulation"},
                       {"high_gain", {{"beta", p.high_gain_beta}, {"alpha", p.high_gain_alpha}}}};
    doc["initial_state"] = {{"theta", 0.0}, {"theta_dot", 0.0}};
  }
  return doc;
}

void apply_override(json& document, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ScenarioError("override '" + assignment + "' must look like key.path=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);

  json* node = &document;
  std::stringstream parts(key);
  std::string part;
  while (std::getline(parts, part, '.')) {
    if (node->is_object() && node->contains(part)) {
      node = &(*node)[part];
    } else if (node->is_array() && !part.empty() && std::all_of(part.begin(), part.end(), ::isdigit) &&
               std::stoul(part) < node->size()) {
      node = &(*node)[std::stoul(part)];
    } else {
      throw ScenarioError("unknown key '" + key + "'");
    }
  }

  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;  // bare strings
  }
  if (node->is_object()) throw ScenarioError("override '" + key + "' names a section, not a value");
  if (!node->is_null() && !same_kind(*node, value)) {
    throw ScenarioError("override '" + key + "': expected " + std::string(node->type_name()) + ", got " +
                        value.type_name());
  }
  if (node->is_array() && node->size() != value.size()) {
    throw ScenarioError("override '" + key + "': expected " + std::to_string(node->size()) + " elements");
  }
  *node = value;
}

Scenario parse_scenario(const json& user, const std::vector<std::string>& overrides) {
  if (!user.is_object()) throw ScenarioError("scenario: expected a JSON object");
  if (!user.contains("schema_version") || !user["schema_version"].is_number_integer()) {
    throw ScenarioError("scenario: missing integer schema_version");
  }
  if (user["schema_version"].get<int>() != kScenarioSchemaVersion) {
    throw ScenarioError("scenario: unsupported schema_version " + user["schema_version"].dump() + " (expected " +
                        std::to_string(kScenarioSchemaVersion) + ")");
  }
  const std::string plant_name = user.value("plant", std::string("quadrotor"));
  PlantKind plant;
  if (plant_name == "quadrotor") {
    plant = PlantKind::kQuadrotor;
  } else if (plant_name == "pendulum") {
    plant = PlantKind::kPendulum;
  } else {
    throw ScenarioError("scenario: unknown plant '" + plant_name + "'");
  }

  json doc = default_scenario_document(plant);
  merge_into(doc, user, "");
  for (const auto& o : overrides) apply_override(doc, o);

  Scenario s;
  s.plant = plant;
  s.document = doc;
  s.name = read_string(doc, "name", "scenario");
  s.duration = read_number(doc, "duration", "scenario");
  s.control_dt = read_number(doc, "control_dt", "scenario");
  s.physics_dt = read_number(doc, "physics_dt", "scenario");
  s.allow_outside_invariant_set = read_bool(doc, "allow_outside_invariant_set", "scenario");

  if (!(s.duration >= 0.0)) throw ScenarioError("duration must be >= 0");
  if (!(s.control_dt > 0.0)) throw ScenarioError("control_dt must be > 0");
  if (!(s.physics_dt > 0.0) || s.physics_dt > s.control_dt) {
    throw ScenarioError("physics_dt must be in (0, control_dt]");
  }
  if (std::abs(s.physics_substeps() * s.physics_dt - s.control_dt) > 1e-12) {
    throw ScenarioError("control_dt must be an integer multiple of physics_dt");
  }

  const json& pj = doc["pilot"];
  s.pilot.external = read_bool(pj, "external", "pilot");
  s.pilot.input_timeout = read_number(pj, "input_timeout", "pilot");
  s.pilot.k_v = read_number(pj, "k_v", "pilot");
  s.pilot.k_q = read_number(pj, "k_q", "pilot");
  s.pilot.max_tilt_deg = read_number(pj, "max_tilt_deg", "pilot");
  if (!pj["segments"].is_array()) throw ScenarioError("pilot.segments: expected an array");
  for (std::size_t i = 0; i < pj["segments"].size(); ++i) {
    s.pilot.segments.push_back(
        parse_segment(pj["segments"][i], plant, "pilot.segments." + std::to_string(i)));
  }
  for (std::size_t i = 1; i < s.pilot.segments.size(); ++i) {
    if (!(s.pilot.segments[i].until > s.pilot.segments[i - 1].until)) {
      throw ScenarioError("pilot.segments: 'until' must be strictly increasing");
    }
  }
  if (!(s.pilot.input_timeout > 0.0)) throw ScenarioError("pilot.input_timeout must be > 0");
  if (!(s.pilot.max_tilt_deg > 0.0 && s.pilot.max_tilt_deg <= 90.0)) {
    throw ScenarioError("pilot.max_tilt_deg must be in (0, 90]");
  }

  try {
    if (plant == PlantKind::kQuadrotor) {
      const json& v = doc["vehicle"];
      s.vehicle.mass = read_number(v, "mass", "vehicle");
      s.vehicle.gravity = read_number(v, "gravity", "vehicle");
      s.vehicle.rate_gain = read_number(v, "rate_gain", "vehicle");
      if (read_string(v, "rate_gain_model", "vehicle") != "constant") {
        throw ScenarioError("vehicle.rate_gain_model: only 'constant' is available");
      }
      const Eigen::Vector3d poly = read_vec3(v["thrust_poly"], "vehicle.thrust_poly");
      s.vehicle.thrust_poly = {poly[0], poly[1], poly[2]};
      s.vehicle.rate_limit = read_number(v, "rate_limit", "vehicle");
      s.vehicle.drag = read_number(v, "drag", "vehicle");
      s.vehicle.validate();

      const json& g = doc["geofence"];
      s.geofence.center = read_vec3(g["center"], "geofence.center");
      s.geofence.half_extents = read_vec3(g["half_extents"], "geofence.half_extents");
      s.geofence.inflation = read_vec3(g["inflation"], "geofence.inflation");
      s.geofence.validate();

      const json& f = doc["filter"];
      s.filter.beta = read_number(f, "beta", "filter");
      s.filter.delta = read_number(f, "delta", "filter");
      s.filter.epsilon = read_number(f, "epsilon", "filter");
      s.filter.v_floor = read_number(f, "v_floor", "filter");
      s.filter.k_v = read_number(f, "k_v", "filter");
      s.filter.k_q = read_number(f, "k_q", "filter");
      s.filter.v_backup_max = read_number(f, "v_backup_max", "filter");
      s.filter.backup_set_weight = read_number(f, "backup_set_weight", "filter");
      s.filter.face_blend = read_number(f, "face_blend", "filter");
      s.filter.scaled_lambda = read_bool(f, "scaled_lambda", "filter");
      if (read_bool(f, "lookahead", "filter")) {
        s.filter.lookahead_dt = s.control_dt;
        s.filter.lookahead_substeps = s.physics_substeps();
      }
      s.filter.validate();

      s.flow.horizon = read_number(doc["flow"], "horizon", "flow");
      s.flow.dt = read_number(doc["flow"], "dt", "flow");
      s.flow.validate();

      const json& x = doc["initial_state"];
      s.initial_quad.position = read_vec3(x["position"], "initial_state.position");
      const json& q = x["attitude"];
      if (!q.is_array() || q.size() != 4) throw ScenarioError("initial_state.attitude: expected [w,x,y,z]");
      s.initial_quad.attitude =
          Eigen::Quaterniond(q[0].get<double>(), q[1].get<double>(), q[2].get<double>(), q[3].get<double>());
      if (s.initial_quad.attitude.norm() < 1e-9) throw ScenarioError("initial_state.attitude: zero quaternion");
      s.initial_quad.attitude.normalize();
      s.initial_quad.velocity = read_vec3(x["velocity"], "initial_state.velocity");
      s.initial_quad.body_rates = read_vec3(x["body_rates"], "initial_state.body_rates");
    } else {
      const json& p = doc["pendulum"];
      const json& gain = p["gain"];
      if (!gain.is_array() || gain.size() != 2) throw ScenarioError("pendulum.gain: expected [F1, F2]");
      s.pendulum.filter.gain = {gain[0].get<double>(), gain[1].get<double>()};
      s.pendulum.filter.beta = read_number(p, "beta", "pendulum");
      s.pendulum.filter.delta = read_number(p, "delta", "pendulum");
      s.pendulum.filter.backup_set_weight = read_number(p, "backup_set_weight", "pendulum");
      s.pendulum.filter.flow = {read_number(p, "horizon", "pendulum"), read_number(p, "dt", "pendulum")};
      s.pendulum.filter.validate();
      s.pendulum.alpha = read_number(p, "alpha", "pendulum");
      s.pendulum.fd_step = read_number(p, "fd_step", "pendulum");
      if (!(s.pendulum.alpha > 0.0)) throw ScenarioError("pendulum.alpha must be > 0");
      if (!(s.pendulum.fd_step > 0.0)) throw ScenarioError("pendulum.fd_step must be > 0");
      if (!p["input_bounds"].is_null()) {
        const json& b = p["input_bounds"];
        if (!b.is_array() || b.size() != 2 || !(b[0].get<double>() < b[1].get<double>())) {
          throw ScenarioError("pendulum.input_bounds: expected [lo, hi] with lo < hi");
        }
        s.pendulum.input_bounds = std::make_pair(b[0].get<double>(), b[1].get<double>());
      }
      const std::string kind = read_string(p, "filter", "pendulum");
      if (kind == "regulation") {
        s.pendulum.kind = PendulumFilterKind::kRegulation;
      } else if (kind == "qp") {
        s.pendulum.kind = PendulumFilterKind::kQp;
      } else {
        throw ScenarioError("pendulum.filter: expected 'regulation' or 'qp'");
      }
      s.pendulum.high_gain_beta = read_number(p["high_gain"], "beta", "pendulum.high_gain");
      s.pendulum.high_gain_alpha = read_number(p["high_gain"], "alpha", "pendulum.high_gain");
      s.initial_pendulum.theta = read_number(doc["initial_state"], "theta", "initial_state");
      s.initial_pendulum.theta_dot = read_number(doc["initial_state"], "theta_dot", "initial_state");
    }
  } catch (const std::invalid_argument& e) {
    throw ScenarioError(e.what());
  } catch (const json::exception& e) {
    throw ScenarioError(std::string("scenario: ") + e.what());
  }
  return s;
}

Scenario load_scenario(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ScenarioError("cannot open scenario '" + path.string() + "'");
  json doc;
  try {
    doc = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw ScenarioError(path.string() + ": " + e.what());
  }
  if (is_suite_document(doc)) throw ScenarioError(path.string() + " is a suite, not a single scenario");
  return parse_scenario(doc, overrides);
}

bool is_suite_document(const json& document) { return document.is_object() && document.contains("suite"); }

std::vector<std::filesystem::path> load_suite(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ScenarioError("cannot open suite '" + path.string() + "'");
  json doc;
  try {
    doc = json::parse(in, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ScenarioError(path.string() + ": " + e.what());
  }
  if (!is_suite_document(doc) || !doc["suite"].is_array()) throw ScenarioError(path.string() + ": not a suite");
  std::vector<std::filesystem::path> members;
  for (const auto& m : doc["suite"]) {
    if (!m.is_string()) throw ScenarioError(path.string() + ": suite entries must be file names");
    members.push_back(path.parent_path() / m.get<std::string>());
  }
  return members;
}

std::optional<std::filesystem::path> find_scenario(const std::string& id,
                                                   const std::vector<std::filesystem::path>& dirs) {
  for (const auto& dir : dirs) {
    const auto candidate = dir / (id + ".json");
    if (std::filesystem::exists(candidate)) return candidate;
  }
  return std::nullopt;
}

std::vector<std::string> list_scenarios(const std::vector<std::filesystem::path>& dirs) {
  std::set<std::string> ids;
  for (const auto& dir : dirs) {
    if (!std::filesystem::is_directory(dir)) continue;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
      if (entry.path().extension() == ".json") ids.insert(entry.path().stem().string());
    }
  }
  return {ids.begin(), ids.end()};
}

}  // namespace geofence
