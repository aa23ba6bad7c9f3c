#pragma once

#include <filesystem>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "geofence/flow_engine.hpp"
#include "geofence/safety_filter.hpp"
#include "geofence/vehicle_models.hpp"

namespace geofence {

inline constexpr int kScenarioSchemaVersion = 1;

/// Raised for any schema or precondition problem in a scenario document.
class ScenarioError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class PlantKind { kQuadrotor, kPendulum };

enum class PilotMode {
  kCommand,   // fixed stick command
  kVelocity,  // scripted pilot flying toward a target world velocity
  kSilent,    // no commands at all (radio loss)
};

/// One piece of a scripted pilot profile, active while t < until.
struct PilotSegment {
  double until = std::numeric_limits<double>::infinity();
  PilotMode mode = PilotMode::kCommand;
  QuadCommand command;
  Eigen::Vector3d target_velocity = Eigen::Vector3d::Zero();
  double pendulum_input = 0.0;
};

struct PilotProfile {
  std::vector<PilotSegment> segments;
  bool external = false;
  double input_timeout = 0.1;  // s without a fresh command before zeroing
  double k_v = 3.0;            // stick model of the scripted velocity pilot
  double k_q = 10.0;
  double max_tilt_deg = 60.0;  // angle-mode stick limit
};

enum class PendulumFilterKind { kRegulation, kQp };

struct PendulumSetup {
  PendulumFilterParams filter;
  double alpha = 5.0;
  double fd_step = 1e-4;
  std::optional<std::pair<double, double>> input_bounds;
  PendulumFilterKind kind = PendulumFilterKind::kRegulation;
  double high_gain_beta = 20.0;
  double high_gain_alpha = 50.0;
};

struct Scenario {
  std::string name;
  PlantKind plant = PlantKind::kQuadrotor;
  double duration = 10.0;
  double control_dt = 0.0025;
  double physics_dt = 0.0005;
  bool allow_outside_invariant_set = false;

  QuadParams vehicle;
  GeofenceBox geofence;
  FilterParams filter;
  FlowConfig flow;
  QuadState initial_quad;

  PendulumSetup pendulum;
  PendulumState initial_pendulum;

  PilotProfile pilot;

  /// Fully expanded document (defaults merged, overrides applied).
  nlohmann::json document;

  int control_ticks() const;
  int physics_substeps() const;
};

/// Every key the schema accepts for `plant`, filled with its default.
nlohmann::json default_scenario_document(PlantKind plant);

/// Applies "dotted.key=value" to a fully expanded document. The key must
/// exist and the value must have the same JSON type as the current one.
void apply_override(nlohmann::json& document, const std::string& assignment);

Scenario parse_scenario(const nlohmann::json& document, const std::vector<std::string>& overrides = {});
Scenario load_scenario(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

/// A suite file lists member scenario files relative to itself.
bool is_suite_document(const nlohmann::json& document);
std::vector<std::filesystem::path> load_suite(const std::filesystem::path& path);

/// Looks for `<dir>/<id>.json` in the given search directories.
std::optional<std::filesystem::path> find_scenario(const std::string& id,
                                                   const std::vector<std::filesystem::path>& dirs);
std::vector<std::string> list_scenarios(const std::vector<std::filesystem::path>& dirs);

}  // namespace geofence
