#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "geofence/compare.hpp"
#include "geofence/scenario.hpp"
#include "geofence/sim_harness.hpp"

namespace geofence::cli {

/// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitViolation = 1;
inline constexpr int kExitInvalid = 2;

/// Version of every JSON document the CLI writes.
inline constexpr int kMetricsSchemaVersion = 1;

nlohmann::json metrics_json(const Scenario& scenario, const QuadRunResult& run, const Metrics& m);
nlohmann::json pendulum_json(const Scenario& scenario, const FilterRunSummary& summary, PendulumFilterKind kind);
nlohmann::json comparison_json(const ComparisonReport& report);

/// Splits "key=v1,v2,..." into key and JSON values. Commas inside brackets
/// or quotes do not split.
std::pair<std::string, std::vector<std::string>> parse_grid(const std::string& spec);

/// Every combination of the axes, as override lists. No axes, no rows.
std::vector<std::vector<std::string>> cartesian(
    const std::vector<std::pair<std::string, std::vector<std::string>>>& axes);

/// Path if it names a file, else an id looked up in the directories.
std::filesystem::path resolve_scenario(const std::string& arg, const std::vector<std::filesystem::path>& dirs);

/// Entry point. Returns the process exit code.
int main(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace geofence::cli
