#pragma once

#include "contplan/sim.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>

#include <json.hpp>

namespace contplan {

inline constexpr int kScenarioSchemaVersion = 1;

/// Configuration problem; `what()` carries a location prefix when one is known.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

nlohmann::json planner_to_json(const PlannerConfig& c);
/// Overlays the keys present in `j` onto `base`; unknown keys are rejected.
PlannerConfig planner_from_json(const nlohmann::json& j, PlannerConfig base = {});

nlohmann::json scenario_to_json(const Scenario& s);
Scenario scenario_from_json(const nlohmann::json& j);

/// Parses and validates a scenario file. Syntax errors report line and column.
Scenario load_scenario(const std::filesystem::path& path);

/// Parses JSON text, converting parse errors into ConfigError("<origin>:<line>:<col>: ...").
nlohmann::json parse_json_text(const std::string& text, const std::string& origin);

}  // namespace contplan
