#pragma once

#include "contplan/sim.hpp"

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace contplan {

/// Column names of trace_<run>.csv for `hv_count` HVs.
std::vector<std::string> trace_columns(int hv_count);

/// Writes trace_<run>.csv (deterministic), timing_<run>.csv and plan_<run>.csv into `dir`.
void write_run(const std::filesystem::path& dir, const RunResult& run);

/// Reads a run back from trace_<id>.csv and timing_<id>.csv (plan samples are not restored).
RunResult read_run(const std::filesystem::path& dir, const std::string& run_id);

/// Run ids of every trace_<id>.csv in `dir`, sorted.
std::vector<std::string> list_runs(const std::filesystem::path& dir);

nlohmann::json metrics_to_json(const MetricsReport& m);
MetricsReport metrics_from_json(const nlohmann::json& j);

/// Markdown summary table, one row per variant label.
std::string report_markdown(const std::vector<std::pair<std::string, MetricsReport>>& rows);

/// Formats with 9 significant digits.
std::string fmt9(double v);

}  // namespace contplan
