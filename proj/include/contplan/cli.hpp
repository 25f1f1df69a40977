#pragma once

#include "contplan/sim.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace contplan {

inline constexpr int kExitOk = 0;
inline constexpr int kExitAbort = 2;
inline constexpr int kExitConfig = 3;

/// One `--sweep key=a:b:step` axis. Keys: headway, p_s, N_s.
struct SweepAxis {
  std::string key;
  std::vector<double> values;
};

SweepAxis parse_sweep(const std::string& text);

struct RunConfig {
  std::filesystem::path scenario;
  std::vector<PlannerVariant> variants;  ///< empty: the scenario's own variant
  std::optional<std::uint64_t> seed;
  std::filesystem::path out = "out";
  std::vector<SweepAxis> sweeps;
  int repeat = 1;
  bool debug_residuals = false;
  int threads = 0;  ///< 0: PLANNER_THREADS or hardware concurrency
};

struct PlannedRun {
  std::string run_id;
  std::string group;  ///< variant label, used for the report rows
  Scenario scenario;
};

/// Cartesian product of variants x sweep axes x repeats. Repeat r uses seed + r.
std::vector<PlannedRun> expand_runs(const Scenario& base, const RunConfig& cfg);

void apply_override(Scenario& s, const std::string& key, double value);

/// Worker count: explicit value, else PLANNER_THREADS, else hardware concurrency; never above `jobs`.
int worker_count(int requested, std::size_t jobs);

/// Runs every planned run, writes traces, metrics.json and report.md. Returns an exit code.
int run_batch(const RunConfig& cfg, std::ostream& log, std::ostream& err);

/// Writes volume.csv, dmin.csv, accel.csv, trajectories.csv and speed.csv for all traces in `trace_dir`.
void export_plot_data(const std::filesystem::path& trace_dir, const std::filesystem::path& out_dir);

/// Entry point used by the `contplan` tool.
int cli_main(int argc, char** argv, std::ostream& log, std::ostream& err);

}  // namespace contplan
