#include "contplan/cli.hpp"

#include "contplan/scenario_io.hpp"
#include "contplan/trace_io.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

namespace contplan {

namespace {

std::string tag(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

std::ofstream open_csv(const std::filesystem::path& p) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  return out;
}

}  // namespace

SweepAxis parse_sweep(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos) throw ConfigError("--sweep " + text + ": expected key=a:b:step");
  SweepAxis axis;
  axis.key = text.substr(0, eq);
  if (axis.key != "headway" && axis.key != "p_s" && axis.key != "N_s")
    throw ConfigError("--sweep: unknown key '" + axis.key + "' (headway, p_s, N_s)");
  double a = 0, b = 0, step = 0;
  char tail = 0;
  if (std::sscanf(text.c_str() + eq + 1, "%lf:%lf:%lf%c", &a, &b, &step, &tail) != 3)
    throw ConfigError("--sweep " + text + ": expected key=a:b:step");
  if (!(step > 0.0) || b < a) throw ConfigError("--sweep " + text + ": need step > 0 and b >= a");
  const int count = static_cast<int>(std::floor((b - a) / step + 1e-9)) + 1;
  for (int i = 0; i < count; ++i) axis.values.push_back(a + i * step);
  return axis;
}

void apply_override(Scenario& s, const std::string& key, double value) {
  if (key == "headway") {
    if (!s.headway) throw ConfigError("sweep over headway needs a scenario with a headway block");
    s.headway->headway = value;
  } else if (key == "p_s") {
    s.planner.p_s = value;
  } else if (key == "N_s") {
    s.planner.consensus_steps = static_cast<int>(std::lround(value));
  } else {
    throw ConfigError("unknown override '" + key + "'");
  }
}

std::vector<PlannedRun> expand_runs(const Scenario& base, const RunConfig& cfg) {
  if (cfg.repeat < 1) throw ConfigError("--repeat must be >= 1");
  std::vector<PlannerVariant> variants = cfg.variants;
  if (variants.empty()) variants.push_back(base.variant);
  const std::uint64_t seed0 = cfg.seed.value_or(base.seed);

  std::vector<std::pair<std::string, Scenario>> points = {{"", base}};
  for (const auto& axis : cfg.sweeps) {
    std::vector<std::pair<std::string, Scenario>> next;
    for (const auto& [name, s] : points) {
      for (double v : axis.values) {
        Scenario t = s;
        apply_override(t, axis.key, v);
        next.emplace_back(name + "_" + axis.key + tag(v), std::move(t));
      }
    }
    points = std::move(next);
  }

  std::vector<PlannedRun> runs;
  for (auto variant : variants) {
    for (const auto& [name, s] : points) {
      for (int r = 0; r < cfg.repeat; ++r) {
        PlannedRun p;
        p.group = to_string(variant);
        p.scenario = s;
        p.scenario.variant = variant;
        p.scenario.seed = seed0 + static_cast<std::uint64_t>(r);
        p.run_id = p.group + name + "_seed" + std::to_string(p.scenario.seed);
        try {
          p.scenario.validate();
        } catch (const std::invalid_argument& e) {
          throw ConfigError(p.run_id + ": " + e.what());
        }
        runs.push_back(std::move(p));
      }
    }
  }
  return runs;
}

int worker_count(int requested, std::size_t jobs) {
  int n = requested;
  if (n <= 0) {
    if (const char* env = std::getenv("PLANNER_THREADS")) n = std::atoi(env);
  }
  if (n <= 0) n = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  return std::max(1, std::min<int>(n, static_cast<int>(std::max<std::size_t>(jobs, 1))));
}

int run_batch(const RunConfig& cfg, std::ostream& log, std::ostream& err) {
  std::vector<PlannedRun> runs;
  try {
    runs = expand_runs(load_scenario(cfg.scenario), cfg);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  }
  std::filesystem::create_directories(cfg.out);

  std::mutex io;
  std::atomic<std::size_t> next{0};
  std::vector<std::string> failures;
  auto worker = [&]() {
    for (std::size_t i = next++; i < runs.size(); i = next++) {
      const auto& job = runs[i];
      RunResult result;
      try {
        if (cfg.debug_residuals) {
          std::ostringstream residuals;
          result = run_closed_loop(job.scenario, job.run_id, &residuals);
          std::lock_guard<std::mutex> lock(io);
          open_csv(cfg.out / ("residuals_" + job.run_id + ".csv")) << residuals.str();
        } else {
          result = run_closed_loop(job.scenario, job.run_id);
        }
      } catch (const std::exception& e) {
        result.run_id = job.run_id;
        result.scenario = job.scenario;
        result.aborted = true;
        result.abort_reason = e.what();
      }
      std::lock_guard<std::mutex> lock(io);
      write_run(cfg.out, result);
      log << job.run_id << (result.aborted ? " aborted: " + result.abort_reason : result.collided ? " collision" : " ok")
          << '\n';
      if (result.aborted) failures.push_back(job.run_id);
    }
  };
  const int n = worker_count(cfg.threads, runs.size());
  std::vector<std::thread> pool;
  for (int t = 0; t < n; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  // metrics come from the traces on disk, not from memory
  std::map<std::string, std::vector<RunResult>> groups;
  std::vector<std::string> order;
  for (const auto& job : runs) {
    if (!groups.count(job.group)) order.push_back(job.group);
    groups[job.group].push_back(read_run(cfg.out, job.run_id));
  }
  nlohmann::json metrics = {{"schema_version", 1}, {"variants", nlohmann::json::object()}};
  std::vector<std::pair<std::string, MetricsReport>> rows;
  for (const auto& g : order) {
    MetricsReport m = compute_metrics(groups[g]);
    metrics["variants"][g] = metrics_to_json(m);
    rows.emplace_back(g, std::move(m));
  }
  open_csv(cfg.out / "metrics.json") << metrics.dump(2) << '\n';
  open_csv(cfg.out / "report.md") << "# " << runs.front().scenario.name << "\n\n" << report_markdown(rows);

  if (!failures.empty()) {
    err << failures.size() << " run(s) aborted\n";
    return kExitAbort;
  }
  return kExitOk;
}

void export_plot_data(const std::filesystem::path& trace_dir, const std::filesystem::path& out_dir) {
  const auto ids = list_runs(trace_dir);
  if (ids.empty()) throw std::runtime_error("no trace_*.csv files in " + trace_dir.string());
  std::filesystem::create_directories(out_dir);
  auto volume = open_csv(out_dir / "volume.csv");
  auto dmin = open_csv(out_dir / "dmin.csv");
  auto accel = open_csv(out_dir / "accel.csv");
  auto traj = open_csv(out_dir / "trajectories.csv");
  auto speed = open_csv(out_dir / "speed.csv");
  volume << "run_id,t,hv_id,volume,triggered\n";
  dmin << "run_id,t,d_min,hv_id\n";
  accel << "run_id,t,ax,ay,a_lower,a_upper\n";
  traj << "run_id,t,agent,px,py\n";
  speed << "run_id,t,v\n";
  for (const auto& id : ids) {
    const RunResult run = read_run(trace_dir, id);
    const auto& hvs = run.scenario.hvs;
    const double a_max = run.scenario.planner.a_max;
    for (const auto& r : run.records) {
      const std::string t = fmt9(r.t);
      double worst = std::numeric_limits<double>::infinity();
      int worst_id = -1;
      for (std::size_t h = 0; h < r.hvs.size(); ++h) {
        const auto& x = r.hvs[h];
        volume << id << ',' << t << ',' << hvs[h].id << ',' << fmt9(x.volume) << ',' << x.triggered << '\n';
        traj << id << ',' << t << ",hv" << hvs[h].id << ',' << fmt9(x.truth(0)) << ',' << fmt9(x.truth(1)) << '\n';
        if (x.d_min < worst) {
          worst = x.d_min;
          worst_id = hvs[h].id;
        }
      }
      if (worst_id >= 0) dmin << id << ',' << t << ',' << fmt9(worst) << ',' << worst_id << '\n';
      accel << id << ',' << t << ',' << fmt9(r.ev(kAx)) << ',' << fmt9(r.ev(kAy)) << ',' << fmt9(-a_max) << ','
            << fmt9(a_max) << '\n';
      traj << id << ',' << t << ",ev," << fmt9(r.ev(kPx)) << ',' << fmt9(r.ev(kPy)) << '\n';
      speed << id << ',' << t << ',' << fmt9(r.ev(kSpeed)) << '\n';
    }
  }
}

int cli_main(int argc, char** argv, std::ostream& log, std::ostream& err) {
  CLI::App app{"contingency planner simulation harness"};
  app.require_subcommand(1);

  RunConfig cfg;
  std::vector<std::string> variants, sweeps;
  std::uint64_t seed = 0;
  auto* run = app.add_subcommand("run", "run a scenario, optionally swept and repeated");
  run->add_option("--scenario", cfg.scenario, "scenario JSON file")->required();
  run->add_option("--variant", variants, "proposed | det | worst (repeatable)");
  auto* seed_opt = run->add_option("--seed", seed, "base seed (repeat r uses seed + r)");
  run->add_option("--out", cfg.out, "output directory");
  run->add_option("--sweep", sweeps, "key=a:b:step with key in headway, p_s, N_s (repeatable)");
  run->add_option("--repeat", cfg.repeat, "runs per sweep point");
  run->add_option("--threads", cfg.threads, "worker threads (default PLANNER_THREADS)");
  run->add_flag("--debug-residuals", cfg.debug_residuals, "write residuals_<run>.csv");

  std::filesystem::path trace_dir, export_out;
  auto* exp = app.add_subcommand("export", "write plot CSVs from a trace directory");
  exp->add_option("--traces", trace_dir, "directory holding trace_*.csv")->required();
  exp->add_option("--out", export_out, "output directory (default: <traces>/plots)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      log << app.help();
      return kExitOk;
    }
    err << e.what() << '\n';
    return kExitConfig;
  }

  if (*exp) {
    try {
      export_plot_data(trace_dir, export_out.empty() ? trace_dir / "plots" : export_out);
    } catch (const std::exception& e) {
      err << "export failed: " << e.what() << '\n';
      return kExitConfig;
    }
    return kExitOk;
  }

  try {
    for (const auto& v : variants) cfg.variants.push_back(parse_variant(v));
    for (const auto& s : sweeps) cfg.sweeps.push_back(parse_sweep(s));
  } catch (const std::exception& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  }
  if (*seed_opt) cfg.seed = seed;
  return run_batch(cfg, log, err);
}

}  // namespace contplan
