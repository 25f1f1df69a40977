#include "contplan/trace_io.hpp"

#include "contplan/scenario_io.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace contplan {

using nlohmann::json;

namespace {

const char* kTraceMagic = "# contplan trace v1";

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, sep)) out.push_back(cell);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

double num(const std::string& s) {
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) throw std::runtime_error("malformed number '" + s + "'");
  return v;
}

std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  return out;
}

}  // namespace

std::string fmt9(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::vector<std::string> trace_columns(int hv_count) {
  std::vector<std::string> cols = {"step",   "t",        "ev_px",      "ev_py",     "ev_theta", "ev_theta_dot",
                                   "ev_v",   "ev_ax",    "ev_ay",      "ev_jx",     "ev_jy",    "odometer",
                                   "iterations", "residual", "converged", "fallback", "collision", "min_planned_speed"};
  for (int h = 0; h < hv_count; ++h) {
    const std::string p = "hv" + std::to_string(h) + "_";
    for (const char* c : {"px", "py", "vx", "vy", "mpx", "mpy", "mvx", "mvy", "volume", "triggered", "dmin"})
      cols.push_back(p + c);
  }
  return cols;
}

void write_run(const std::filesystem::path& dir, const RunResult& run) {
  std::filesystem::create_directories(dir);
  const int m = static_cast<int>(run.scenario.hvs.size());
  {
    std::ofstream out = open_out(dir / ("trace_" + run.run_id + ".csv"));
    out << kTraceMagic << '\n';
    out << "# run_id: " << run.run_id << '\n';
    out << "# status: collided=" << run.collided << " aborted=" << run.aborted << '\n';
    out << "# abort_reason: " << run.abort_reason << '\n';
    out << "# config: " << scenario_to_json(run.scenario).dump() << '\n';
    const auto cols = trace_columns(m);
    for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
    out << '\n';
    for (const auto& r : run.records) {
      out << r.step << ',' << fmt9(r.t);
      for (int i = 0; i < kStateDim; ++i) out << ',' << fmt9(r.ev(i));
      out << ',' << fmt9(r.odometer) << ',' << r.iterations << ',' << fmt9(r.residual) << ',' << r.converged << ','
          << static_cast<int>(r.fallback) << ',' << r.collision << ',' << fmt9(r.min_planned_speed);
      for (const auto& h : r.hvs) {
        for (int i = 0; i < 4; ++i) out << ',' << fmt9(h.truth(i));
        for (int i = 0; i < 4; ++i) out << ',' << fmt9(h.measured(i));
        out << ',' << fmt9(h.volume) << ',' << h.triggered << ',' << fmt9(h.d_min);
      }
      out << '\n';
    }
  }
  {
    std::ofstream out = open_out(dir / ("timing_" + run.run_id + ".csv"));
    out << "step,solve_time_s,iterations\n";
    for (const auto& r : run.records) out << r.step << ',' << fmt9(r.solve_time) << ',' << r.iterations << '\n';
  }
  {
    std::ofstream out = open_out(dir / ("plan_" + run.run_id + ".csv"));
    out << "step,branch,k,px,py,v\n";
    for (const auto& r : run.records) {
      for (const auto& p : r.plan) {
        out << r.step << ',' << (p.branch == kNominal ? "nominal" : "contingency") << ',' << p.k << ',' << fmt9(p.px)
            << ',' << fmt9(p.py) << ',' << fmt9(p.v) << '\n';
      }
    }
  }
}

RunResult read_run(const std::filesystem::path& dir, const std::string& run_id) {
  const auto path = dir / ("trace_" + run_id + ".csv");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("missing trace " + path.string());
  RunResult run;
  run.run_id = run_id;
  std::string line;
  if (!std::getline(in, line) || line != kTraceMagic) throw std::runtime_error(path.string() + ": not a trace file");
  bool have_header = false;
  std::size_t ncols = 0;
  int m = 0;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.rfind("# status: ", 0) == 0) {
      run.collided = line.find("collided=1") != std::string::npos;
      run.aborted = line.find("aborted=1") != std::string::npos;
    } else if (line.rfind("# abort_reason: ", 0) == 0) {
      run.abort_reason = line.substr(16);
    } else if (line.rfind("# config: ", 0) == 0) {
      run.scenario = scenario_from_json(json::parse(line.substr(10)));
      m = static_cast<int>(run.scenario.hvs.size());
    } else if (line.rfind("#", 0) == 0) {
      continue;
    } else if (!have_header) {
      ncols = split(line, ',').size();
      if (ncols != trace_columns(m).size()) throw std::runtime_error(path.string() + ": column count mismatch");
      have_header = true;
    } else {
      const auto c = split(line, ',');
      if (c.size() != ncols) throw std::runtime_error(path.string() + ":" + std::to_string(row) + ": wrong cell count");
      TraceRecord r;
      std::size_t i = 0;
      r.step = std::stoi(c[i++]);
      r.t = num(c[i++]);
      for (int k = 0; k < kStateDim; ++k) r.ev(k) = num(c[i++]);
      r.odometer = num(c[i++]);
      r.iterations = std::stoi(c[i++]);
      r.residual = num(c[i++]);
      r.converged = c[i++] == "1";
      r.fallback = static_cast<Fallback>(std::stoi(c[i++]));
      r.collision = c[i++] == "1";
      r.min_planned_speed = num(c[i++]);
      for (int h = 0; h < m; ++h) {
        HvTrace t;
        for (int k = 0; k < 4; ++k) t.truth(k) = num(c[i++]);
        for (int k = 0; k < 4; ++k) t.measured(k) = num(c[i++]);
        t.volume = num(c[i++]);
        t.triggered = c[i++] == "1";
        t.d_min = num(c[i++]);
        r.hvs.push_back(t);
      }
      run.records.push_back(std::move(r));
    }
  }
  const auto tpath = dir / ("timing_" + run_id + ".csv");
  std::ifstream tin(tpath, std::ios::binary);
  if (!tin) throw std::runtime_error("missing timing file " + tpath.string());
  std::getline(tin, line);
  std::size_t idx = 0;
  while (std::getline(tin, line)) {
    const auto c = split(line, ',');
    if (c.size() != 3 || idx >= run.records.size()) throw std::runtime_error(tpath.string() + ": malformed timing row");
    run.records[idx++].solve_time = num(c[1]);
  }
  if (idx != run.records.size()) throw std::runtime_error(tpath.string() + ": timing rows do not match trace");
  return run;
}

std::vector<std::string> list_runs(const std::filesystem::path& dir) {
  std::vector<std::string> ids;
  if (!std::filesystem::is_directory(dir)) return ids;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (name.rfind("trace_", 0) == 0 && e.path().extension() == ".csv") ids.push_back(name.substr(6, name.size() - 10));
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

json metrics_to_json(const MetricsReport& m) {
  json runs = json::array();
  for (const auto& r : m.runs) {
    runs.push_back({{"run_id", r.run_id},
                    {"collided", r.collided},
                    {"aborted", r.aborted},
                    {"d_min", r.d_min},
                    {"J_x_max", r.jx_max},
                    {"J_y_max", r.jy_max},
                    {"v_mean", r.v_mean},
                    {"s", r.s},
                    {"t_mean", r.t_mean},
                    {"min_planned_speed", r.min_planned_speed},
                    {"steps", r.steps}});
  }
  return {{"P_c", m.p_c},         {"d_min", m.d_min},   {"J_x_max", m.jx_max}, {"J_y_max", m.jy_max},
          {"v_mean", m.v_mean},   {"s_mean", m.s_mean}, {"t_mean", m.t_mean},  {"min_planned_speed", m.min_planned_speed},
          {"runs", runs}};
}

MetricsReport metrics_from_json(const json& j) {
  MetricsReport m;
  m.p_c = j.at("P_c").get<double>();
  m.d_min = j.at("d_min").get<double>();
  m.jx_max = j.at("J_x_max").get<double>();
  m.jy_max = j.at("J_y_max").get<double>();
  m.v_mean = j.at("v_mean").get<double>();
  m.s_mean = j.at("s_mean").get<double>();
  m.t_mean = j.at("t_mean").get<double>();
  m.min_planned_speed = j.at("min_planned_speed").get<double>();
  for (const auto& r : j.at("runs")) {
    RunMetrics x;
    x.run_id = r.at("run_id").get<std::string>();
    x.collided = r.at("collided").get<bool>();
    x.aborted = r.at("aborted").get<bool>();
    x.d_min = r.at("d_min").get<double>();
    x.jx_max = r.at("J_x_max").get<double>();
    x.jy_max = r.at("J_y_max").get<double>();
    x.v_mean = r.at("v_mean").get<double>();
    x.s = r.at("s").get<double>();
    x.t_mean = r.at("t_mean").get<double>();
    x.min_planned_speed = r.at("min_planned_speed").get<double>();
    x.steps = r.at("steps").get<int>();
    m.runs.push_back(x);
  }
  return m;
}

std::string report_markdown(const std::vector<std::pair<std::string, MetricsReport>>& rows) {
  std::ostringstream out;
  out << "| Variant | Runs | P_c (%) | d_min (m) | J_x,max (m/s^3) | J_y,max (m/s^3) | v_mean (m/s) | s_mean (m) | t_mean (s) |\n";
  out << "|---|---|---|---|---|---|---|---|---|\n";
  char buf[256];
  for (const auto& [label, m] : rows) {
    std::snprintf(buf, sizeof buf, "| %s | %zu | %.2f | %.2f | %.2f | %.2f | %.2f | %.2f | %.4f |\n", label.c_str(),
                  m.runs.size(), 100.0 * m.p_c, m.d_min, m.jx_max, m.jy_max, m.v_mean, m.s_mean, m.t_mean);
    out << buf;
  }
  return out.str();
}

}  // namespace contplan
