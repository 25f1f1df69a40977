#include "contplan/scenario_io.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <utility>

namespace contplan {

using nlohmann::json;

namespace {

struct DoubleField {
  const char* name;
  double PlannerConfig::*member;
};

struct IntField {
  const char* name;
  int PlannerConfig::*member;
};

struct OptionalField {
  const char* name;
  std::optional<double> PlannerConfig::*member;
};

const DoubleField kDoubleFields[] = {
    {"dt", &PlannerConfig::dt},
    {"alpha", &PlannerConfig::alpha},
    {"p_s", &PlannerConfig::p_s},
    {"rho_x", &PlannerConfig::rho_x},
    {"rho_y", &PlannerConfig::rho_y},
    {"rho_theta", &PlannerConfig::rho_theta},
    {"rho_obs_nominal", &PlannerConfig::rho_obs_nominal},
    {"rho_obs_contingency", &PlannerConfig::rho_obs_contingency},
    {"rho_cx", &PlannerConfig::rho_cx},
    {"rho_cy", &PlannerConfig::rho_cy},
    {"rho_ctheta", &PlannerConfig::rho_ctheta},
    {"relax_x", &PlannerConfig::relax_x},
    {"relax_y", &PlannerConfig::relax_y},
    {"a_max", &PlannerConfig::a_max},
    {"j_max", &PlannerConfig::j_max},
    {"x_min", &PlannerConfig::x_min},
    {"x_max", &PlannerConfig::x_max},
    {"eps_pri", &PlannerConfig::eps_pri},
    {"eps_dual", &PlannerConfig::eps_dual},
    {"adapt_factor", &PlannerConfig::adapt_factor},
    {"adapt_max_scale", &PlannerConfig::adapt_max_scale},
    {"v_xd", &PlannerConfig::v_xd},
    {"p_yd", &PlannerConfig::p_yd},
};

const IntField kIntFields[] = {
    {"N", &PlannerConfig::horizon},
    {"N_s", &PlannerConfig::consensus_steps},
    {"n", &PlannerConfig::order},
    {"iter_max", &PlannerConfig::iter_max},
    {"adapt_interval", &PlannerConfig::adapt_interval},
};

const OptionalField kOptionalFields[] = {
    {"eps_kinematic", &PlannerConfig::eps_kinematic},
    {"eps_obstacle", &PlannerConfig::eps_obstacle},
    {"eps_consensus", &PlannerConfig::eps_consensus},
    {"eps_inequality", &PlannerConfig::eps_inequality},
};

json weights_to_json(const BranchWeights& w) {
  return {{"w_x", w.w_x}, {"w_y", w.w_y}, {"w_theta", w.w_theta}, {"w_vd", w.w_vd}, {"w_yd", w.w_yd}};
}

void reject_unknown(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, value] : j.items()) {
    if (!ok.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

BranchWeights weights_from_json(const json& j, BranchWeights w, const std::string& where) {
  reject_unknown(j, {"w_x", "w_y", "w_theta", "w_vd", "w_yd"}, where);
  w.w_x = j.value("w_x", w.w_x);
  w.w_y = j.value("w_y", w.w_y);
  w.w_theta = j.value("w_theta", w.w_theta);
  w.w_vd = j.value("w_vd", w.w_vd);
  w.w_yd = j.value("w_yd", w.w_yd);
  return w;
}

template <int N>
Eigen::Matrix<double, N, 1> vec_from_json(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != static_cast<std::size_t>(N))
    throw ConfigError(where + ": expected an array of " + std::to_string(N) + " numbers");
  Eigen::Matrix<double, N, 1> v;
  for (int i = 0; i < N; ++i) {
    if (!j[static_cast<std::size_t>(i)].is_number()) throw ConfigError(where + ": expected numbers");
    v(i) = j[static_cast<std::size_t>(i)].get<double>();
  }
  return v;
}

template <typename Derived>
json vec_to_json(const Eigen::MatrixBase<Derived>& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

json footprint_to_json(const Footprint& f) { return json::array({f.semi_length, f.semi_width}); }

Footprint footprint_from_json(const json& j, const std::string& where) {
  const Eigen::Vector2d v = vec_from_json<2>(j, where);
  return {v.x(), v.y()};
}

json ev_to_json(const EvState& ev) {
  return {{"px", ev(kPx)}, {"py", ev(kPy)}, {"theta", ev(kTheta)}, {"theta_dot", ev(kThetaDot)}, {"v", ev(kSpeed)},
          {"ax", ev(kAx)},  {"ay", ev(kAy)}, {"jx", ev(kJx)},       {"jy", ev(kJy)}};
}

EvState ev_from_json(const json& j) {
  reject_unknown(j, {"px", "py", "theta", "theta_dot", "v", "ax", "ay", "jx", "jy"}, "ev_init");
  EvState ev;
  ev << j.value("px", 0.0), j.value("py", 0.0), j.value("theta", 0.0), j.value("theta_dot", 0.0), j.value("v", 0.0),
      j.value("ax", 0.0), j.value("ay", 0.0), j.value("jx", 0.0), j.value("jy", 0.0);
  return ev;
}

}  // namespace

json planner_to_json(const PlannerConfig& c) {
  json j;
  for (const auto& f : kIntFields) j[f.name] = c.*(f.member);
  for (const auto& f : kDoubleFields) j[f.name] = c.*(f.member);
  for (const auto& f : kOptionalFields) j[f.name] = (c.*(f.member)) ? json(*(c.*(f.member))) : json(nullptr);
  j["nominal"] = weights_to_json(c.nominal);
  j["contingency"] = weights_to_json(c.contingency);
  j["adaptive_penalty"] = c.adaptive_penalty;
  j["horizon_mode"] = c.mode == HorizonMode::kShrinking ? "shrinking" : "receding";
  return j;
}

PlannerConfig planner_from_json(const json& j, PlannerConfig c) {
  if (!j.is_object()) throw ConfigError("planner: expected an object");
  for (const auto& [key, value] : j.items()) {
    bool handled = false;
    for (const auto& f : kIntFields) {
      if (key == f.name) {
        if (!value.is_number_integer()) throw ConfigError("planner." + key + ": expected an integer");
        c.*(f.member) = value.get<int>();
        handled = true;
      }
    }
    for (const auto& f : kDoubleFields) {
      if (key == f.name) {
        if (!value.is_number()) throw ConfigError("planner." + key + ": expected a number");
        c.*(f.member) = value.get<double>();
        handled = true;
      }
    }
    for (const auto& f : kOptionalFields) {
      if (key == f.name) {
        if (value.is_null()) {
          c.*(f.member) = std::nullopt;
        } else if (value.is_number()) {
          c.*(f.member) = value.get<double>();
        } else {
          throw ConfigError("planner." + key + ": expected a number or null");
        }
        handled = true;
      }
    }
    if (key == "nominal") {
      c.nominal = weights_from_json(value, c.nominal, "planner.nominal");
      handled = true;
    } else if (key == "contingency") {
      c.contingency = weights_from_json(value, c.contingency, "planner.contingency");
      handled = true;
    } else if (key == "adaptive_penalty") {
      if (!value.is_boolean()) throw ConfigError("planner.adaptive_penalty: expected a boolean");
      c.adaptive_penalty = value.get<bool>();
      handled = true;
    } else if (key == "horizon_mode") {
      const std::string m = value.is_string() ? value.get<std::string>() : "";
      if (m == "receding") {
        c.mode = HorizonMode::kReceding;
      } else if (m == "shrinking") {
        c.mode = HorizonMode::kShrinking;
      } else {
        throw ConfigError("planner.horizon_mode: expected \"receding\" or \"shrinking\"");
      }
      handled = true;
    }
    if (!handled) throw ConfigError("planner: unknown key '" + key + "'");
  }
  return c;
}

json scenario_to_json(const Scenario& s) {
  json j;
  j["schema_version"] = kScenarioSchemaVersion;
  j["name"] = s.name;
  j["duration"] = s.duration;
  j["ev_init"] = ev_to_json(s.ev_init);
  j["corridor"] = {{"y_min", s.y_min}, {"y_max", s.y_max}};
  j["noise"] = {{"sigma_bar", vec_to_json(s.noise.sigma_bar)}};
  j["variant"] = to_string(s.variant);
  j["seed"] = s.seed;
  if (s.headway) {
    j["headway"] = {{"hv_index", s.headway->hv_index},
                    {"headway", s.headway->headway},
                    {"closing_speed", s.headway->closing_speed},
                    {"offset", s.headway->offset}};
  }
  j["geometry"] = {{"safety_semi_axes", vec_to_json(s.safety_semi_axes)},
                   {"ev_footprint", footprint_to_json(s.ev_footprint)},
                   {"hv_footprint", footprint_to_json(s.hv_footprint)}};
  j["intent"] = {{"seed", vec_to_json(s.intent_seed)},
                 {"worst_case_bound", s.worst_case_bound},
                 {"window_steps", s.intent_window_steps},
                 {"box", {{"lower", vec_to_json(s.box.lower)}, {"upper", vec_to_json(s.box.upper)}}}};
  j["sigma_omega_scale"] = s.sigma_omega_scale;
  j["planner"] = planner_to_json(s.planner);
  json hvs = json::array();
  for (const auto& hv : s.hvs) {
    json phases = json::array();
    for (const auto& p : hv.phases) {
      phases.push_back({{"t_start", p.t_start},
                        {"t_end", p.t_end},
                        {"a_start", vec_to_json(p.a_start)},
                        {"a_end", vec_to_json(p.a_end)}});
    }
    hvs.push_back({{"id", hv.id}, {"label", hv.label}, {"init", vec_to_json(hv.init)}, {"phases", phases}});
  }
  j["hvs"] = hvs;
  return j;
}

Scenario scenario_from_json(const json& j) {
  reject_unknown(j,
                 {"schema_version", "name", "duration", "ev_init", "corridor", "noise", "variant", "seed", "headway",
                  "geometry", "intent", "sigma_omega_scale", "planner", "hvs", "description"},
                 "scenario");
  if (!j.contains("schema_version") || !j["schema_version"].is_number_integer())
    throw ConfigError("scenario: missing integer schema_version");
  if (j["schema_version"].get<int>() != kScenarioSchemaVersion)
    throw ConfigError("scenario: unsupported schema_version " + std::to_string(j["schema_version"].get<int>()));
  try {
    Scenario s;
    s.name = j.value("name", s.name);
    s.duration = j.value("duration", s.duration);
    if (j.contains("ev_init")) s.ev_init = ev_from_json(j["ev_init"]);
    if (j.contains("corridor")) {
      reject_unknown(j["corridor"], {"y_min", "y_max"}, "corridor");
      s.y_min = j["corridor"].value("y_min", s.y_min);
      s.y_max = j["corridor"].value("y_max", s.y_max);
    }
    if (j.contains("noise")) {
      reject_unknown(j["noise"], {"sigma_bar"}, "noise");
      if (j["noise"].contains("sigma_bar")) s.noise.sigma_bar = vec_from_json<4>(j["noise"]["sigma_bar"], "noise.sigma_bar");
    }
    if (j.contains("variant")) s.variant = parse_variant(j["variant"].get<std::string>());
    s.seed = j.value("seed", s.seed);
    if (j.contains("headway") && !j["headway"].is_null()) {
      const json& h = j["headway"];
      reject_unknown(h, {"hv_index", "headway", "closing_speed", "offset"}, "headway");
      HeadwaySpec hw;
      hw.hv_index = h.value("hv_index", hw.hv_index);
      hw.headway = h.value("headway", hw.headway);
      hw.closing_speed = h.value("closing_speed", hw.closing_speed);
      hw.offset = h.value("offset", hw.offset);
      s.headway = hw;
    }
    if (j.contains("geometry")) {
      const json& g = j["geometry"];
      reject_unknown(g, {"safety_semi_axes", "ev_footprint", "hv_footprint"}, "geometry");
      if (g.contains("safety_semi_axes")) s.safety_semi_axes = vec_from_json<2>(g["safety_semi_axes"], "geometry.safety_semi_axes");
      if (g.contains("ev_footprint")) s.ev_footprint = footprint_from_json(g["ev_footprint"], "geometry.ev_footprint");
      if (g.contains("hv_footprint")) s.hv_footprint = footprint_from_json(g["hv_footprint"], "geometry.hv_footprint");
    }
    if (j.contains("intent")) {
      const json& in = j["intent"];
      reject_unknown(in, {"seed", "worst_case_bound", "window_steps", "box"}, "intent");
      if (in.contains("seed")) s.intent_seed = vec_from_json<2>(in["seed"], "intent.seed");
      s.worst_case_bound = in.value("worst_case_bound", s.worst_case_bound);
      s.intent_window_steps = in.value("window_steps", s.intent_window_steps);
      if (in.contains("box")) {
        reject_unknown(in["box"], {"lower", "upper"}, "intent.box");
        s.box = AdmissibleBox(vec_from_json<2>(in["box"].at("lower"), "intent.box.lower"),
                              vec_from_json<2>(in["box"].at("upper"), "intent.box.upper"));
      }
    }
    s.sigma_omega_scale = j.value("sigma_omega_scale", s.sigma_omega_scale);
    if (j.contains("planner")) s.planner = planner_from_json(j["planner"], s.planner);
    if (j.contains("hvs")) {
      if (!j["hvs"].is_array()) throw ConfigError("hvs: expected an array");
      for (const auto& h : j["hvs"]) {
        reject_unknown(h, {"id", "label", "init", "phases"}, "hvs[]");
        HvScript hv;
        hv.id = h.at("id").get<int>();
        hv.label = h.value("label", std::string());
        hv.init = vec_from_json<4>(h.at("init"), "hvs[].init");
        if (h.contains("phases")) {
          for (const auto& p : h["phases"]) {
            reject_unknown(p, {"t_start", "t_end", "a_start", "a_end", "a"}, "hvs[].phases[]");
            HvPhase ph;
            ph.t_start = p.at("t_start").get<double>();
            ph.t_end = p.at("t_end").get<double>();
            if (p.contains("a")) {
              ph.a_start = ph.a_end = vec_from_json<2>(p["a"], "phase.a");
            } else {
              ph.a_start = vec_from_json<2>(p.at("a_start"), "phase.a_start");
              ph.a_end = vec_from_json<2>(p.at("a_end"), "phase.a_end");
            }
            hv.phases.push_back(ph);
          }
        }
        s.hvs.push_back(std::move(hv));
      }
    }
    s.validate();
    return s;
  } catch (const ConfigError&) {
    throw;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("scenario: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("scenario: ") + e.what());
  }
}

json parse_json_text(const std::string& text, const std::string& origin) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    std::size_t line = 1, col = 1;
    const std::size_t end = std::min<std::size_t>(e.byte == 0 ? 0 : e.byte - 1, text.size());
    for (std::size_t i = 0; i < end; ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    std::ostringstream msg;
    msg << origin << ':' << line << ':' << col << ": " << e.what();
    throw ConfigError(msg.str());
  }
}

Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(path.string() + ": cannot open scenario file");
  std::ostringstream buf;
  buf << in.rdbuf();
  const json j = parse_json_text(buf.str(), path.string());
  try {
    return scenario_from_json(j);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

}  // namespace contplan
