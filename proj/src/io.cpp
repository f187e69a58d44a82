#include "latent/io.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace latent::io {
namespace {

[[noreturn]] void parse_error(const std::string& what) { throw Error(Errc::kParse, what); }

double number_field(const json& doc, const std::string& key) {
  if (!doc.contains(key)) parse_error("missing field '" + key + "'");
  const json& v = doc.at(key);
  if (!v.is_number()) parse_error("field '" + key + "' must be a number");
  return v.get<double>();
}

template <typename Int>
Int integer_field(const json& doc, const std::string& key) {
  const json& v = doc.at(key);
  if (!v.is_number_integer()) parse_error("field '" + key + "' must be an integer");
  return v.get<Int>();
}

std::string string_field(const json& doc, const std::string& key) {
  const json& v = doc.at(key);
  if (!v.is_string()) parse_error("field '" + key + "' must be a string");
  return v.get<std::string>();
}

Vector vector_field(const json& doc, const std::string& key) {
  if (!doc.contains(key)) parse_error("missing field '" + key + "'");
  const json& v = doc.at(key);
  if (!v.is_array()) parse_error("field '" + key + "' must be an array of numbers");
  Vector out(static_cast<Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_number()) parse_error("field '" + key + "[" + std::to_string(i) + "]' must be a number");
    out[static_cast<Index>(i)] = v[i].get<double>();
  }
  return out;
}

Distribution probability_field(const json& doc, const std::string& key) {
  const Vector w = vector_field(doc, key);
  for (Index i = 0; i < w.size(); ++i) {
    if (!std::isfinite(w[i])) {
      throw Error(Errc::kNonFiniteEntry, "field '" + key + "[" + std::to_string(i) + "]' is not finite");
    }
    if (w[i] < 0.0) {
      throw Error(Errc::kNegativeEntry, "field '" + key + "[" + std::to_string(i) + "]' is negative");
    }
  }
  try {
    return make_distribution(w);
  } catch (const Error& e) {
    throw Error(e.code(), "field '" + key + "': " + e.what());
  }
}

Cell cell_from_json(const json& v, const std::string& what) {
  if (!v.is_array() || v.size() != 2 || !v[0].is_number_integer() || !v[1].is_number_integer()) {
    parse_error(what + " must be an [x, y] pair of integers");
  }
  return {v[0].get<int>(), v[1].get<int>()};
}

json cell_to_json(Cell c) { return json::array({c.x, c.y}); }

void reject_unknown(const json& doc, const std::set<std::string>& known, const std::string& what) {
  for (const auto& [key, value] : doc.items()) {
    if (known.count(key) == 0) parse_error("unknown " + what + " field '" + key + "'");
  }
}

json scalar_from_text(const std::string& raw) {
  const auto first = raw.find_first_not_of(" \t");
  const auto last = raw.find_last_not_of(" \t\r");
  const std::string value = first == std::string::npos ? "" : raw.substr(first, last - first + 1);
  if (value.empty()) parse_error("empty value in config");
  try {
    return json::parse(value);
  } catch (const json::exception&) {
    return value;  // bare word, e.g. regime = two_stage
  }
}

}  // namespace

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::kIo, "cannot open '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

json parse_json(const std::string& text, const std::string& origin) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    parse_error(origin + ": " + e.what());
  }
}

StateInstance state_instance_from_json(const json& doc) {
  if (!doc.is_object()) parse_error("instance must be a JSON object");
  reject_unknown(doc, {"pi_ref", "pi_prop", "eps", "beta", "u_star"}, "instance");
  Distribution pi_ref = probability_field(doc, "pi_ref");
  Distribution pi_prop = probability_field(doc, "pi_prop");
  const double eps = number_field(doc, "eps");
  const double beta = doc.contains("beta") ? number_field(doc, "beta") : 0.01;
  UtilityVector u = doc.contains("u_star") ? UtilityVector(vector_field(doc, "u_star")) : UtilityVector::zeros(pi_ref.size());
  if (!(eps > 0.0)) parse_error("field 'eps' must be positive");
  if (!(beta > 0.0)) parse_error("field 'beta' must be positive");
  if (pi_prop.size() != pi_ref.size()) parse_error("fields 'pi_ref' and 'pi_prop' differ in length");
  if (u.size() != pi_ref.size()) parse_error("field 'u_star' differs in length from 'pi_ref'");
  return StateInstance::make(std::move(pi_ref), std::move(pi_prop), std::move(u), eps, beta);
}

json to_json(const WaterfillResult& result) {
  const Vector& p = result.pi_star.probs();
  json mask = json::array();
  for (bool b : result.capped_mask) mask.push_back(b);
  return {{"pi_star", std::vector<double>(p.data(), p.data() + p.size())},
          {"tau", result.tau},
          {"capped_mask", mask},
          {"mass_residual", result.mass_residual},
          {"phi_residual", result.phi_residual}};
}

json to_json(const DeltaJDecomposition& d) {
  json out{{"M", d.transfer}, {"delta_j", d.delta_j}, {"degenerate", d.degenerate()}};
  out["u_plus"] = d.u_plus ? json(*d.u_plus) : json(nullptr);
  out["u_minus"] = d.u_minus ? json(*d.u_minus) : json(nullptr);
  return out;
}

json to_json(const VerificationReport& report) {
  json checks = json::array();
  for (const auto& c : report.checks) {
    json entry{{"name", to_string(c.kind)}, {"passed", c.passed}, {"margin", c.margin}, {"required", c.required}};
    if (c.resolution > 0) entry["resolution"] = c.resolution;
    checks.push_back(std::move(entry));
  }
  json out{{"instance_id", report.instance_id},
           {"population", report.population},
           {"passed", report.passed()},
           {"worst_margin", report.worst_margin},
           {"checks", std::move(checks)}};
  if (!report.refinement.empty()) {
    json steps = json::array();
    for (const auto& r : report.refinement) {
      steps.push_back({{"resolution", r.resolution}, {"tau", r.tau}, {"delta_j", r.delta_j}});
    }
    out["refinement"] = std::move(steps);
    out["tau_differences_decreasing"] = report.tau_differences_decreasing;
    out["refinement_within_bound"] = report.refinement_within_bound;
  }
  return out;
}

MazeSpec maze_spec_from_json(const json& doc) {
  if (!doc.is_object()) parse_error("maze must be a JSON object");
  reject_unknown(doc, {"width", "height", "walls", "seed", "wall_fraction", "start", "goal", "max_steps"}, "maze");
  MazeSpec spec;
  spec.generation_seed.reset();
  if (doc.contains("width")) spec.width = integer_field<int>(doc, "width");
  if (doc.contains("height")) spec.height = integer_field<int>(doc, "height");
  if (doc.contains("max_steps")) spec.max_steps = integer_field<int>(doc, "max_steps");
  if (doc.contains("start")) spec.start = cell_from_json(doc.at("start"), "start");
  if (doc.contains("goal")) spec.goal = cell_from_json(doc.at("goal"), "goal");
  if (doc.contains("seed")) spec.generation_seed = integer_field<std::uint64_t>(doc, "seed");
  if (doc.contains("wall_fraction")) spec.wall_fraction = number_field(doc, "wall_fraction");
  if (doc.contains("walls")) {
    const json& walls = doc.at("walls");
    if (!walls.is_array()) parse_error("field 'walls' must be an array of cell pairs");
    for (const auto& w : walls) {
      if (!w.is_array() || w.size() != 2) parse_error("each wall must be a pair of cells");
      spec.walls.push_back({cell_from_json(w[0], "wall cell"), cell_from_json(w[1], "wall cell")});
    }
  }
  return spec;
}

json to_json(const MazeSpec& spec) {
  json walls = json::array();
  for (const auto& w : spec.walls) walls.push_back(json::array({cell_to_json(w.a), cell_to_json(w.b)}));
  json out{{"width", spec.width},
           {"height", spec.height},
           {"walls", std::move(walls)},
           {"wall_fraction", spec.wall_fraction},
           {"start", cell_to_json(spec.start)},
           {"goal", cell_to_json(spec.goal)},
           {"max_steps", spec.max_steps}};
  if (spec.generation_seed) out["seed"] = *spec.generation_seed;
  return out;
}

TrainConfig train_config_from_json(const json& doc) {
  if (!doc.is_object()) parse_error("config must be a JSON object");
  reject_unknown(doc,
                 {"regime", "steps_phase1", "steps_phase2", "group_size", "batch_prompts", "eps", "beta",
                  "learning_rate", "temperature", "seed", "eval_every", "eval_episodes", "inner_epochs",
                  "kl_estimator", "reference_anchor", "num_seeds", "maze"},
                 "config");
  TrainConfig c;
  try {
    if (doc.contains("regime")) c.regime = regime_from_string(string_field(doc, "regime"));
    if (doc.contains("steps_phase1")) c.steps_phase1 = integer_field<int>(doc, "steps_phase1");
    if (doc.contains("steps_phase2")) c.steps_phase2 = integer_field<int>(doc, "steps_phase2");
    if (doc.contains("group_size")) c.group_size = integer_field<int>(doc, "group_size");
    if (doc.contains("batch_prompts")) c.batch_prompts = integer_field<int>(doc, "batch_prompts");
    if (doc.contains("eps")) c.eps = number_field(doc, "eps");
    if (doc.contains("beta")) c.beta = number_field(doc, "beta");
    if (doc.contains("learning_rate")) c.learning_rate = number_field(doc, "learning_rate");
    if (doc.contains("temperature")) c.temperature = number_field(doc, "temperature");
    if (doc.contains("seed")) c.seed = integer_field<std::uint64_t>(doc, "seed");
    if (doc.contains("eval_every")) c.eval_every = integer_field<int>(doc, "eval_every");
    if (doc.contains("eval_episodes")) c.eval_episodes = integer_field<int>(doc, "eval_episodes");
    if (doc.contains("inner_epochs")) c.inner_epochs = integer_field<int>(doc, "inner_epochs");
    if (doc.contains("kl_estimator")) c.kl = kl_estimator_from_string(string_field(doc, "kl_estimator"));
    if (doc.contains("reference_anchor")) {
      c.reference_anchor = anchor_from_string(string_field(doc, "reference_anchor"));
    }
    if (doc.contains("num_seeds")) c.num_seeds = integer_field<int>(doc, "num_seeds");
    if (doc.contains("maze")) c.maze = maze_spec_from_json(doc.at("maze"));
  } catch (const json::exception& e) {
    parse_error(std::string("config: ") + e.what());
  }
  try {
    c.validate();
  } catch (const Error& e) {
    parse_error(std::string("config: ") + e.what());
  }
  return c;
}

TrainConfig train_config_from_text(const std::string& text) {
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') return train_config_from_json(parse_json(text, "config"));

  json doc = json::object();
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) parse_error("config line " + std::to_string(line_no) + ": expected key = value");
    std::string key = line.substr(0, eq);
    key.erase(0, key.find_first_not_of(" \t"));
    key.erase(key.find_last_not_of(" \t") + 1);
    const json value = scalar_from_text(line.substr(eq + 1));
    // maze.width = 8 style keys nest into the maze object.
    if (key.rfind("maze.", 0) == 0) {
      doc["maze"][key.substr(5)] = value;
    } else {
      doc[key] = value;
    }
  }
  return train_config_from_json(doc);
}

json to_json(const TrainConfig& c) {
  return {{"regime", to_string(c.regime)},
          {"steps_phase1", c.steps_phase1},
          {"steps_phase2", c.steps_phase2},
          {"group_size", c.group_size},
          {"batch_prompts", c.batch_prompts},
          {"eps", c.eps},
          {"beta", c.beta},
          {"learning_rate", c.learning_rate},
          {"temperature", c.temperature},
          {"seed", c.seed},
          {"eval_every", c.eval_every},
          {"eval_episodes", c.eval_episodes},
          {"inner_epochs", c.inner_epochs},
          {"kl_estimator", to_string(c.kl)},
          {"reference_anchor", to_string(c.reference_anchor)},
          {"num_seeds", c.num_seeds},
          {"maze", to_json(c.maze)}};
}

json to_json(const ComparisonReport& report) {
  json regimes = json::array();
  for (std::size_t r = 0; r < report.regimes.size(); ++r) {
    const auto& s = report.regimes[r];
    regimes.push_back({{"regime", to_string(s.regime)},
                       {"final_goal_rates", s.final_goal_rates},
                       {"median", s.median},
                       {"q1", s.q1},
                       {"q3", s.q3},
                       {"best", s.best},
                       {"delta_vs_base", s.delta_vs_base},
                       {"trajectories_per_seed", report.trajectories_per_seed[r]},
                       {"gradient_steps_per_seed", report.gradient_steps_per_seed[r]}});
  }
  return {{"seeds", report.seeds},
          {"base", {{"goal_rates", report.base_goal_rates}, {"median", report.base_median}, {"best", report.base_best}}},
          {"regimes", std::move(regimes)},
          {"deltas",
           {{"unrewarded_vs_base", report.unrewarded_vs_base},
            {"two_stage_vs_rewarded_throughout", report.two_stage_vs_throughout},
            {"paired_difference_median", report.paired_difference_median},
            {"paired_difference_ci95", {report.paired_difference_ci_low, report.paired_difference_ci_high}}}}};
}

json to_json(const TabularPolicy& policy) {
  json table = json::object();
  for (const auto& [state, row] : policy.table()) {
    table[std::to_string(state)] = std::vector<double>(row.data(), row.data() + row.size());
  }
  return {{"num_actions", policy.num_actions()}, {"temperature", policy.temperature()}, {"logits", std::move(table)}};
}

TabularPolicy policy_from_json(const json& doc) {
  if (!doc.is_object()) parse_error("policy must be a JSON object");
  TabularPolicy policy(integer_field<int>(doc, "num_actions"), number_field(doc, "temperature"));
  if (doc.contains("logits")) {
    for (const auto& [key, row] : doc.at("logits").items()) {
      StateId state = 0;
      try {
        state = std::stoll(key);
      } catch (const std::exception&) {
        parse_error("policy state id '" + key + "' is not an integer");
      }
      json wrapper{{"row", row}};
      policy.set_logits(state, vector_field(wrapper, "row"));
    }
  }
  return policy;
}

json to_json(const Trajectory& trajectory, const Maze& maze) {
  json states = json::array();
  json actions = json::array();
  for (std::size_t t = 0; t < trajectory.actions.size(); ++t) {
    states.push_back(cell_to_json(maze.cell_of(trajectory.states[t])));
    actions.push_back(to_string(static_cast<Action>(trajectory.actions[t])));
  }
  return {{"states", std::move(states)},
          {"actions", std::move(actions)},
          {"behavior_probs", trajectory.behavior_probs},
          {"final", cell_to_json(maze.cell_of(trajectory.final_state))},
          {"reached_goal", trajectory.reached_goal},
          {"length", trajectory.length()}};
}

}  // namespace latent::io
