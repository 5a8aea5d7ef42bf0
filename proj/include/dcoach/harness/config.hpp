#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#define TOML_EXCEPTIONS 1
#include <toml.hpp>

#include "dcoach/agent/agent.hpp"
#include "dcoach/teacher/teacher.hpp"

namespace dcoach::harness {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct AgentSection {
  std::size_t K = 200;
  std::size_t N = 50;
  std::size_t b = 10;
  double e = 1.0;
  double lr = 0.0003;
  std::string mode = "decoupled";
  std::string coupled_map = "none";
  bool buffer = true;
  std::string architecture = "mlp";
  std::vector<std::size_t> hidden{32};
  std::string optimizer = "sgd";

  friend bool operator==(const AgentSection&, const AgentSection&) = default;
};

struct TeacherSection {
  std::string type = "analytic";  // analytic | network
  std::string weights;            // network teachers only
  double alpha = 0.6;
  double tau = 0.0003;
  double p_err = 0.0;
  std::uint64_t seed = 0;  // mixed into each repetition's teacher stream
  std::string flip = "one";

  friend bool operator==(const TeacherSection&, const TeacherSection&) = default;
};

struct EncoderSection {
  std::string path;  // autoencoder directory or manifest; required for pixel environments

  friend bool operator==(const EncoderSection&, const EncoderSection&) = default;
};

struct EvalSection {
  std::size_t episodes = 20;
  std::uint64_t seed = 1000;

  friend bool operator==(const EvalSection&, const EvalSection&) = default;
};

struct AblationSection {
  std::vector<double> p_err{0.0, 0.1, 0.2};
  std::vector<bool> buffer{true, false};

  friend bool operator==(const AblationSection&, const AblationSection&) = default;
};

struct SessionSection {
  std::string mode = "human";  // human | simulated-teacher | eval
  double fps = 0.0;            // 0 = environment rate
  std::uint64_t seed = 0;

  friend bool operator==(const SessionSection&, const SessionSection&) = default;
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::string profile;
  std::string env = "cartpole";
  std::size_t repetitions = 1;
  std::vector<std::uint64_t> seeds{0};
  std::uint64_t max_steps = 13500;
  double final_fraction = 0.1;  // tail of the time axis averaged into "final return"
  AgentSection agent;
  TeacherSection teacher;
  EncoderSection encoder;
  EvalSection eval;
  AblationSection ablation;
  SessionSection session;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;

  void validate() const {
    if (repetitions == 0) throw ConfigError("experiment.repetitions must be at least 1");
    if (seeds.size() != repetitions) {
      throw ConfigError("experiment.seeds has " + std::to_string(seeds.size()) + " entries but repetitions is " +
                        std::to_string(repetitions));
    }
    if (env != "cartpole" && env != "racer") throw ConfigError("experiment.env must be cartpole or racer, got '" + env + "'");
    if (!(final_fraction > 0 && final_fraction <= 1)) throw ConfigError("experiment.final_fraction must lie in (0, 1]");
    if (agent.K == 0 || agent.N == 0 || agent.b == 0) throw ConfigError("agent.K, agent.N and agent.b must be positive");
    if (!(agent.e > 0)) throw ConfigError("agent.e must be positive");
    if (!(agent.lr > 0)) throw ConfigError("agent.lr must be positive");
    if (agent.architecture != "mlp") throw ConfigError("agent.architecture must be 'mlp', got '" + agent.architecture + "'");
    for (auto h : agent.hidden) {
      if (h == 0) throw ConfigError("agent.hidden entries must be positive");
    }
    try {
      parse_correction_mode(agent.mode);
      coupled_map_by_id(agent.coupled_map);
      nn::parse_optimizer(agent.optimizer);
      teacher::parse_flip_mode(teacher.flip);
      teacher_config(0).validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    if (teacher.type != "analytic" && teacher.type != "network") {
      throw ConfigError("teacher.type must be analytic or network, got '" + teacher.type + "'");
    }
    if (teacher.type == "network" && teacher.weights.empty()) throw ConfigError("teacher.weights is required for network teachers");
    if (eval.episodes == 0) throw ConfigError("eval.episodes must be at least 1");
    for (double p : ablation.p_err) {
      if (!(p >= 0 && p <= 1)) throw ConfigError("ablation.p_err entries must lie in [0, 1]");
    }
    if (session.mode != "human" && session.mode != "simulated-teacher" && session.mode != "eval") {
      throw ConfigError("session.mode must be human, simulated-teacher or eval");
    }
    if (session.fps < 0) throw ConfigError("session.fps must be non-negative");
  }

  AgentConfig agent_config() const {
    AgentConfig c;
    c.correction.e = agent.e;
    c.correction.mode = parse_correction_mode(agent.mode);
    c.correction.coupled_map = coupled_map_by_id(agent.coupled_map);
    c.buffer_capacity = agent.K;
    c.buffer_sample_size = agent.N;
    c.update_interval = agent.b;
    c.learning_rate = agent.lr;
    c.buffer_enabled = agent.buffer;
    c.optimizer.kind = nn::parse_optimizer(agent.optimizer);
    return c;
  }

  teacher::TeacherConfig teacher_config(std::uint64_t stream_seed) const {
    return {teacher.alpha, teacher.tau, teacher.p_err, stream_seed, teacher::parse_flip_mode(teacher.flip)};
  }

  // Seeds seed, seed+1, ... for every repetition.
  void reseed(std::uint64_t base) {
    seeds.resize(repetitions);
    for (std::size_t i = 0; i < repetitions; ++i) seeds[i] = base + i;
  }
};

namespace detail {

inline std::string join_keys(const std::set<std::string>& keys) {
  std::string out;
  for (const auto& k : keys) out += (out.empty() ? "" : ", ") + k;
  return out;
}

inline void reject_unknown(const toml::table& t, const std::string& where, const std::set<std::string>& known) {
  for (const auto& [k, v] : t) {
    if (!known.count(std::string(k.str()))) {
      throw ConfigError("unknown key '" + (where.empty() ? "" : where + ".") + std::string(k.str()) + "' (known: " +
                        join_keys(known) + ")");
    }
  }
}

inline const toml::table* section(const toml::table& root, const char* name) {
  const auto* node = root.get(name);
  if (!node) return nullptr;
  const auto* t = node->as_table();
  if (!t) throw ConfigError(std::string("'") + name + "' must be a table");
  return t;
}

template <typename T>
void read(const toml::table* t, const std::string& where, const char* key, T& out) {
  if (!t) return;
  const auto* node = t->get(key);
  if (!node) return;
  const std::string path = where + "." + key;
  if constexpr (std::is_same_v<T, bool>) {
    if (!node->is_boolean()) throw ConfigError(path + ": expected a boolean");
    out = node->as_boolean()->get();
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!node->is_string()) throw ConfigError(path + ": expected a string");
    out = node->as_string()->get();
  } else if constexpr (std::is_floating_point_v<T>) {
    if (node->is_integer()) {
      out = static_cast<T>(node->as_integer()->get());
    } else if (node->is_floating_point()) {
      out = static_cast<T>(node->as_floating_point()->get());
    } else {
      throw ConfigError(path + ": expected a number");
    }
  } else if constexpr (std::is_integral_v<T>) {
    if (!node->is_integer()) throw ConfigError(path + ": expected an integer");
    const auto v = node->as_integer()->get();
    if (v < 0) throw ConfigError(path + ": must be non-negative");
    out = static_cast<T>(v);
  } else {
    using E = typename T::value_type;
    const auto* arr = node->as_array();
    if (!arr) throw ConfigError(path + ": expected an array");
    T values;
    for (std::size_t i = 0; i < arr->size(); ++i) {
      toml::table tmp;
      tmp.insert("x", *arr->get(i));
      E e{};
      read(&tmp, path + "[" + std::to_string(i) + "]", "x", e);
      values.push_back(e);
    }
    out = std::move(values);
  }
}

template <typename Seq>
toml::array to_array(const Seq& seq) {
  toml::array a;
  for (auto v : seq) {
    if constexpr (std::is_same_v<std::decay_t<decltype(v)>, bool>) {
      a.push_back(static_cast<bool>(v));
    } else if constexpr (std::is_integral_v<std::decay_t<decltype(v)>>) {
      a.push_back(static_cast<std::int64_t>(v));
    } else {
      a.push_back(static_cast<double>(v));
    }
  }
  return a;
}

// Parses a command-line override value as a TOML value, falling back to a bare string.
inline toml::table parse_override_value(const std::string& text) {
  try {
    return toml::parse("x = " + text);
  } catch (const toml::parse_error&) {
    toml::table t;
    t.insert("x", text);
    return t;
  }
}

}  // namespace detail

ExperimentConfig profile(const std::string& name);

// Applies "section.key=value" onto a parsed TOML document (creating tables as needed).
inline void apply_override(toml::table& root, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' must look like key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string value = assignment.substr(eq + 1);
  std::vector<std::string> parts;
  std::stringstream ss(key);
  for (std::string p; std::getline(ss, p, '.');) {
    if (p.empty()) throw ConfigError("override key '" + key + "' has an empty component");
    parts.push_back(p);
  }
  toml::table* t = &root;
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    auto* node = t->get(parts[i]);
    if (!node) {
      t->insert(parts[i], toml::table{});
      node = t->get(parts[i]);
    }
    t = node->as_table();
    if (!t) throw ConfigError("override key '" + key + "': '" + parts[i] + "' is not a table");
  }
  auto parsed = detail::parse_override_value(value);
  t->insert_or_assign(parts.back(), *parsed.get("x"));
}

// Config from a TOML document. An optional experiment.profile supplies defaults the document overrides.
inline ExperimentConfig config_from_toml(const toml::table& root) {
  using detail::read;
  detail::reject_unknown(root, "", {"experiment", "agent", "teacher", "encoder", "eval", "ablation", "session"});
  const auto* ex = detail::section(root, "experiment");
  ExperimentConfig c;
  std::string prof;
  read(ex, "experiment", "profile", prof);
  if (!prof.empty()) c = profile(prof);

  if (ex) {
    detail::reject_unknown(*ex, "experiment",
                           {"name", "profile", "env", "repetitions", "seeds", "seed", "max_steps", "final_fraction"});
  }
  read(ex, "experiment", "name", c.name);
  read(ex, "experiment", "env", c.env);
  const auto old_reps = c.repetitions;
  read(ex, "experiment", "repetitions", c.repetitions);
  read(ex, "experiment", "max_steps", c.max_steps);
  read(ex, "experiment", "final_fraction", c.final_fraction);
  const bool has_seeds = ex && ex->get("seeds");
  if (has_seeds) {
    read(ex, "experiment", "seeds", c.seeds);
  } else if (ex && ex->get("seed")) {
    std::uint64_t base = 0;
    read(ex, "experiment", "seed", base);
    c.reseed(base);
  } else if (c.repetitions != old_reps || c.seeds.size() != c.repetitions) {
    c.reseed(c.seeds.empty() ? 0 : c.seeds.front());
  }

  if (const auto* a = detail::section(root, "agent")) {
    detail::reject_unknown(*a, "agent",
                           {"K", "N", "b", "e", "lr", "mode", "coupled_map", "buffer", "architecture", "hidden", "optimizer"});
    read(a, "agent", "K", c.agent.K);
    read(a, "agent", "N", c.agent.N);
    read(a, "agent", "b", c.agent.b);
    read(a, "agent", "e", c.agent.e);
    read(a, "agent", "lr", c.agent.lr);
    read(a, "agent", "mode", c.agent.mode);
    read(a, "agent", "coupled_map", c.agent.coupled_map);
    read(a, "agent", "buffer", c.agent.buffer);
    read(a, "agent", "architecture", c.agent.architecture);
    read(a, "agent", "hidden", c.agent.hidden);
    read(a, "agent", "optimizer", c.agent.optimizer);
  }
  if (const auto* t = detail::section(root, "teacher")) {
    detail::reject_unknown(*t, "teacher", {"type", "weights", "alpha", "tau", "p_err", "seed", "flip"});
    read(t, "teacher", "type", c.teacher.type);
    read(t, "teacher", "weights", c.teacher.weights);
    read(t, "teacher", "alpha", c.teacher.alpha);
    read(t, "teacher", "tau", c.teacher.tau);
    read(t, "teacher", "p_err", c.teacher.p_err);
    read(t, "teacher", "seed", c.teacher.seed);
    read(t, "teacher", "flip", c.teacher.flip);
  }
  if (const auto* e = detail::section(root, "encoder")) {
    detail::reject_unknown(*e, "encoder", {"path"});
    read(e, "encoder", "path", c.encoder.path);
  }
  if (const auto* e = detail::section(root, "eval")) {
    detail::reject_unknown(*e, "eval", {"episodes", "seed"});
    read(e, "eval", "episodes", c.eval.episodes);
    read(e, "eval", "seed", c.eval.seed);
  }
  if (const auto* a = detail::section(root, "ablation")) {
    detail::reject_unknown(*a, "ablation", {"p_err", "buffer"});
    read(a, "ablation", "p_err", c.ablation.p_err);
    read(a, "ablation", "buffer", c.ablation.buffer);
  }
  if (const auto* s = detail::section(root, "session")) {
    detail::reject_unknown(*s, "session", {"mode", "fps", "seed"});
    read(s, "session", "mode", c.session.mode);
    read(s, "session", "fps", c.session.fps);
    read(s, "session", "seed", c.session.seed);
  }
  c.validate();
  return c;
}

inline toml::table config_to_toml(const ExperimentConfig& c) {
  toml::table ex{{"name", c.name},
                 {"env", c.env},
                 {"repetitions", static_cast<std::int64_t>(c.repetitions)},
                 {"seeds", detail::to_array(c.seeds)},
                 {"max_steps", static_cast<std::int64_t>(c.max_steps)},
                 {"final_fraction", c.final_fraction}};
  if (!c.profile.empty()) ex.insert("profile", c.profile);
  toml::table agent{{"K", static_cast<std::int64_t>(c.agent.K)},
                    {"N", static_cast<std::int64_t>(c.agent.N)},
                    {"b", static_cast<std::int64_t>(c.agent.b)},
                    {"e", c.agent.e},
                    {"lr", c.agent.lr},
                    {"mode", c.agent.mode},
                    {"coupled_map", c.agent.coupled_map},
                    {"buffer", c.agent.buffer},
                    {"architecture", c.agent.architecture},
                    {"hidden", detail::to_array(c.agent.hidden)},
                    {"optimizer", c.agent.optimizer}};
  toml::table teacher{{"type", c.teacher.type},   {"weights", c.teacher.weights},
                      {"alpha", c.teacher.alpha}, {"tau", c.teacher.tau},
                      {"p_err", c.teacher.p_err}, {"seed", static_cast<std::int64_t>(c.teacher.seed)},
                      {"flip", c.teacher.flip}};
  toml::table encoder{{"path", c.encoder.path}};
  toml::table eval{{"episodes", static_cast<std::int64_t>(c.eval.episodes)}, {"seed", static_cast<std::int64_t>(c.eval.seed)}};
  toml::table ablation{{"p_err", detail::to_array(c.ablation.p_err)}, {"buffer", detail::to_array(c.ablation.buffer)}};
  toml::table session{{"mode", c.session.mode}, {"fps", c.session.fps}, {"seed", static_cast<std::int64_t>(c.session.seed)}};
  return toml::table{{"experiment", ex}, {"agent", agent},       {"teacher", teacher}, {"encoder", encoder},
                     {"eval", eval},     {"ablation", ablation}, {"session", session}};
}

inline std::string config_to_string(const ExperimentConfig& c) {
  std::ostringstream os;
  os << config_to_toml(c) << '\n';
  return os.str();
}

inline ExperimentConfig parse_config_string(const std::string& text, const std::vector<std::string>& overrides = {}) {
  toml::table root;
  try {
    root = toml::parse(text);
  } catch (const toml::parse_error& e) {
    std::ostringstream os;
    os << "config parse error: " << e.description() << " at line " << e.source().begin.line;
    throw ConfigError(os.str());
  }
  auto overrides_key = [&](std::string_view key) {
    return std::any_of(overrides.begin(), overrides.end(), [&](const std::string& o) {
      return o.compare(0, key.size(), key) == 0 && o.size() > key.size() && (o[key.size()] == '=' || o[key.size()] == ' ');
    });
  };
  // A repetition count given on the command line regenerates the seed list from its first entry.
  if (overrides_key("experiment.repetitions") && !overrides_key("experiment.seeds") && !overrides_key("experiment.seed")) {
    if (auto* ex = root["experiment"].as_table()) {
      if (auto* seeds = ex->get_as<toml::array>("seeds")) {
        const std::int64_t first = seeds->empty() ? 0 : seeds->get(0)->value_or<std::int64_t>(0);
        ex->erase("seeds");
        ex->insert_or_assign("seed", first);
      }
    }
  }
  for (const auto& o : overrides) apply_override(root, o);
  // An overridden profile re-bases everything that the document does not set explicitly.
  return config_from_toml(root);
}

inline ExperimentConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {}) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file '" + path.string() + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config_string(ss.str(), overrides);
}

// Shipped parameter sets. Learning rates, buffer sizes and teacher schedule follow the published
// experiment captions; e = 1 everywhere.
inline std::map<std::string, ExperimentConfig> default_profiles() {
  std::map<std::string, ExperimentConfig> out;

  ExperimentConfig cp;
  cp.name = cp.profile = "cartpole-sim";
  cp.env = "cartpole";
  cp.repetitions = 30;
  cp.reseed(0);
  cp.max_steps = 13500;  // 600 s at 22.5 FPS
  cp.agent = AgentSection{200, 50, 10, 1.0, 0.0003, "decoupled", "none", true, "mlp", {32}, "sgd"};
  cp.teacher = TeacherSection{"analytic", "", 0.6, 0.0003, 0.0, 0, "one"};
  cp.session.mode = "simulated-teacher";
  out[cp.name] = cp;

  ExperimentConfig ch = cp;
  ch.name = ch.profile = "cartpole-human";
  ch.repetitions = 1;
  ch.reseed(0);
  ch.agent.lr = 0.003;
  ch.session.mode = "human";
  out[ch.name] = ch;

  ExperimentConfig rs;
  rs.name = rs.profile = "racer-sim";
  rs.env = "racer";
  rs.repetitions = 10;
  rs.reseed(0);
  rs.max_steps = 73800;  // 60 min at 20.5 FPS
  rs.agent = AgentSection{1000, 100, 10, 1.0, 0.0003, "decoupled", "none", true, "mlp", {32}, "sgd"};
  rs.teacher = TeacherSection{"analytic", "", 0.6, 0.000015, 0.0, 0, "one"};
  rs.encoder.path = "models/racer-ae";
  rs.session.mode = "simulated-teacher";
  out[rs.name] = rs;

  ExperimentConfig rh = rs;
  rh.name = rh.profile = "racer-human";
  rh.repetitions = 1;
  rh.reseed(0);
  rh.agent.lr = 0.001;
  rh.agent.mode = "coupled";
  rh.agent.coupled_map = "racer";
  rh.session.mode = "human";
  out[rh.name] = rh;
  return out;
}

inline ExperimentConfig profile(const std::string& name) {
  auto all = default_profiles();
  auto it = all.find(name);
  if (it == all.end()) {
    std::set<std::string> names;
    for (const auto& [k, v] : all) names.insert(k);
    throw ConfigError("unknown profile '" + name + "' (known: " + detail::join_keys(names) + ")");
  }
  return it->second;
}

}  // namespace dcoach::harness
