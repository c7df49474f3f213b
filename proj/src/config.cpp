#include "bcp/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

namespace bcp::config {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string_view> split_list(std::string_view v) {
  std::vector<std::string_view> out;
  if (trim(v).empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto comma = v.find(',', start);
    out.push_back(trim(v.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view want) {
  throw ConfigError("bad value '" + std::string(value) + "' for " + std::string(key) + " (expected " +
                    std::string(want) + ")");
}

template <typename T>
T parse_number(std::string_view key, std::string_view v) {
  T out{};
  const char* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end || v.empty()) {
    bad_value(key, v, std::is_floating_point_v<T> ? "a number" : "an integer");
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_value(key, v, "true or false");
}

data::TriggerKind parse_kind(std::string_view key, std::string_view v) {
  auto k = data::parse_trigger(v);
  if (!k) bad_value(key, v, "red, gaussian or colorshift");
  return *k;
}

std::string fmt(double x) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, ptr);
}

template <typename T>
std::string fmt_int(T x) {
  return std::to_string(x);
}

template <typename T, typename F>
std::string join(const std::vector<T>& xs, F f) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ',';
    out += f(xs[i]);
  }
  return out;
}

struct Key {
  std::string name;
  bool hashed;
  std::function<void(ExperimentConfig&, std::string_view)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define BCP_DOUBLE(name_, field_)                                                         \
  Key {                                                                                   \
    name_, true, [](ExperimentConfig& c, std::string_view v) {                            \
      c.field_ = parse_number<double>(name_, v);                                          \
    },                                                                                    \
        [](const ExperimentConfig& c) { return fmt(c.field_); }                           \
  }
#define BCP_INT(name_, field_)                                                            \
  Key {                                                                                   \
    name_, true, [](ExperimentConfig& c, std::string_view v) {                            \
      c.field_ = parse_number<decltype(c.field_)>(name_, v);                              \
    },                                                                                    \
        [](const ExperimentConfig& c) { return fmt_int(c.field_); }                       \
  }

const std::vector<Key>& keys() {
  static const std::vector<Key> table = [] {
    std::vector<Key> k{
        BCP_INT("seed", seed),
        BCP_INT("demo_episodes", demo_episodes),
        BCP_INT("demo_seed", demo_seed),
        BCP_INT("obs_size", obs_size),
        BCP_DOUBLE("view_span", env.render.world_units_per_view),
        BCP_DOUBLE("gauge_speed_per_pixel", env.render.speed_per_gauge_pixel),
        BCP_INT("gauge_rows", env.render.gauge_rows),
        BCP_INT("track_waypoints", env.track.n_waypoints),
        BCP_DOUBLE("track_radius", env.track.base_radius),
        BCP_DOUBLE("track_noise", env.track.radial_noise),
        BCP_DOUBLE("track_half_width", env.track.half_width),
        BCP_DOUBLE("env_dt", env.env.dt),
        BCP_DOUBLE("env_a_gas", env.env.a_gas),
        BCP_DOUBLE("env_a_brake", env.env.a_brake),
        BCP_DOUBLE("env_friction", env.env.friction),
        BCP_DOUBLE("env_v_max", env.env.v_max),
        BCP_DOUBLE("env_steer_delta", env.env.steer_delta),
        BCP_DOUBLE("env_capture_radius", env.env.capture_radius),
        BCP_DOUBLE("env_off_margin", env.env.off_margin),
        BCP_INT("env_max_off_streak", env.env.max_off_streak),
        BCP_INT("env_t_max", env.env.t_max),
        BCP_DOUBLE("env_step_penalty", env.env.per_step_penalty),
        BCP_DOUBLE("env_off_track_penalty", env.env.off_track_penalty),
        BCP_DOUBLE("env_lap_reward", env.env.lap_reward_total),
        BCP_INT("expert_lookahead", expert.lookahead),
        BCP_DOUBLE("expert_deadband", expert.angle_deadband),
        BCP_DOUBLE("expert_v_target", expert.v_target),
        BCP_DOUBLE("expert_brake_curvature", expert.brake_curvature),
    };
    k.push_back({"conv_widths", true,
                 [](ExperimentConfig& c, std::string_view v) {
                   auto xs = split_list(v);
                   if (xs.size() != 3) bad_value("conv_widths", v, "three integers");
                   for (std::size_t i = 0; i < 3; ++i) c.widths.conv[i] = parse_number<int>("conv_widths", xs[i]);
                 },
                 [](const ExperimentConfig& c) {
                   return join(std::vector<int>(c.widths.conv.begin(), c.widths.conv.end()), fmt_int<int>);
                 }});
    k.push_back({"fc_widths", true,
                 [](ExperimentConfig& c, std::string_view v) {
                   auto xs = split_list(v);
                   if (xs.size() != 2) bad_value("fc_widths", v, "two integers");
                   for (std::size_t i = 0; i < 2; ++i) c.widths.fc[i] = parse_number<int>("fc_widths", xs[i]);
                 },
                 [](const ExperimentConfig& c) {
                   return join(std::vector<int>(c.widths.fc.begin(), c.widths.fc.end()), fmt_int<int>);
                 }});
    std::vector<Key> rest{
        BCP_DOUBLE("learning_rate", train.adam.lr),
        BCP_DOUBLE("adam_beta1", train.adam.beta1),
        BCP_DOUBLE("adam_beta2", train.adam.beta2),
        BCP_DOUBLE("adam_eps", train.adam.eps),
        BCP_INT("batch_size", train.batch_size),
        BCP_INT("epochs", train.epochs),
        BCP_DOUBLE("holdout_fraction", train.holdout_fraction),
        BCP_INT("grad_shards", train.grad_shards),
    };
    k.insert(k.end(), rest.begin(), rest.end());
    k.push_back({"target_action", true,
                 [](ExperimentConfig& c, std::string_view v) {
                   auto a = envsim::parse_action(v);
                   if (!a) bad_value("target_action", v, "noop, gas, left, right or brake");
                   c.target_action = *a;
                 },
                 [](const ExperimentConfig& c) { return std::string(envsim::action_name(c.target_action)); }});
    k.push_back(BCP_DOUBLE("poison_fraction", poison_fraction));
    k.push_back({"patch_type", true,
                 [](ExperimentConfig& c, std::string_view v) { c.patch.kind = parse_kind("patch_type", v); },
                 [](const ExperimentConfig& c) { return std::string(data::trigger_name(c.patch.kind)); }});
    std::vector<Key> patch{
        BCP_INT("patch_size", patch.size),
        BCP_INT("patch_row", patch.anchor_row),
        BCP_INT("patch_col", patch.anchor_col),
        BCP_INT("gaussian_seed", patch.gaussian_seed),
        BCP_INT("shift_offset", patch.shift_offset),
        BCP_INT("n_rollouts", n_rollouts),
        BCP_INT("eval_track_seed", eval_track_seed),
        BCP_INT("attack_rollouts", attack_rollouts),
        BCP_INT("budget", budget),
        BCP_DOUBLE("entropy_threshold", entropy_threshold),
    };
    k.insert(k.end(), patch.begin(), patch.end());
    k.push_back({"sample_actions", true,
                 [](ExperimentConfig& c, std::string_view v) { c.sample_actions = parse_bool("sample_actions", v); },
                 [](const ExperimentConfig& c) { return std::string(c.sample_actions ? "true" : "false"); }});
    k.push_back(BCP_INT("sweep_seeds", sweep_seeds));
    k.push_back({"sweeps", true,
                 [](ExperimentConfig& c, std::string_view v) {
                   c.sweeps.clear();
                   for (auto s : split_list(v)) {
                     if (s != "fraction" && s != "size" && s != "type") bad_value("sweeps", s, "fraction, size or type");
                     c.sweeps.emplace_back(s);
                   }
                 },
                 [](const ExperimentConfig& c) { return join(c.sweeps, [](const std::string& s) { return s; }); }});
    k.push_back({"fraction_grid", true,
                 [](ExperimentConfig& c, std::string_view v) {
                   c.fraction_grid.clear();
                   for (auto s : split_list(v)) c.fraction_grid.push_back(parse_number<double>("fraction_grid", s));
                 },
                 [](const ExperimentConfig& c) { return join(c.fraction_grid, fmt); }});
    auto kinds_key = [](std::string name, std::vector<data::TriggerKind> ExperimentConfig::*field) {
      return Key{name, true,
                 [name, field](ExperimentConfig& c, std::string_view v) {
                   (c.*field).clear();
                   for (auto s : split_list(v)) (c.*field).push_back(parse_kind(name, s));
                 },
                 [field](const ExperimentConfig& c) {
                   return join(c.*field, [](data::TriggerKind t) { return std::string(data::trigger_name(t)); });
                 }};
    };
    k.push_back(kinds_key("fraction_patch_types", &ExperimentConfig::fraction_patch_types));
    k.push_back({"size_grid", true,
                 [](ExperimentConfig& c, std::string_view v) {
                   c.size_grid.clear();
                   for (auto s : split_list(v)) c.size_grid.push_back(s == "H" ? 0 : parse_number<int>("size_grid", s));
                 },
                 [](const ExperimentConfig& c) {
                   return join(c.size_grid, [](int n) { return n == 0 ? std::string("H") : std::to_string(n); });
                 }});
    k.push_back({"size_fractions", true,
                 [](ExperimentConfig& c, std::string_view v) {
                   c.size_fractions.clear();
                   for (auto s : split_list(v)) c.size_fractions.push_back(parse_number<double>("size_fractions", s));
                 },
                 [](const ExperimentConfig& c) { return join(c.size_fractions, fmt); }});
    k.push_back(kinds_key("type_grid", &ExperimentConfig::type_grid));
    k.push_back(BCP_DOUBLE("type_fraction", type_fraction));

    Key workers = BCP_INT("workers", workers);
    workers.hashed = false;
    k.push_back(workers);
    k.push_back({"record_timing", false,
                 [](ExperimentConfig& c, std::string_view v) { c.record_timing = parse_bool("record_timing", v); },
                 [](const ExperimentConfig& c) { return std::string(c.record_timing ? "true" : "false"); }});
    auto path_key = [](std::string name, std::filesystem::path ExperimentConfig::*field) {
      return Key{name, false, [field](ExperimentConfig& c, std::string_view v) { c.*field = std::string(v); },
                 [field](const ExperimentConfig& c) { return (c.*field).string(); }};
    };
    k.push_back(path_key("out_dir", &ExperimentConfig::out_dir));
    k.push_back(path_key("input_dataset", &ExperimentConfig::input_dataset));
    k.push_back(path_key("input_checkpoint", &ExperimentConfig::input_checkpoint));
    k.push_back(path_key("input_csv", &ExperimentConfig::input_csv));
    return k;
  }();
  return table;
}

#undef BCP_DOUBLE
#undef BCP_INT

}  // namespace

void ExperimentConfig::set(std::string_view key, std::string_view value) {
  for (const Key& k : keys()) {
    if (k.name == key) {
      k.set(*this, trim(value));
      if (key == "obs_size") {
        env.render.height = obs_size;
        env.render.width = obs_size;
      }
      return;
    }
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

void ExperimentConfig::validate() const {
  if (obs_size <= 0 || obs_size % 8 != 0) throw ConfigError("obs_size must be a positive multiple of 8");
  if (demo_episodes < 1) throw ConfigError("demo_episodes must be >= 1");
  if (env.render.height != obs_size || env.render.width != obs_size) throw ConfigError("render size != obs_size");
  env.env.validate();
  env.render.validate();
  expert.validate(env.env);
  train.validate();
  patch.validate(obs_size, obs_size);
  if (!(poison_fraction >= 0.0 && poison_fraction <= 1.0)) throw ConfigError("poison_fraction must be in [0,1]");
  if (n_rollouts < 1) throw ConfigError("n_rollouts must be >= 1");
  if (attack_rollouts < 1) throw ConfigError("attack_rollouts must be >= 1");
  if (budget < 0) throw ConfigError("budget must be >= 0");
  if (!(entropy_threshold > 0.0)) throw ConfigError("entropy_threshold must be > 0");
  if (sweep_seeds < 1) throw ConfigError("sweep_seeds must be >= 1");
  if (workers < 0) throw ConfigError("workers must be >= 0");
  for (double f : fraction_grid) {
    if (!(f >= 0.0 && f <= 1.0)) throw ConfigError("fraction_grid values must be in [0,1]");
  }
  for (double f : size_fractions) {
    if (!(f >= 0.0 && f <= 1.0)) throw ConfigError("size_fractions values must be in [0,1]");
  }
  if (!(type_fraction >= 0.0 && type_fraction <= 1.0)) throw ConfigError("type_fraction must be in [0,1]");
  for (const auto& s : sweeps) {
    if (s == "size") {
      for (int n : size_grid) trigger(data::TriggerKind::RedPatch, resolve_size(n)).validate(obs_size, obs_size);
    }
    const bool empty = (s == "fraction" && (fraction_grid.empty() || fraction_patch_types.empty())) ||
                       (s == "size" && (size_grid.empty() || size_fractions.empty())) ||
                       (s == "type" && type_grid.empty());
    if (empty) throw ConfigError("sweep '" + s + "' has an empty grid");
  }
}

std::string ExperimentConfig::to_text() const {
  std::string out;
  for (const Key& k : keys()) out += k.name + "=" + k.get(*this) + "\n";
  return out;
}

std::string ExperimentConfig::hash() const {
  std::string text;
  for (const Key& k : keys()) {
    if (k.hashed) text += k.name + "=" + k.get(*this) + "\n";
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a64(text)));
  return buf;
}

data::TriggerSpec ExperimentConfig::trigger(data::TriggerKind kind, int size) const {
  data::TriggerSpec t = patch;
  t.kind = kind;
  t.size = size;
  return t;
}

ExperimentConfig parse_config(std::string_view text, std::string_view source) {
  ExperimentConfig c;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = std::string(source) + ":" + std::to_string(line_no) + ": ";
    if (eq == std::string_view::npos) throw ConfigError(where + "expected key=value");
    try {
      c.set(trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string(source) + ": " + e.what());
  }
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

std::vector<std::string> known_keys() {
  std::vector<std::string> out;
  for (const Key& k : keys()) out.push_back(k.name);
  return out;
}

}  // namespace bcp::config
