#include "dasd/config.hpp"

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

namespace dasd {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("key '" + key + "': expected a number, got '" + v + "'");
  }
  return out;
}

template <typename Int>
Int to_int(const std::string& key, const std::string& v) {
  Int out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("key '" + key + "': expected an integer, got '" + v + "'");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("key '" + key + "': expected true/false, got '" + v + "'");
}

std::vector<double> to_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::stringstream in(v);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(to_double(key, trim(item)));
  return out;
}

// Enum parsers report std::invalid_argument; surface them as config errors.
template <typename F>
auto parse_enum(const std::string& key, const std::string& v, F f) {
  try {
    return f(v);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("key '" + key + "': " + e.what());
  }
}

std::string fmt(double x) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, r.ptr);
}

}  // namespace

const std::vector<std::string>& required_config_keys() {
  static const std::vector<std::string> keys{
      "mode",          "group_size", "rho",     "beta",     "learning_rate", "batch_prompts",
      "updates",       "max_len",    "seed",    "eval_seed", "modulus"};
  return keys;
}

const std::vector<std::string>& known_config_keys() {
  static const std::vector<std::string> keys{
      "mode",           "direction",          "gate",          "gate_threshold",
      "signal",         "rho",                "eps",           "clip_delta_bar",
      "delta_bar_limit", "group_size",        "beta",          "eps_clip",
      "learning_rate",  "lr_schedule",        "batch_prompts", "updates",
      "max_len",        "seed",               "eval_seed",     "modulus",
      "difficulty_weights", "window",         "warmup_examples", "warmup_lr",
      "warmup_revision_rate", "eval_instances", "exclude_eval_prompts", "eval_k",      "eval_every",
      "checkpoint_every", "flip_arm",         "flip_step",     "workers"};
  return keys;
}

std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) {
      throw ConfigError("line " + std::to_string(lineno) + ": empty key or value");
    }
    if (!out.emplace(key, value).second) {
      throw ConfigError("line " + std::to_string(lineno) + ": repeated key '" + key + "'");
    }
  }
  return out;
}

void set_config_value(TrainConfig& c, const std::string& key, const std::string& v) {
  auto& r = c.routing;
  if (key == "mode") c.mode = parse_enum(key, v, parse_train_mode);
  else if (key == "direction") r.direction = parse_enum(key, v, parse_direction_map);
  else if (key == "gate") r.gate = parse_enum(key, v, parse_gate_kind);
  else if (key == "gate_threshold") r.gate_threshold = to_double(key, v);
  else if (key == "signal") r.signal = parse_enum(key, v, parse_router_signal);
  else if (key == "rho") r.rho = to_double(key, v);
  else if (key == "eps") r.eps = to_double(key, v);
  else if (key == "clip_delta_bar") r.clip_delta_bar = to_bool(key, v);
  else if (key == "delta_bar_limit") r.delta_bar_limit = to_double(key, v);
  else if (key == "group_size") c.group_size = to_int<int>(key, v);
  else if (key == "beta") c.beta = to_double(key, v);
  else if (key == "eps_clip") c.eps_clip = to_double(key, v);
  else if (key == "learning_rate") c.learning_rate = to_double(key, v);
  else if (key == "lr_schedule") c.lr_schedule = parse_enum(key, v, parse_lr_schedule);
  else if (key == "batch_prompts") c.batch_prompts = to_int<int>(key, v);
  else if (key == "updates") c.updates = to_int<int>(key, v);
  else if (key == "max_len") c.max_len = to_int<int>(key, v);
  else if (key == "seed") c.seed = to_int<std::uint64_t>(key, v);
  else if (key == "eval_seed") c.eval_seed = to_int<std::uint64_t>(key, v);
  else if (key == "modulus") c.modulus = to_int<int>(key, v);
  else if (key == "difficulty_weights") c.difficulty_weights = to_list(key, v);
  else if (key == "window") c.window = to_int<int>(key, v);
  else if (key == "warmup_examples") c.warmup_examples = to_int<int>(key, v);
  else if (key == "warmup_lr") c.warmup_lr = to_double(key, v);
  else if (key == "warmup_revision_rate") c.warmup_revision_rate = to_double(key, v);
  else if (key == "eval_instances") c.eval_instances = to_int<int>(key, v);
  else if (key == "exclude_eval_prompts") c.exclude_eval_prompts = to_bool(key, v);
  else if (key == "eval_k") c.eval_k = to_int<int>(key, v);
  else if (key == "eval_every") c.eval_every = to_int<int>(key, v);
  else if (key == "checkpoint_every") c.checkpoint_every = to_int<int>(key, v);
  else if (key == "flip_arm") c.flip_arm = parse_enum(key, v, parse_flip_arm);
  else if (key == "flip_step") c.flip_step = to_int<int>(key, v);
  else if (key == "workers") c.workers = to_int<int>(key, v);
  else throw ConfigError("unknown key '" + key + "'");
}

TrainConfig config_from_text(const std::string& text) {
  const auto kv = parse_key_values(text);
  for (const auto& k : required_config_keys()) {
    if (!kv.contains(k)) throw ConfigError("missing required key '" + k + "'");
  }
  TrainConfig config;
  for (const auto& [k, v] : kv) set_config_value(config, k, v);
  return config;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return config_from_text(text.str());
}

std::string config_to_text(const TrainConfig& c) {
  const auto& r = c.routing;
  std::string weights;
  for (std::size_t i = 0; i < c.difficulty_weights.size(); ++i) {
    if (i) weights += ",";
    weights += fmt(c.difficulty_weights[i]);
  }
  std::ostringstream out;
  out << "mode = " << to_string(c.mode) << "\n"
      << "direction = " << to_string(r.direction) << "\n"
      << "gate = " << to_string(r.gate) << "\n"
      << "gate_threshold = " << fmt(r.gate_threshold) << "\n"
      << "signal = " << to_string(r.signal) << "\n"
      << "rho = " << fmt(r.rho) << "\n"
      << "eps = " << fmt(r.eps) << "\n"
      << "clip_delta_bar = " << (r.clip_delta_bar ? "true" : "false") << "\n"
      << "delta_bar_limit = " << fmt(r.delta_bar_limit) << "\n"
      << "group_size = " << c.group_size << "\n"
      << "beta = " << fmt(c.beta) << "\n"
      << "eps_clip = " << fmt(c.eps_clip) << "\n"
      << "learning_rate = " << fmt(c.learning_rate) << "\n"
      << "lr_schedule = " << to_string(c.lr_schedule) << "\n"
      << "batch_prompts = " << c.batch_prompts << "\n"
      << "updates = " << c.updates << "\n"
      << "max_len = " << c.max_len << "\n"
      << "seed = " << c.seed << "\n"
      << "eval_seed = " << c.eval_seed << "\n"
      << "modulus = " << c.modulus << "\n"
      << "difficulty_weights = " << weights << "\n"
      << "window = " << c.window << "\n"
      << "warmup_examples = " << c.warmup_examples << "\n"
      << "warmup_lr = " << fmt(c.warmup_lr) << "\n"
      << "warmup_revision_rate = " << fmt(c.warmup_revision_rate) << "\n"
      << "eval_instances = " << c.eval_instances << "\n"
      << "exclude_eval_prompts = " << (c.exclude_eval_prompts ? "true" : "false") << "\n"
      << "eval_k = " << c.eval_k << "\n"
      << "eval_every = " << c.eval_every << "\n"
      << "checkpoint_every = " << c.checkpoint_every << "\n"
      << "flip_arm = " << to_string(c.flip_arm) << "\n"
      << "flip_step = " << c.flip_step << "\n"
      << "workers = " << c.workers << "\n";
  return out.str();
}

}  // namespace dasd
