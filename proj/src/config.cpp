#include "cil/config.hpp"

#include <algorithm>
#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "cil/error.hpp"

namespace cil {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string unquote(const std::string& s) {
  if (s.size() >= 2 && (s.front() == '"' || s.front() == '\'') && s.back() == s.front())
    return s.substr(1, s.size() - 2);
  return s;
}

double to_double(const std::string& key, const std::string& v) {
  char* end = nullptr;
  errno = 0;
  const double out = std::strtod(v.c_str(), &end);
  if (v.empty() || *end != '\0' || errno == ERANGE) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return out;
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  char* end = nullptr;
  errno = 0;
  if (v.empty() || v.front() == '-') throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  const unsigned long long out = std::strtoull(v.c_str(), &end, 10);
  if (*end != '\0' || errno == ERANGE) throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

std::size_t to_size(const std::string& key, const std::string& v) { return static_cast<std::size_t>(to_uint(key, v)); }

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::vector<std::string> to_list(const std::string& key, const std::string& v) {
  std::string body = v;
  if (!body.empty() && body.front() == '[') {
    if (body.back() != ']') throw ConfigError(key + ": unterminated list");
    body = body.substr(1, body.size() - 2);
  }
  std::vector<std::string> out;
  std::stringstream ss(body);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = unquote(trim(item));
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

std::vector<std::pair<std::string, std::string>> parse_settings(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') quoted = !quoted;
      if (line[i] == '#' && !quoted) {
        line.resize(i);
        break;
      }
    }
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[' && line.find('=') == std::string::npos) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("expected 'key = value'", lineno);
    std::string key = trim(line.substr(0, eq));
    std::string value = unquote(trim(line.substr(eq + 1)));
    if (key.empty()) throw ParseError("empty key", lineno);
    std::replace(key.begin(), key.end(), '-', '_');
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

const std::vector<std::string>& setting_keys() {
  static const std::vector<std::string> keys{
      "train_csv",       "test_csv",       "num_classes",    "input_dim",         "train_per_class",
      "test_per_class",  "center_scale",   "noise_scale",    "data_seed",         "initial_classes",
      "increment",       "shuffle_seed",   "exemplars_per_class", "method",       "eta",
      "cwd_mode",        "cwd_all_phases", "cwd_eps",        "beta",              "oracle_seed",
      "lambda_base",     "temperature",    "herding_normalize", "epochs",          "batch_size",
      "learning_rate",   "lr_decay_at",    "lr_decay_factor", "momentum",         "weight_decay",
      "hidden_dims",     "rep_dim",        "head_scale_init", "network_seed",     "seed"};
  return keys;
}

void apply_setting(ProtocolConfig& c, const std::string& key_in, const std::string& v) {
  std::string key = key_in;
  std::replace(key.begin(), key.end(), '-', '_');
  if (key == "B") key = "initial_classes";
  if (key == "S") key = "increment";
  if (key == "R") key = "exemplars_per_class";

  if (key == "train_csv") c.data.train_csv = v;
  else if (key == "test_csv") c.data.test_csv = v;
  else if (key == "num_classes") c.data.mixture.num_classes = to_size(key, v);
  else if (key == "input_dim") {
    c.data.mixture.input_dim = to_size(key, v);
    c.network.input_dim = c.data.mixture.input_dim;
  } else if (key == "train_per_class") c.data.mixture.train_per_class = to_size(key, v);
  else if (key == "test_per_class") c.data.mixture.test_per_class = to_size(key, v);
  else if (key == "center_scale") c.data.mixture.center_scale = to_double(key, v);
  else if (key == "noise_scale") c.data.mixture.noise_scale = to_double(key, v);
  else if (key == "data_seed") c.data.data_seed = to_uint(key, v);
  else if (key == "initial_classes") c.initial_classes = to_size(key, v);
  else if (key == "increment") c.increment = to_size(key, v);
  else if (key == "shuffle_seed") c.shuffle_seed = to_uint(key, v);
  else if (key == "exemplars_per_class") c.exemplars_per_class = to_size(key, v);
  else if (key == "method") c.method = parse_method(v);
  else if (key == "eta") c.eta = to_double(key, v);
  else if (key == "cwd_mode") c.cwd_mode = parse_cwd_mode(v);
  else if (key == "cwd_all_phases") c.cwd_all_phases = to_bool(key, v);
  else if (key == "cwd_eps") c.cwd_eps = to_double(key, v);
  else if (key == "beta") c.beta = to_double(key, v);
  else if (key == "oracle_seed") c.oracle_seed = to_uint(key, v);
  else if (key == "lambda_base") c.lambda_base = to_double(key, v);
  else if (key == "temperature") c.temperature = to_double(key, v);
  else if (key == "herding_normalize") c.herding_normalize = to_bool(key, v);
  else if (key == "epochs") c.epochs = to_size(key, v);
  else if (key == "batch_size") c.batch_size = to_size(key, v);
  else if (key == "learning_rate") c.learning_rate = to_double(key, v);
  else if (key == "lr_decay_at") {
    c.lr_decay_at.clear();
    for (const auto& item : to_list(key, v)) c.lr_decay_at.push_back(to_double(key, item));
  } else if (key == "lr_decay_factor") c.lr_decay_factor = to_double(key, v);
  else if (key == "momentum") c.momentum = to_double(key, v);
  else if (key == "weight_decay") c.weight_decay = to_double(key, v);
  else if (key == "hidden_dims") {
    c.network.hidden_dims.clear();
    for (const auto& item : to_list(key, v)) c.network.hidden_dims.push_back(to_size(key, item));
  } else if (key == "rep_dim") c.network.rep_dim = to_size(key, v);
  else if (key == "head_scale_init") c.network.head_scale_init = to_double(key, v);
  else if (key == "network_seed") c.network_seed = to_uint(key, v);
  else if (key == "seed") c.seed = to_uint(key, v);
  else throw ConfigError("unknown config key '" + key_in + "'");
}

ProtocolConfig config_from_text(const std::string& text) {
  ProtocolConfig c;
  for (const auto& [k, v] : parse_settings(text)) apply_setting(c, k, v);
  return c;
}

ProtocolConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_text(ss.str());
}

}  // namespace cil
