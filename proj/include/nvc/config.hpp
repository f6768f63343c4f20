#pragma once

#include <charconv>
#include <cstdio>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace nvc {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class TrainMode { kVae, kNvc, kNvcMl, kNvcNoMass };

inline std::string to_string(TrainMode m) {
  switch (m) {
    case TrainMode::kVae: return "vae";
    case TrainMode::kNvc: return "nvc";
    case TrainMode::kNvcMl: return "nvc_ml";
    case TrainMode::kNvcNoMass: return "nvc_no_mass";
  }
  return "vae";
}

inline TrainMode parse_mode(const std::string& s) {
  if (s == "vae") return TrainMode::kVae;
  if (s == "nvc") return TrainMode::kNvc;
  if (s == "nvc_ml") return TrainMode::kNvcMl;
  if (s == "nvc_no_mass") return TrainMode::kNvcNoMass;
  throw ConfigError("invalid value for key \"mode\": " + s +
                    " (expected vae|nvc|nvc_ml|nvc_no_mass)");
}

// Every training switch in one place; serializes to the line-oriented
// `key = value` text format (# comments, unknown keys rejected).
struct TrainConfig {
  TrainMode mode = TrainMode::kNvc;
  int64_t anchors = 10;
  int64_t latent_dim = 16;
  std::vector<int64_t> hidden_dims = {512, 256};
  std::string optimizer = "adam";  // adam | sgd
  double lr = 1e-3;
  int64_t epochs = 20;
  int64_t batch_size = 128;
  uint64_t seed = 0;
  double w_recon = 1.0;
  double w_kl = 1.0;
  double w_nebula = 1.0;
  double w_metric = 1.0;
  bool clamp_D = false;
  double eval_epsilon = 0.01;
  int64_t log_every = 10;
  int64_t input_dim = 0;  // resolved from the dataset; persisted in checkpoints

  bool uses_anchors() const { return mode != TrainMode::kVae && anchors >= 1; }
  bool uses_metric() const { return mode == TrainMode::kNvcMl; }

  void validate() const {
    if (anchors < 0) throw ConfigError("invalid value for key \"anchors\": must be >= 0");
    if (lr <= 0) throw ConfigError("invalid value for key \"lr\": must be > 0");
    if (epochs < 1) throw ConfigError("invalid value for key \"epochs\": must be >= 1");
    if (batch_size < 1)
      throw ConfigError("invalid value for key \"batch_size\": must be >= 1");
    if (uses_metric() && batch_size < 2)
      throw ConfigError(
          "invalid value for key \"batch_size\": metric learning needs >= 2");
    if (latent_dim < 1)
      throw ConfigError("invalid value for key \"latent_dim\": must be >= 1");
    for (int64_t h : hidden_dims)
      if (h < 1) throw ConfigError("invalid value for key \"hidden_dims\": dims must be >= 1");
    if (optimizer != "adam" && optimizer != "sgd")
      throw ConfigError("invalid value for key \"optimizer\": " + optimizer);
    if (w_recon < 0 || w_kl < 0 || w_nebula < 0 || w_metric < 0)
      throw ConfigError("invalid value for key \"weights.*\": must be >= 0");
    if (eval_epsilon <= 0)
      throw ConfigError("invalid value for key \"eval_epsilon\": must be > 0");
    if (log_every < 1)
      throw ConfigError("invalid value for key \"log_every\": must be >= 1");
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename Int>
Int parse_int(const std::string& key, const std::string& v) {
  Int out{};
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end)
    throw ConfigError("invalid value for key \"" + key + "\": " + v);
  return out;
}

inline double parse_double_value(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("invalid value for key \"" + key + "\": " + v);
  }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("invalid value for key \"" + key + "\": " + v);
}

inline std::vector<int64_t> parse_int_list(const std::string& key,
                                           const std::string& v) {
  std::vector<int64_t> out;
  std::stringstream ss(v);
  std::string part;
  while (std::getline(ss, part, ',')) {
    part = trim(part);
    if (part.empty())
      throw ConfigError("invalid value for key \"" + key + "\": " + v);
    out.push_back(parse_int<int64_t>(key, part));
  }
  if (out.empty()) throw ConfigError("invalid value for key \"" + key + "\": empty list");
  return out;
}

}  // namespace detail

inline void apply_config_line(TrainConfig& cfg, const std::string& key,
                              const std::string& value) {
  using namespace detail;
  if (key == "mode") cfg.mode = parse_mode(value);
  else if (key == "anchors") cfg.anchors = parse_int<int64_t>(key, value);
  else if (key == "latent_dim") cfg.latent_dim = parse_int<int64_t>(key, value);
  else if (key == "hidden_dims") cfg.hidden_dims = parse_int_list(key, value);
  else if (key == "optimizer") cfg.optimizer = value;
  else if (key == "lr") cfg.lr = parse_double_value(key, value);
  else if (key == "epochs") cfg.epochs = parse_int<int64_t>(key, value);
  else if (key == "batch_size") cfg.batch_size = parse_int<int64_t>(key, value);
  else if (key == "seed") cfg.seed = parse_int<uint64_t>(key, value);
  else if (key == "weights.recon") cfg.w_recon = parse_double_value(key, value);
  else if (key == "weights.kl") cfg.w_kl = parse_double_value(key, value);
  else if (key == "weights.nebula") cfg.w_nebula = parse_double_value(key, value);
  else if (key == "weights.metric") cfg.w_metric = parse_double_value(key, value);
  else if (key == "clamp_D") cfg.clamp_D = parse_bool(key, value);
  else if (key == "eval_epsilon") cfg.eval_epsilon = parse_double_value(key, value);
  else if (key == "log_every") cfg.log_every = parse_int<int64_t>(key, value);
  else if (key == "input_dim") cfg.input_dim = parse_int<int64_t>(key, value);
  else throw ConfigError("unknown config key \"" + key + "\"");
}

inline TrainConfig parse_config_text(const std::string& text) {
  TrainConfig cfg;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) +
                        ": expected `key = value`, got: " + line);
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    apply_config_line(cfg, key, value);
  }
  return cfg;
}

inline TrainConfig load_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config_text(ss.str());
}

// Canonical serialization: fixed key order, shortest round-trip floats.
// Checkpoint byte-identity depends on this being deterministic.
inline std::string serialize_config(const TrainConfig& cfg) {
  using detail::format_double;
  std::ostringstream os;
  os << "mode = " << to_string(cfg.mode) << "\n";
  os << "anchors = " << cfg.anchors << "\n";
  os << "latent_dim = " << cfg.latent_dim << "\n";
  os << "hidden_dims = ";
  for (size_t i = 0; i < cfg.hidden_dims.size(); ++i)
    os << (i ? "," : "") << cfg.hidden_dims[i];
  os << "\n";
  os << "optimizer = " << cfg.optimizer << "\n";
  os << "lr = " << format_double(cfg.lr) << "\n";
  os << "epochs = " << cfg.epochs << "\n";
  os << "batch_size = " << cfg.batch_size << "\n";
  os << "seed = " << cfg.seed << "\n";
  os << "weights.recon = " << format_double(cfg.w_recon) << "\n";
  os << "weights.kl = " << format_double(cfg.w_kl) << "\n";
  os << "weights.nebula = " << format_double(cfg.w_nebula) << "\n";
  os << "weights.metric = " << format_double(cfg.w_metric) << "\n";
  os << "clamp_D = " << (cfg.clamp_D ? "true" : "false") << "\n";
  os << "eval_epsilon = " << format_double(cfg.eval_epsilon) << "\n";
  os << "log_every = " << cfg.log_every << "\n";
  os << "input_dim = " << cfg.input_dim << "\n";
  return os.str();
}

}  // namespace nvc
