#include "gpat/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace gpat::config {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_uint(const std::string& key, const std::string& v) {
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

double parse_real(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::string real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string flag(bool b) { return b ? "true" : "false"; }

// Every key with its reader and writer, in output order.
struct Field {
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define GPAT_UINT(expr)                                                                                    \
  Field {                                                                                                 \
    [](RunConfig& c, const std::string& k, const std::string& v) { expr = parse_uint<std::size_t>(k, v); }, \
        [](const RunConfig& c) { return std::to_string(expr); }                                           \
  }
#define GPAT_REAL(expr)                                                                                 \
  Field {                                                                                              \
    [](RunConfig& c, const std::string& k, const std::string& v) { expr = parse_real(k, v); },           \
        [](const RunConfig& c) { return real(expr); }                                                  \
  }
#define GPAT_BOOL(expr)                                                                                 \
  Field {                                                                                              \
    [](RunConfig& c, const std::string& k, const std::string& v) { expr = parse_bool(k, v); },           \
        [](const RunConfig& c) { return flag(expr); }                                                  \
  }
#define GPAT_TEXT(expr)                                                                                 \
  Field {                                                                                              \
    [](RunConfig& c, const std::string&, const std::string& v) { expr = v; },                           \
        [](const RunConfig& c) { return expr; }                                                        \
  }

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      {"model.d",
       {[](RunConfig& c, const std::string& k, const std::string& v) {
          c.model.encoder.d = c.model.gpat.d = parse_uint<std::size_t>(k, v);
        },
        [](const RunConfig& c) { return std::to_string(c.model.encoder.d); }}},
      {"model.n_layers", GPAT_UINT(c.model.gpat.n_layers)},
      {"model.n_heads", GPAT_UINT(c.model.gpat.n_heads)},
      {"model.head_dim", GPAT_UINT(c.model.gpat.head_dim)},
      {"model.n_virtual_points", GPAT_UINT(c.model.gpat.n_virtual_points)},
      {"model.rbf_bins", GPAT_UINT(c.model.encoder.rbf_bins)},
      {"model.rbf_cutoff", GPAT_REAL(c.model.encoder.rbf_cutoff)},
      {"model.mlp_depth", GPAT_UINT(c.model.encoder.mlp_depth)},
      {"model.n_points", GPAT_UINT(c.model.encoder.n_points)},
      {"model.negate_point_term", GPAT_BOOL(c.model.gpat.negate_point_term)},
      {"model.world_frame_update", GPAT_BOOL(c.model.gpat.world_frame_update)},
      {"recycle.n_recycle", GPAT_UINT(c.recycle.n_recycle)},
      {"recycle.infer_rounds", GPAT_UINT(c.recycle.infer_rounds)},
      {"recycle.loss_all_rounds", GPAT_BOOL(c.recycle.loss_all_rounds)},
      {"loss.lambda_rot", GPAT_REAL(c.loss.lambda_rot)},
      {"loss.lambda_shape", GPAT_REAL(c.loss.lambda_shape)},
      {"loss.lambda_chamfer", GPAT_REAL(c.loss.lambda_chamfer)},
      {"loss.lambda_point", GPAT_REAL(c.loss.lambda_point)},
      {"optimizer.lr", GPAT_REAL(c.optimizer.lr)},
      {"optimizer.beta1", GPAT_REAL(c.optimizer.beta1)},
      {"optimizer.beta2", GPAT_REAL(c.optimizer.beta2)},
      {"optimizer.epsilon", GPAT_REAL(c.optimizer.epsilon)},
      {"training.steps", GPAT_UINT(c.training.steps)},
      {"training.batch_size", GPAT_UINT(c.training.batch_size)},
      {"training.seed",
       {[](RunConfig& c, const std::string& k, const std::string& v) {
          c.training.seed = parse_uint<std::uint64_t>(k, v);
        },
        [](const RunConfig& c) { return std::to_string(c.training.seed); }}},
      {"training.eval_every", GPAT_UINT(c.training.eval_every)},
      {"paths.data", GPAT_TEXT(c.paths.data)},
      {"paths.checkpoint", GPAT_TEXT(c.paths.checkpoint)},
      {"paths.report", GPAT_TEXT(c.paths.report)},
      {"paths.log", GPAT_TEXT(c.paths.log)},
  };
  return table;
}

#undef GPAT_UINT
#undef GPAT_REAL
#undef GPAT_BOOL
#undef GPAT_TEXT

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  for (const auto& [name, field] : fields()) {
    if (name == key) {
      field.set(*this, key, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

void RunConfig::validate() const {
  try {
    model.validate();
    recycle.validate();
    loss.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (!(optimizer.lr > 0.0)) throw ConfigError("optimizer.lr must be positive");
  if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0) || !(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0)) {
    throw ConfigError("optimizer betas must lie in [0, 1)");
  }
  if (!(optimizer.epsilon > 0.0)) throw ConfigError("optimizer.epsilon must be positive");
  if (training.batch_size == 0) throw ConfigError("training.batch_size must be positive");
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& [name, field] : fields()) out += name + "=" + field.get(*this) + "\n";
  return out;
}

RunConfig parse_config(const std::string& text, const std::string& source) {
  RunConfig c;
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(number) + ": expected key=value, got '" + line + "'");
    }
    try {
      c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(number) + ": " + e.what());
    }
  }
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

std::string model_text(const recycle::ModelConfig& model) {
  RunConfig c;
  c.model = model;
  std::string out;
  for (const auto& [name, field] : fields()) {
    if (name.rfind("model.", 0) == 0) out += name + "=" + field.get(c) + "\n";
  }
  return out;
}

recycle::ModelConfig parse_model_text(const std::string& text) {
  const RunConfig c = parse_config(text, "checkpoint metadata");
  return c.model;
}

}  // namespace gpat::config
