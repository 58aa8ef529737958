#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "gpat/objective.hpp"
#include "gpat/params.hpp"
#include "gpat/recycle.hpp"

namespace gpat::config {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct TrainingConfig {
  std::size_t steps = 1000;
  std::size_t batch_size = 4;
  std::uint64_t seed = 0;
  std::size_t eval_every = 0;  // checkpoint interval in steps; 0 = only at the end
};

struct PathConfig {
  std::string data;
  std::string checkpoint;
  std::string report;
  std::string log;
};

// Flat `section.key=value` text; '#' starts a comment line.
struct RunConfig {
  recycle::ModelConfig model;
  recycle::RecycleConfig recycle;
  objective::LossWeights loss;
  ag::AdamConfig optimizer;
  TrainingConfig training;
  PathConfig paths;

  /// Throws ConfigError on an unknown key or an unparsable value.
  void set(const std::string& key, const std::string& value);
  void validate() const;
  std::string to_text() const;
};

RunConfig parse_config(const std::string& text, const std::string& source = "config");
/// Throws std::runtime_error when the file cannot be read.
RunConfig load_config(const std::filesystem::path& path);

/// The model.* keys only; stored as checkpoint metadata.
std::string model_text(const recycle::ModelConfig& model);
recycle::ModelConfig parse_model_text(const std::string& text);

}  // namespace gpat::config
