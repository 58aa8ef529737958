#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "gpat/autograd.hpp"

namespace gpat::ag {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Named trainable tensors plus the optimizer state that belongs to them.
/// Iteration order is lexicographic by name, which keeps initialization,
/// serialization and updates deterministic.
class ParameterStore {
 public:
  /// Registers a new gradient-requiring parameter; names must be unique.
  Tensor& add(const std::string& name, Shape shape, std::vector<double> values);
  /// Values drawn uniformly from [-bound, bound].
  Tensor& add_uniform(const std::string& name, Shape shape, double bound, std::mt19937_64& rng);

  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);
  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  const std::map<std::string, Tensor>& all() const { return params_; }
  std::size_t size() const { return params_.size(); }
  std::size_t total_elements() const;

  void zero_grad();
  /// Gives every parameter without a gradient an explicit zero gradient.
  /// Returns how many were filled.
  std::size_t fill_missing_grads();

  /// One Adam update with bias correction; zeroes gradients afterwards.
  /// Throws if any parameter has no gradient.
  void adam_step(const AdamConfig& config);
  std::uint64_t step_count() const { return step_; }

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  std::map<std::string, Tensor> params_;
  std::map<std::string, Moments> moments_;
  std::uint64_t step_ = 0;
};

/// Thrown when a checkpoint does not fit the store it is loaded into.
class CheckpointMismatch : public std::runtime_error {
 public:
  CheckpointMismatch(const std::string& parameter, const std::string& what)
      : std::runtime_error(what), parameter_(parameter) {}
  const std::string& parameter() const { return parameter_; }

 private:
  std::string parameter_;
};

class CheckpointFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CheckpointRecord {
  std::string name;
  Shape shape;
  std::vector<double> data;
};

struct Checkpoint {
  std::string metadata;  // free-form UTF-8, used for the model config
  std::vector<CheckpointRecord> records;
};

// Layout (all integers little-endian):
//   "GPATCKPT1"                          9 bytes magic
//   u32 metadata_length, metadata bytes
//   u32 record_count
//   per record: u32 name_length, name bytes, u32 rank, u64 dims[rank],
//               f64 values[prod(dims)]
//   u32 crc32 of every preceding byte (zlib polynomial)
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, const ParameterStore& store, const std::string& metadata);
Checkpoint read_checkpoint(const std::filesystem::path& path);
/// Copies every record into the matching parameter. Missing, extra, or
/// differently shaped parameters raise CheckpointMismatch.
void load_into(const Checkpoint& ckpt, ParameterStore& store);

/// Max over all parameter elements of
///   |analytic - central| / max(|analytic|, |central|, 1e-8)
/// where `loss_fn` builds a scalar loss from the current parameter values.
double finite_difference_check(const std::function<Tensor()>& loss_fn, ParameterStore& params, double step);

struct FdReport {
  double elementwise = 0.0;  // as finite_difference_check
  // max over tensors of |g_analytic - g_central|_2 / max(|g_analytic|_2, |g_central|_2)
  double tensorwise = 0.0;
  std::string worst_tensor;
  // the same ratio on the concatenated gradient of every parameter
  double global = 0.0;
};

/// All three error measures from one sweep. The norm-based ones stay meaningful
/// when many entries sit below the central-difference noise floor (roughly
/// eps * |loss| / step), where the elementwise ratio compares noise with noise.
FdReport finite_difference_report(const std::function<Tensor()>& loss_fn, ParameterStore& params, double step);

}  // namespace gpat::ag
