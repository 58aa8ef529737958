#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "gpat/config.hpp"
#include "gpat/objective.hpp"
#include "gpat/params.hpp"
#include "gpat/recycle.hpp"
#include "gpat/synthdata.hpp"

namespace gpat::train {

struct StepLog {
  std::size_t step = 0;
  std::size_t recycle_r = 0;
  double loss_total = 0.0;
  double loss_pose = 0.0;
  double loss_chamfer = 0.0;
  double loss_point = 0.0;
  double wall_ms = 0.0;
};

std::string log_header();
std::string log_row(const StepLog& s);

class NumericDivergence : public std::runtime_error {
 public:
  NumericDivergence(std::size_t step, const std::string& what) : std::runtime_error(what), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

/// Fresh parameters for `model`, seeded deterministically.
ag::ParameterStore init_params(const recycle::ModelConfig& model, std::uint64_t seed);

/// Taped loss of one sample after `rounds` rounds (averaged over all rounds
/// when `all_rounds`). Must run under an active tape for gradients.
objective::LossComponents sample_loss(const ag::ParameterStore& store, const config::RunConfig& cfg,
                                      const synth::AssemblySample& sample, std::size_t rounds);

/// Mini-batch Adam over whole objects, one recycle count per step.
class Trainer {
 public:
  Trainer(config::RunConfig cfg, std::vector<synth::AssemblySample> data);

  /// One optimizer step. Throws NumericDivergence on a non-finite loss.
  StepLog step();
  std::size_t steps_done() const { return steps_; }
  const ag::ParameterStore& params() const { return store_; }
  ag::ParameterStore& params() { return store_; }
  const config::RunConfig& config() const { return cfg_; }

 private:
  std::size_t next_index();

  config::RunConfig cfg_;
  std::vector<synth::AssemblySample> data_;
  ag::ParameterStore store_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::size_t steps_ = 0;
};

/// Inference-mode poses after `rounds` rounds.
std::vector<geom::RigidTransform> predict(const ag::ParameterStore& store, const recycle::ModelConfig& model,
                                          const std::vector<encoder::PartCloud>& clouds, std::size_t rounds);

/// Worker-pool size from GPAT_THREADS (default 1, at least 1).
std::size_t worker_threads();

/// Runs fn(k) for k in [0, n); index k goes to worker k % workers.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

}  // namespace gpat::train
