#pragma once

#include <array>
#include <optional>
#include <random>
#include <vector>

#include "gpat/autograd.hpp"
#include "gpat/encoder.hpp"
#include "gpat/geom3d.hpp"
#include "gpat/gpat_core.hpp"
#include "gpat/params.hpp"

namespace gpat::recycle {

struct RecycleConfig {
  std::size_t n_recycle = 4;     // upper end of the training draw
  std::size_t infer_rounds = 4;  // fixed count at inference
  bool loss_all_rounds = false;  // tape every round and return all of them

  void validate() const;
};

/// Everything that determines the parameter layout.
struct ModelConfig {
  encoder::EncoderConfig encoder;
  core::GpatConfig gpat;

  /// Also checks that encoder.d == gpat.d.
  void validate() const;
};

void add_model_params(ag::ParameterStore& store, const ModelConfig& cfg, std::mt19937_64& rng);

/// Feature blocks fed back from the previous round.
struct RecycleState {
  ag::Tensor h_pos;   // [N, d]
  ag::Tensor h_pose;  // [N, d]
  ag::Tensor z_pos;   // [N, N, bins]
  std::size_t round_index = 0;

  static RecycleState zeros(std::size_t n_parts, const encoder::EncoderConfig& enc);
};

struct PositionFeatures {
  ag::Tensor h_pos;
  ag::Tensor z_pos;
};

/// Backbone features and center-distance RBFs of the clouds moved by `poses`.
/// Poses enter as plain values, so nothing upstream of them receives gradient.
PositionFeatures position_recycle(const ag::ParameterStore& store, const std::vector<encoder::PartCloud>& clouds,
                                  const std::vector<geom::RigidTransform>& poses, const encoder::EncoderConfig& enc);

/// (sin r, cos r, t) with r = mat2axis(R).
std::array<double, 9> pose_features(const geom::RigidTransform& pose);
/// MLP "pose_embed" over pose_features of every part: [N, d].
ag::Tensor pose_recycle(const ag::ParameterStore& store, const std::vector<geom::RigidTransform>& poses);

/// Zeros for round 0, otherwise the recycled features of `previous`.
RecycleState make_state(const ag::ParameterStore& store, const ModelConfig& cfg,
                        const std::vector<encoder::PartCloud>& clouds,
                        const std::optional<std::vector<geom::RigidTransform>>& previous, std::size_t round_index);

/// One prediction round: encode with the recycled blocks, then the attention
/// stack from identity poses. Records on the active tape, if any.
core::GpatOutput run_round(const ag::ParameterStore& store, const ModelConfig& cfg,
                           const std::vector<encoder::PartCloud>& clouds, const RecycleState& state);

enum class Mode { train, infer };

struct RecycleResult {
  core::PoseTensors final_poses;  // taped in train mode
  std::vector<std::vector<geom::RigidTransform>> round_poses;
  /// Taped outputs of every round; filled only with loss_all_rounds in train mode.
  std::vector<core::PoseTensors> taped_rounds;
  std::size_t rounds = 0;
};

/// Runs exactly `rounds` rounds. Rounds before the last run without a tape
/// unless `tape_all`; the last round records on the active tape.
RecycleResult run_rounds(const ag::ParameterStore& store, const ModelConfig& cfg,
                         const std::vector<encoder::PartCloud>& clouds, std::size_t rounds, bool tape_all = false);

/// Train: r ~ uniform{1..n_recycle}. Infer: infer_rounds rounds with no tape.
RecycleResult run_with_recycling(const ag::ParameterStore& store, const ModelConfig& cfg,
                                 const RecycleConfig& rcfg, const std::vector<encoder::PartCloud>& clouds, Mode mode,
                                 std::mt19937_64& rng);

std::size_t sample_recycle_count(std::mt19937_64& rng, std::size_t max);

}  // namespace gpat::recycle
