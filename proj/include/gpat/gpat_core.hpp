#pragma once

#include <random>
#include <vector>

#include "gpat/autograd.hpp"
#include "gpat/encoder.hpp"
#include "gpat/geom3d.hpp"
#include "gpat/params.hpp"

namespace gpat::core {

struct GpatConfig {
  std::size_t n_layers = 4;
  std::size_t n_heads = 12;
  std::size_t head_dim = 32;
  std::size_t n_virtual_points = 12;
  std::size_t d = 128;
  /// Test hook: flips the sign of the point term in the attention logits.
  bool negate_point_term = false;
  /// false: T <- T * dT, with dT expressed in the part frame (equivariant).
  /// true: T <- dT * T, the world-frame left product; not equivariant.
  bool world_frame_update = false;

  void validate() const;
};

/// Poses of all parts as differentiable tensors.
struct PoseTensors {
  ag::Tensor rot;    // [N, 3, 3]
  ag::Tensor trans;  // [N, 3]

  static PoseTensors identity(std::size_t n);
  static PoseTensors constant(const std::vector<geom::RigidTransform>& poses);
  std::size_t count() const { return trans.dim(0); }
  std::vector<geom::RigidTransform> values() const;
};

/// [N, M, 3] points in part frames mapped by each part's pose.
ag::Tensor transform_points(const PoseTensors& poses, const ag::Tensor& points);
/// Inverse of transform_points.
ag::Tensor inverse_transform_points(const PoseTensors& poses, const ag::Tensor& points);
/// Rotation of the normalized quaternion (1, b, c, d) / s for rows of [N, 3].
ag::Tensor quat_to_rotation(const ag::Tensor& bcd);

/// Rigid-invariant pair descriptors from part centers.
struct PairGeometry {
  ag::Tensor dist_rbf;   // [N, N, bins]
  ag::Tensor angle_rbf;  // [N, N, bins]
};
PairGeometry pair_geometry(const std::vector<geom::Vec3>& centers, const encoder::EncoderConfig& enc);

struct LayerState {
  ag::Tensor h;  // [N, d]
  ag::Tensor z;  // [N, N, d]
  PoseTensors poses;
  std::vector<geom::Vec3> centers;
};

struct AttentionTerms {
  ag::Tensor n;  // [H, N, N]
  ag::Tensor e;
  ag::Tensor p;
  ag::Tensor a;
};

void add_gpat_params(ag::ParameterStore& store, const GpatConfig& cfg, std::size_t rbf_bins, std::mt19937_64& rng);

struct PartAttention {
  ag::Tensor n;  // [H, N, N]
  ag::Tensor v;  // [H, N, head_dim]
};
PartAttention part_attention(const ag::ParameterStore& store, std::size_t layer, const GpatConfig& cfg,
                             const ag::Tensor& h);

std::vector<geom::Vec3> part_centers(const std::vector<encoder::PartCloud>& clouds);

/// e = W_b z + W_d rbf(dist) + W_r sum_k rbf(cos angle), per head: [H, N, N].
ag::Tensor pair_attention(const ag::ParameterStore& store, std::size_t layer, const GpatConfig& cfg,
                          const ag::Tensor& z, const PairGeometry& geometry);

struct PointAttention {
  ag::Tensor p;             // [H, N, N], sum over virtual points of squared distances
  ag::Tensor value_points;  // [N, H * P, 3] in part frames
};
PointAttention point_attention(const ag::ParameterStore& store, std::size_t layer, const GpatConfig& cfg,
                               const ag::Tensor& h, const PoseTensors& poses);

/// Row-wise softmax over j of n + e - p (n + e + p with the test hook).
ag::Tensor combine_weights(const ag::Tensor& n, const ag::Tensor& e, const ag::Tensor& p,
                           bool negate_point_term = false);

/// h + MLP(concat(o_n, o_e, |o_points|)).
ag::Tensor update_features(const ag::ParameterStore& store, std::size_t layer, const GpatConfig& cfg,
                           const ag::Tensor& a, const ag::Tensor& v, const ag::Tensor& z,
                           const ag::Tensor& value_points, const PoseTensors& poses, const ag::Tensor& h);

/// Applies the predicted relative transform (quat2rot(MLP(h)), MLP(h)) to each
/// pose; see GpatConfig::world_frame_update for the composition order.
PoseTensors update_pose(const ag::ParameterStore& store, std::size_t layer, const GpatConfig& cfg,
                        const ag::Tensor& h_hat, const PoseTensors& poses);
/// The composition step of update_pose on explicit deltas.
PoseTensors apply_pose_delta(const ag::Tensor& delta_rot, const ag::Tensor& delta_trans, const PoseTensors& poses,
                             bool world_frame);

LayerState gpat_layer(const ag::ParameterStore& store, std::size_t layer, const GpatConfig& cfg,
                      const encoder::EncoderConfig& enc, const LayerState& state, AttentionTerms* terms = nullptr);

struct GpatOutput {
  PoseTensors poses;
  ag::Tensor h;
};

GpatOutput gpat_forward(const ag::ParameterStore& store, const GpatConfig& cfg, const encoder::EncoderConfig& enc,
                        const encoder::PartFeatures& features, const std::vector<geom::Vec3>& centers,
                        const PoseTensors& initial);

}  // namespace gpat::core
