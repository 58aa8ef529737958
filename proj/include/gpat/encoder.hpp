#pragma once

#include <random>
#include <span>
#include <vector>

#include "gpat/autograd.hpp"
#include "gpat/geom3d.hpp"
#include "gpat/params.hpp"

namespace gpat::encoder {

struct PartCloud {
  std::vector<geom::Vec3> points;
  int part_id = 0;
};

struct EncoderConfig {
  std::size_t d = 128;
  std::size_t n_points = 1000;
  std::size_t rbf_bins = 0;  // 0 selects d
  double rbf_cutoff = 2.0;
  std::size_t mlp_depth = 3;

  std::size_t bins() const { return rbf_bins == 0 ? d : rbf_bins; }
  void validate() const;
};

/// Per-object features entering the attention stack.
struct PartFeatures {
  ag::Tensor h_local;   // [N, d]
  ag::Tensor h_global;  // [d]
  ag::Tensor h;         // [N, d]
  ag::Tensor z;         // [N, N, d]
};

void add_encoder_params(ag::ParameterStore& store, const EncoderConfig& cfg, std::mt19937_64& rng);

/// [N_i, 3] constant tensor of the cloud's coordinates.
ag::Tensor cloud_tensor(std::span<const geom::Vec3> points);

/// Shared per-point MLP (3 -> 64 -> 128 -> d) followed by a max over points.
/// Returns [d]. Throws on an empty cloud.
ag::Tensor backbone_extract(const ag::ParameterStore& store, const ag::Tensor& points);
/// backbone_extract of every part stacked into [N, d].
ag::Tensor backbone_all(const ag::ParameterStore& store, const std::vector<ag::Tensor>& clouds);

/// Mean over the part axis of [N, d].
ag::Tensor global_pool(const ag::Tensor& h_locals);

/// MLP(concat(h_local, h_global, h_pos, h_pose)) for all parts: [N, d] inputs
/// (h_global is [d]) to [N, d].
ag::Tensor embed_part(const ag::ParameterStore& store, const ag::Tensor& h_local, const ag::Tensor& h_global,
                      const ag::Tensor& h_pos, const ag::Tensor& h_pose);

/// MLP(concat(h_i, h_j, z_pos_ij)) for every ordered pair: [N, d] and
/// [N, N, bins] to [N, N, d]. Not symmetric in (i, j).
ag::Tensor embed_pair(const ag::ParameterStore& store, const ag::Tensor& h_local, const ag::Tensor& z_pos);

/// sqrt(2/c) * sin(n pi dist / c) / dist for n = 1..bins, with the analytic
/// limit below 1e-8. Throws on negative or non-finite distance.
std::vector<double> rbf_distance(double dist, const EncoderConfig& cfg);

/// Legendre polynomials P_0..P_{bins-1} at the clamped cosine.
std::vector<double> rbf_angle(double cos_angle, const EncoderConfig& cfg);

/// Runs the whole feature-extraction stage for one object.
PartFeatures encode(const ag::ParameterStore& store, const std::vector<ag::Tensor>& clouds,
                    const ag::Tensor& h_pos, const ag::Tensor& h_pose, const ag::Tensor& z_pos);

}  // namespace gpat::encoder
