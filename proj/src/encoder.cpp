#include "gpat/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "gpat/nn.hpp"

namespace gpat::encoder {

namespace {

std::vector<std::size_t> embedder_dims(std::size_t in, const EncoderConfig& cfg) {
  std::vector<std::size_t> dims{in};
  for (std::size_t k = 0; k < cfg.mlp_depth; ++k) dims.push_back(cfg.d);
  return dims;
}

// sin(pi * x), exactly zero at integers.
double sin_pi(double x) {
  double r = std::fmod(x, 2.0);
  if (r < 0.0) r += 2.0;
  if (r == 0.0 || r == 1.0) return 0.0;
  if (r > 1.0) return -sin_pi(r - 1.0);
  return std::sin(std::numbers::pi * (r > 0.5 ? 1.0 - r : r));
}

}  // namespace

void EncoderConfig::validate() const {
  if (d == 0) throw std::invalid_argument("encoder: d must be positive");
  if (!(rbf_cutoff > 0.0)) throw std::invalid_argument("encoder: rbf_cutoff must be positive");
  if (mlp_depth == 0) throw std::invalid_argument("encoder: mlp_depth must be positive");
}

void add_encoder_params(ag::ParameterStore& store, const EncoderConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  nn::add_mlp(store, "backbone", {3, 64, 128, cfg.d}, rng);
  nn::add_mlp(store, "part_embed", embedder_dims(4 * cfg.d, cfg), rng);
  nn::add_mlp(store, "pair_embed", embedder_dims(2 * cfg.d + cfg.bins(), cfg), rng);
}

ag::Tensor cloud_tensor(std::span<const geom::Vec3> points) {
  std::vector<double> data;
  data.reserve(points.size() * 3);
  for (const geom::Vec3& p : points) {
    data.push_back(p.x);
    data.push_back(p.y);
    data.push_back(p.z);
  }
  return ag::Tensor::from({points.size(), 3}, std::move(data));
}

ag::Tensor backbone_extract(const ag::ParameterStore& store, const ag::Tensor& points) {
  if (points.rank() != 2 || points.dim(1) != 3) {
    throw ag::ShapeError("backbone_extract: expected [N, 3] points, got " + ag::shape_str(points.shape()));
  }
  if (points.dim(0) == 0) throw std::invalid_argument("backbone_extract: empty point cloud");
  return ag::max(nn::mlp(store, "backbone", points), 0);
}

ag::Tensor backbone_all(const ag::ParameterStore& store, const std::vector<ag::Tensor>& clouds) {
  std::vector<ag::Tensor> rows;
  rows.reserve(clouds.size());
  for (const ag::Tensor& c : clouds) {
    const ag::Tensor h = backbone_extract(store, c);
    rows.push_back(ag::reshape(h, {1, h.dim(0)}));
  }
  return ag::concat(rows, 0);
}

ag::Tensor global_pool(const ag::Tensor& h_locals) {
  if (h_locals.rank() != 2 || h_locals.dim(0) == 0) {
    throw ag::ShapeError("global_pool: expected non-empty [N, d], got " + ag::shape_str(h_locals.shape()));
  }
  return ag::mean(h_locals, 0);
}

ag::Tensor embed_part(const ag::ParameterStore& store, const ag::Tensor& h_local, const ag::Tensor& h_global,
                      const ag::Tensor& h_pos, const ag::Tensor& h_pose) {
  const std::size_t n = h_local.dim(0), d = h_local.dim(1);
  if (h_global.shape() != ag::Shape{d} || h_pos.shape() != h_local.shape() || h_pose.shape() != h_local.shape()) {
    throw ag::ShapeError("embed_part: sizes differ: local " + ag::shape_str(h_local.shape()) + ", global " +
                         ag::shape_str(h_global.shape()) + ", pos " + ag::shape_str(h_pos.shape()) + ", pose " +
                         ag::shape_str(h_pose.shape()));
  }
  const ag::Tensor global = ag::broadcast(ag::reshape(h_global, {1, d}), {n, d});
  return nn::mlp(store, "part_embed", ag::concat({h_local, global, h_pos, h_pose}, 1));
}

ag::Tensor embed_pair(const ag::ParameterStore& store, const ag::Tensor& h_local, const ag::Tensor& z_pos) {
  const std::size_t n = h_local.dim(0), d = h_local.dim(1);
  if (z_pos.rank() != 3 || z_pos.dim(0) != n || z_pos.dim(1) != n) {
    throw ag::ShapeError("embed_pair: z_pos " + ag::shape_str(z_pos.shape()) + " does not match " +
                         ag::shape_str(h_local.shape()));
  }
  const ag::Tensor hi = ag::broadcast(ag::reshape(h_local, {n, 1, d}), {n, n, d});
  const ag::Tensor hj = ag::broadcast(ag::reshape(h_local, {1, n, d}), {n, n, d});
  return nn::mlp(store, "pair_embed", ag::concat({hi, hj, z_pos}, 2));
}

std::vector<double> rbf_distance(double dist, const EncoderConfig& cfg) {
  if (!std::isfinite(dist)) throw ag::NumericError("rbf_distance: non-finite distance");
  if (dist < 0.0) {
    throw std::invalid_argument("rbf_distance: distance must be non-negative");
  }
  const double c = cfg.rbf_cutoff;
  const double norm = std::sqrt(2.0 / c);
  std::vector<double> out(cfg.bins());
  for (std::size_t k = 0; k < out.size(); ++k) {
    const double n = static_cast<double>(k + 1);
    out[k] = dist < 1e-8 ? n * std::numbers::pi / c * norm : norm * sin_pi(n * dist / c) / dist;
  }
  return out;
}

std::vector<double> rbf_angle(double cos_angle, const EncoderConfig& cfg) {
  if (!std::isfinite(cos_angle)) throw ag::NumericError("rbf_angle: non-finite input");
  const double x = std::clamp(cos_angle, -1.0, 1.0);
  std::vector<double> out(cfg.bins());
  if (out.empty()) return out;
  out[0] = 1.0;
  if (out.size() > 1) out[1] = x;
  for (std::size_t l = 1; l + 1 < out.size(); ++l) {
    const double lf = static_cast<double>(l);
    out[l + 1] = ((2.0 * lf + 1.0) * x * out[l] - lf * out[l - 1]) / (lf + 1.0);
  }
  return out;
}

PartFeatures encode(const ag::ParameterStore& store, const std::vector<ag::Tensor>& clouds, const ag::Tensor& h_pos,
                    const ag::Tensor& h_pose, const ag::Tensor& z_pos) {
  PartFeatures f;
  f.h_local = backbone_all(store, clouds);
  f.h_global = global_pool(f.h_local);
  f.h = embed_part(store, f.h_local, f.h_global, h_pos, h_pose);
  f.z = embed_pair(store, f.h_local, z_pos);
  return f;
}

}  // namespace gpat::encoder
