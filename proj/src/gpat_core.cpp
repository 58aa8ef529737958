#include "gpat/gpat_core.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "gpat/nn.hpp"

namespace gpat::core {

namespace {

std::string lname(std::size_t layer, const char* what) { return "gpat.L" + std::to_string(layer) + "." + what; }

// Pose-head outputs start small so the first updates stay near identity.
constexpr double kPoseHeadGain = 0.1;

ag::Tensor head_major(const ag::Tensor& x, std::size_t n, std::size_t heads, std::size_t width) {
  return ag::permute(ag::reshape(x, {n, heads, width}), {1, 0, 2});
}

}  // namespace

void GpatConfig::validate() const {
  if (n_heads == 0 || head_dim == 0 || n_virtual_points == 0 || d == 0) {
    throw std::invalid_argument("gpat: heads, head_dim, virtual points and d must be positive");
  }
}

// ---- poses --------------------------------------------------------------------

PoseTensors PoseTensors::identity(std::size_t n) {
  return constant(std::vector<geom::RigidTransform>(n, geom::RigidTransform::identity()));
}

PoseTensors PoseTensors::constant(const std::vector<geom::RigidTransform>& poses) {
  std::vector<double> rot, trans;
  for (const geom::RigidTransform& t : poses) {
    rot.insert(rot.end(), t.r.matrix().m.begin(), t.r.matrix().m.end());
    trans.insert(trans.end(), {t.t.v.x, t.t.v.y, t.t.v.z});
  }
  return {ag::Tensor::from({poses.size(), 3, 3}, std::move(rot)), ag::Tensor::from({poses.size(), 3}, std::move(trans))};
}

std::vector<geom::RigidTransform> PoseTensors::values() const {
  std::vector<geom::RigidTransform> out(count());
  for (std::size_t i = 0; i < out.size(); ++i) {
    geom::Mat3 m;
    for (std::size_t k = 0; k < 9; ++k) m.m[k] = rot[9 * i + k];
    out[i] = {geom::Rotation{m}, geom::Translation{{trans[3 * i], trans[3 * i + 1], trans[3 * i + 2]}}};
  }
  return out;
}

ag::Tensor transform_points(const PoseTensors& poses, const ag::Tensor& points) {
  const std::size_t n = points.dim(0), m = points.dim(1);
  const ag::Tensor rotated = ag::matmul(points, ag::permute(poses.rot, {0, 2, 1}));
  return ag::add(rotated, ag::broadcast(ag::reshape(poses.trans, {n, 1, 3}), {n, m, 3}));
}

ag::Tensor inverse_transform_points(const PoseTensors& poses, const ag::Tensor& points) {
  const std::size_t n = points.dim(0), m = points.dim(1);
  const ag::Tensor centered = ag::sub(points, ag::broadcast(ag::reshape(poses.trans, {n, 1, 3}), {n, m, 3}));
  // Row vectors: x^T R equals (R^T x)^T.
  return ag::matmul(centered, poses.rot);
}

ag::Tensor quat_to_rotation(const ag::Tensor& bcd) {
  const std::size_t n = bcd.dim(0);
  const ag::Tensor b = ag::slice(bcd, 1, 0, 1);
  const ag::Tensor c = ag::slice(bcd, 1, 1, 1);
  const ag::Tensor d = ag::slice(bcd, 1, 2, 1);
  const ag::Tensor bb = b * b, cc = c * c, dd = d * d;
  const ag::Tensor bc = b * c, bd = b * d, cd = c * d;
  const ag::Tensor one = ag::Tensor::full({1}, 1.0);
  const ag::Tensor s2 = one + bb + cc + dd;
  auto two = [](const ag::Tensor& x) { return ag::scale(x, 2.0); };
  // Closed form of the unit quaternion (1, b, c, d) / s; identical to the
  // axis-angle Rodrigues construction for every (b, c, d).
  const ag::Tensor entries = ag::concat({one + bb - cc - dd, two(bc - d), two(bd + c),  //
                                         two(bc + d), one - bb + cc - dd, two(cd - b),  //
                                         two(bd - c), two(cd + b), one - bb - cc + dd},
                                        1);
  return ag::reshape(ag::div(entries, s2), {n, 3, 3});
}

// ---- geometry -----------------------------------------------------------------

PairGeometry pair_geometry(const std::vector<geom::Vec3>& centers, const encoder::EncoderConfig& enc) {
  const std::size_t n = centers.size(), bins = enc.bins();
  std::vector<double> dist(n * n * bins), angle(n * n * bins, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const auto rd = encoder::rbf_distance(geom::norm(centers[i] - centers[j]), enc);
      std::copy(rd.begin(), rd.end(), dist.begin() + static_cast<std::ptrdiff_t>((i * n + j) * bins));
      // Angle at vertex j between rays j->i and j->k.
      const geom::Vec3 u = centers[i] - centers[j];
      const double nu = geom::norm(u);
      for (std::size_t k = 0; k < n; ++k) {
        if (k == i || k == j) continue;
        const geom::Vec3 w = centers[k] - centers[j];
        const double nw = geom::norm(w);
        if (nu < 1e-9 || nw < 1e-9) continue;
        const auto ra = encoder::rbf_angle(geom::dot(u, w) / (nu * nw), enc);
        for (std::size_t q = 0; q < bins; ++q) angle[(i * n + j) * bins + q] += ra[q];
      }
    }
  }
  return {ag::Tensor::from({n, n, bins}, std::move(dist)), ag::Tensor::from({n, n, bins}, std::move(angle))};
}

std::vector<geom::Vec3> part_centers(const std::vector<encoder::PartCloud>& clouds) {
  std::vector<geom::Vec3> out;
  out.reserve(clouds.size());
  for (const encoder::PartCloud& c : clouds) {
    if (c.points.empty()) throw std::invalid_argument("part_centers: empty cloud");
    geom::Vec3 s;
    for (const geom::Vec3& p : c.points) s = s + p;
    out.push_back((1.0 / static_cast<double>(c.points.size())) * s);
  }
  return out;
}

// ---- parameters ---------------------------------------------------------------

void add_gpat_params(ag::ParameterStore& store, const GpatConfig& cfg, std::size_t rbf_bins, std::mt19937_64& rng) {
  cfg.validate();
  const std::size_t h = cfg.n_heads, hd = cfg.head_dim, pts = cfg.n_virtual_points, d = cfg.d;
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    nn::add_linear(store, lname(l, "q"), d, h * hd, rng, false);
    nn::add_linear(store, lname(l, "k"), d, h * hd, rng, false);
    nn::add_linear(store, lname(l, "v"), d, h * hd, rng, false);
    nn::add_linear(store, lname(l, "pair_b"), d, h, rng, false);
    nn::add_linear(store, lname(l, "pair_d"), rbf_bins, h, rng, false);
    nn::add_linear(store, lname(l, "pair_r"), rbf_bins, h, rng, false);
    nn::add_linear(store, lname(l, "point_q"), d, h * pts * 3, rng, false);
    nn::add_linear(store, lname(l, "point_k"), d, h * pts * 3, rng, false);
    nn::add_linear(store, lname(l, "point_v"), d, h * pts * 3, rng, false);
    nn::add_mlp(store, lname(l, "update"), {h * hd + h * d + h * pts, d, d, d}, rng);
    nn::add_mlp(store, lname(l, "quat"), {d, d, d, 3}, rng, kPoseHeadGain);
    nn::add_mlp(store, lname(l, "trans"), {d, d, d, 3}, rng, kPoseHeadGain);
  }
}

// ---- attention terms ------------------------------------------------------------

PartAttention part_attention(const ag::ParameterStore& store, std::size_t layer, const GpatConfig& cfg,
                             const ag::Tensor& h) {
  const std::size_t n = h.dim(0);
  const ag::Tensor q = head_major(nn::linear(store, lname(layer, "q"), h), n, cfg.n_heads, cfg.head_dim);
  const ag::Tensor k = head_major(nn::linear(store, lname(layer, "k"), h), n, cfg.n_heads, cfg.head_dim);
  const ag::Tensor v = head_major(nn::linear(store, lname(layer, "v"), h), n, cfg.n_heads, cfg.head_dim);
  const ag::Tensor logits = ag::matmul(q, ag::permute(k, {0, 2, 1}));
  return {ag::scale(logits, 1.0 / std::sqrt(static_cast<double>(cfg.head_dim))), v};
}

ag::Tensor pair_attention(const ag::ParameterStore& store, std::size_t layer, const GpatConfig& /*cfg*/,
                          const ag::Tensor& z, const PairGeometry& geometry) {
  const ag::Tensor b = nn::linear(store, lname(layer, "pair_b"), z);
  const ag::Tensor dist = nn::linear(store, lname(layer, "pair_d"), geometry.dist_rbf);
  const ag::Tensor angle = nn::linear(store, lname(layer, "pair_r"), geometry.angle_rbf);
  return ag::permute(b + dist + angle, {2, 0, 1});
}

PointAttention point_attention(const ag::ParameterStore& store, std::size_t layer, const GpatConfig& cfg,
                               const ag::Tensor& h, const PoseTensors& poses) {
  const std::size_t n = h.dim(0), hp = cfg.n_heads * cfg.n_virtual_points;
  auto points = [&](const char* what) {
    return ag::reshape(nn::linear(store, lname(layer, what), h), {n, hp, 3});
  };
  const ag::Tensor q = ag::reshape(transform_points(poses, points("point_q")), {n, 1, hp * 3});
  const ag::Tensor k = ag::reshape(transform_points(poses, points("point_k")), {1, n, hp * 3});
  const ag::Tensor diff = ag::sub(q, k);  // [N, N, HP*3]
  const ag::Tensor sq = ag::reshape(diff * diff, {n, n, cfg.n_heads, cfg.n_virtual_points * 3});
  return {ag::permute(ag::sum(sq, 3), {2, 0, 1}), points("point_v")};
}

ag::Tensor combine_weights(const ag::Tensor& n, const ag::Tensor& e, const ag::Tensor& p, bool negate_point_term) {
  if (n.shape() != e.shape() || n.shape() != p.shape()) {
    throw ag::ShapeError("combine_weights: shapes " + ag::shape_str(n.shape()) + ", " + ag::shape_str(e.shape()) +
                         ", " + ag::shape_str(p.shape()) + " differ");
  }
  return ag::softmax_lastdim(negate_point_term ? n + e + p : n + e - p);
}

ag::Tensor update_features(const ag::ParameterStore& store, std::size_t layer, const GpatConfig& cfg,
                           const ag::Tensor& a, const ag::Tensor& v, const ag::Tensor& z,
                           const ag::Tensor& value_points, const PoseTensors& poses, const ag::Tensor& h) {
  const std::size_t n = h.dim(0), heads = cfg.n_heads, pts = cfg.n_virtual_points;
  const ag::Tensor o_n = ag::reshape(ag::permute(ag::matmul(a, v), {1, 0, 2}), {n, heads * cfg.head_dim});
  const ag::Tensor o_e = ag::reshape(ag::matmul(ag::permute(a, {1, 0, 2}), z), {n, heads * z.dim(2)});

  // Value points move to the world frame with their own part's pose, are
  // aggregated, and return to the receiving part's frame.
  const ag::Tensor world = ag::reshape(transform_points(poses, value_points), {n, heads, pts * 3});
  const ag::Tensor agg = ag::matmul(a, ag::permute(world, {1, 0, 2}));  // [H, N, P*3]
  const ag::Tensor local = inverse_transform_points(
      poses, ag::reshape(ag::permute(agg, {1, 0, 2}), {n, heads * pts, 3}));
  const ag::Tensor o_pts = ag::l2norm_lastdim(local);  // [N, H*P]

  const ag::Tensor delta = nn::mlp(store, lname(layer, "update"), ag::concat({o_n, o_e, o_pts}, 1));
  return h + delta;
}

PoseTensors apply_pose_delta(const ag::Tensor& delta_rot, const ag::Tensor& delta_trans, const PoseTensors& poses,
                             bool world_frame) {
  const std::size_t n = poses.count();
  PoseTensors out;
  if (world_frame) {
    out.rot = ag::matmul(delta_rot, poses.rot);
    out.trans = ag::reshape(ag::matmul(delta_rot, ag::reshape(poses.trans, {n, 3, 1})), {n, 3}) + delta_trans;
  } else {
    out.rot = ag::matmul(poses.rot, delta_rot);
    out.trans = ag::reshape(ag::matmul(poses.rot, ag::reshape(delta_trans, {n, 3, 1})), {n, 3}) + poses.trans;
  }
  return out;
}

PoseTensors update_pose(const ag::ParameterStore& store, std::size_t layer, const GpatConfig& cfg,
                        const ag::Tensor& h_hat, const PoseTensors& poses) {
  const ag::Tensor delta_r = quat_to_rotation(nn::mlp(store, lname(layer, "quat"), h_hat));
  const ag::Tensor delta_t = nn::mlp(store, lname(layer, "trans"), h_hat);
  return apply_pose_delta(delta_r, delta_t, poses, cfg.world_frame_update);
}

LayerState gpat_layer(const ag::ParameterStore& store, std::size_t layer, const GpatConfig& cfg,
                      const encoder::EncoderConfig& enc, const LayerState& state, AttentionTerms* terms) {
  const PartAttention part = part_attention(store, layer, cfg, state.h);
  const ag::Tensor e = pair_attention(store, layer, cfg, state.z, pair_geometry(state.centers, enc));
  const PointAttention point = point_attention(store, layer, cfg, state.h, state.poses);
  const ag::Tensor a = combine_weights(part.n, e, point.p, cfg.negate_point_term);
  if (terms != nullptr) *terms = {part.n, e, point.p, a};

  LayerState next;
  next.h = update_features(store, layer, cfg, a, part.v, state.z, point.value_points, state.poses, state.h);
  next.poses = update_pose(store, layer, cfg, next.h, state.poses);
  next.z = state.z;
  next.centers = state.centers;
  return next;
}

GpatOutput gpat_forward(const ag::ParameterStore& store, const GpatConfig& cfg, const encoder::EncoderConfig& enc,
                        const encoder::PartFeatures& features, const std::vector<geom::Vec3>& centers,
                        const PoseTensors& initial) {
  LayerState state{features.h, features.z, initial, centers};
  for (std::size_t l = 0; l < cfg.n_layers; ++l) state = gpat_layer(store, l, cfg, enc, state);
  return {state.poses, state.h};
}

}  // namespace gpat::core
