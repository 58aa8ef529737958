#include "gpat/verify.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <numbers>

#include "gpat/objective.hpp"
#include "gpat/recycle.hpp"
#include "gpat/synthdata.hpp"
#include "gpat/train.hpp"

namespace gpat::verify {

namespace {

using Quat = std::array<double, 4>;  // (w, x, y, z)

Quat hamilton(const Quat& a, const Quat& b) {
  return {a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3], a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
          a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1], a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]};
}

geom::QuatImag random_quat(std::mt19937_64& rng) {
  // Mix of scales so that tiny and huge imaginary parts are both covered.
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_int_distribution<int> e(-9, 4);
  const double s = std::pow(10.0, e(rng));
  return {s * u(rng), s * u(rng), s * u(rng)};
}

double max_gap(std::span<const double> a, std::span<const double> b) {
  double g = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) g = std::max(g, std::abs(a[i] - b[i]));
  return g;
}

std::vector<encoder::PartCloud> random_clouds(std::mt19937_64& rng, std::size_t parts, std::size_t points) {
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  std::vector<encoder::PartCloud> out(parts);
  for (std::size_t i = 0; i < parts; ++i) {
    const geom::Vec3 shift{2.0 * u(rng), 2.0 * u(rng), 2.0 * u(rng)};
    for (std::size_t k = 0; k < points; ++k) out[i].points.push_back(shift + geom::Vec3{u(rng), u(rng), u(rng)});
    out[i].part_id = static_cast<int>(i);
  }
  return out;
}

geom::RigidTransform random_pose(std::mt19937_64& rng, double reach) {
  std::uniform_real_distribution<double> u(-reach, reach);
  const geom::Rotation r = geom::random_rotation(rng);
  return {r, {{u(rng), u(rng), u(rng)}}};
}

config::RunConfig toy_config(std::size_t d, std::size_t heads, std::size_t points, std::size_t layers) {
  config::RunConfig cfg;
  cfg.model.encoder.d = cfg.model.gpat.d = d;
  cfg.model.gpat.n_heads = heads;
  cfg.model.gpat.head_dim = 8;
  cfg.model.gpat.n_virtual_points = points;
  cfg.model.gpat.n_layers = layers;
  return cfg;
}

std::map<std::string, std::vector<double>> take_grads(ag::ParameterStore& store) {
  std::map<std::string, std::vector<double>> out;
  for (auto& [name, p] : store.all()) {
    out[name] = p.has_grad() ? std::vector<double>(p.grad().begin(), p.grad().end())
                             : std::vector<double>(p.numel(), 0.0);
  }
  store.zero_grad();
  return out;
}

}  // namespace

double quat2rot_orthonormality(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const geom::Rotation r = geom::quat2rot(random_quat(rng));
    const geom::Mat3 gram = r.matrix().transposed() * r.matrix();
    worst = std::max(worst, max_gap(gram.m, geom::Mat3::identity().m));
    worst = std::max(worst, std::abs(r.matrix().determinant() - 1.0));
  }
  return worst;
}

double quat2rot_oracle_gap(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const geom::QuatImag q = random_quat(rng);
    const double s = std::sqrt(1.0 + q.b * q.b + q.c * q.c + q.d * q.d);
    const Quat unit{1.0 / s, q.b / s, q.c / s, q.d / s};
    const Quat conj{unit[0], -unit[1], -unit[2], -unit[3]};
    geom::Mat3 oracle;
    for (int col = 0; col < 3; ++col) {
      Quat basis{0.0, 0.0, 0.0, 0.0};
      basis[static_cast<std::size_t>(col) + 1] = 1.0;
      const Quat image = hamilton(hamilton(unit, basis), conj);
      for (int row = 0; row < 3; ++row) oracle(row, col) = image[static_cast<std::size_t>(row) + 1];
    }
    worst = std::max(worst, max_gap(geom::quat2rot(q).matrix().m, oracle.m));
  }
  return worst;
}

double euler_roundtrip_gap(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const double pi = std::numbers::pi;
  std::uniform_real_distribution<double> full(-pi + 1e-6, pi);
  std::uniform_real_distribution<double> pitch(-pi / 2 + 0.1, pi / 2 - 0.1);
  double worst = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const geom::EulerAngles e{full(rng), pitch(rng), full(rng)};
    const geom::EulerAngles back = geom::mat2axis(geom::axis2mat(e));
    worst = std::max({worst, std::abs(back.phi - e.phi), std::abs(back.theta - e.theta), std::abs(back.psi - e.psi)});
    worst = std::max(worst, max_gap(geom::axis2mat(back).matrix().m, geom::axis2mat(e).matrix().m));
  }
  return worst;
}

InvarianceGap invariance_trial(std::uint64_t seed, core::GpatConfig shape) {
  std::mt19937_64 rng(seed);
  recycle::ModelConfig model;
  model.encoder.d = shape.d = 32;
  model.gpat = shape;
  ag::ParameterStore store;
  recycle::add_model_params(store, model, rng);
  ag::NoGradScope frozen;

  const std::size_t n = 2 + static_cast<std::size_t>(rng() % 3);
  const auto clouds = random_clouds(rng, n, 16);
  std::vector<ag::Tensor> tensors;
  for (const auto& c : clouds) tensors.push_back(encoder::cloud_tensor(c.points));
  const recycle::RecycleState zero = recycle::RecycleState::zeros(n, model.encoder);
  const encoder::PartFeatures f = encoder::encode(store, tensors, zero.h_pos, zero.h_pose, zero.z_pos);

  std::vector<geom::RigidTransform> base(n), moved(n);
  const geom::RigidTransform g = random_pose(rng, 2.0);
  for (std::size_t i = 0; i < n; ++i) {
    base[i] = random_pose(rng, 1.0);
    moved[i] = geom::compose(g, base[i]);
  }
  const std::vector<geom::Vec3> centers = core::part_centers(clouds);
  std::vector<geom::Vec3> moved_centers;
  for (const geom::Vec3& c : centers) moved_centers.push_back(geom::apply(g, c));

  InvarianceGap gap;
  core::AttentionTerms ta, tb;
  const core::LayerState sa{f.h, f.z, core::PoseTensors::constant(base), centers};
  const core::LayerState sb{f.h, f.z, core::PoseTensors::constant(moved), moved_centers};
  if (shape.n_layers > 0) {
    const core::LayerState na = core::gpat_layer(store, 0, shape, model.encoder, sa, &ta);
    const core::LayerState nb = core::gpat_layer(store, 0, shape, model.encoder, sb, &tb);
    gap.attention = max_gap(ta.a.data(), tb.a.data());
    gap.features = max_gap(na.h.data(), nb.h.data());
  }

  const auto pa = core::gpat_forward(store, shape, model.encoder, f, centers, sa.poses).poses.values();
  const auto pb = core::gpat_forward(store, shape, model.encoder, f, moved_centers, sb.poses).poses.values();
  for (std::size_t i = 0; i < n; ++i) {
    const geom::RigidTransform expect = geom::compose(g, pa[i]);
    gap.rotation = std::max(gap.rotation, geom::frobenius_norm(expect.r.matrix() - pb[i].r.matrix()));
    gap.translation = std::max(gap.translation, geom::norm(expect.t.v - pb[i].t.v));
  }
  return gap;
}

ag::FdReport toy_gradient_error(std::uint64_t seed) {
  const config::RunConfig cfg = toy_config(16, 2, 2, 1);
  const synth::AssemblySample sample = synth::generate_from_seed(seed, 2, 8, "toy");
  ag::ParameterStore store = train::init_params(cfg.model, seed);
  auto loss = [&] { return train::sample_loss(store, cfg, sample, 1).total; };
  return ag::finite_difference_report(loss, store, 1e-5);
}

double stop_gradient_gap(std::uint64_t seed, std::size_t rounds) {
  if (rounds < 2) throw std::invalid_argument("stop_gradient_gap: needs at least two rounds");
  const config::RunConfig cfg = toy_config(16, 2, 2, 2);
  const synth::AssemblySample sample = synth::generate_from_seed(seed, 3, 16, "toy");
  ag::ParameterStore store = train::init_params(cfg.model, seed);

  std::map<std::string, std::vector<double>> through_network, injected;
  {
    ag::Tape tape;
    ag::TapeScope scope(tape);
    const auto run = recycle::run_rounds(store, cfg.model, sample.parts, rounds);
    tape.backward(objective::compute_losses(run.final_poses, sample.gt_poses, sample.parts, cfg.loss).total);
    through_network = take_grads(store);
  }
  std::vector<geom::RigidTransform> previous;
  {
    ag::NoGradScope frozen;
    previous = recycle::run_rounds(store, cfg.model, sample.parts, rounds - 1).round_poses.back();
  }
  {
    ag::Tape tape;
    ag::TapeScope scope(tape);
    const recycle::RecycleState state = recycle::make_state(store, cfg.model, sample.parts, previous, rounds - 1);
    const core::GpatOutput out = recycle::run_round(store, cfg.model, sample.parts, state);
    tape.backward(objective::compute_losses(out.poses, sample.gt_poses, sample.parts, cfg.loss).total);
    injected = take_grads(store);
  }
  double worst = 0.0;
  for (const auto& [name, g] : through_network) worst = std::max(worst, max_gap(g, injected.at(name)));
  return worst;
}

double chamfer_path_gap(std::size_t pairs, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> size(1, 300);
  std::normal_distribution<double> noise(0.0, 1.0);
  double worst = 0.0;
  for (std::size_t k = 0; k < pairs; ++k) {
    // Alternate uniform clouds with anisotropic, clustered ones.
    const double sx = k % 2 == 0 ? 1.0 : 0.05, sy = 1.0, sz = k % 3 == 0 ? 3.0 : 1.0;
    auto cloud = [&](std::size_t m) {
      std::vector<geom::Vec3> pts(m);
      for (auto& p : pts) p = {sx * noise(rng), sy * noise(rng), sz * noise(rng)};
      return pts;
    };
    const auto p = cloud(k == 0 ? 50 : size(rng)), q = cloud(k == 0 ? 50 : size(rng));
    const double brute = objective::chamfer_distance(p, q, objective::ChamferMethod::brute_force);
    const double grid = objective::chamfer_distance(p, q, objective::ChamferMethod::grid);
    worst = std::max(worst, std::abs(brute - grid));
  }
  return worst;
}

std::vector<PropertyResult> run_suite(const std::string& level, bool negate_point_term, std::ostream& out) {
  if (level != "quick" && level != "full") throw std::invalid_argument("verify: level must be quick or full");
  const bool full = level == "full";
  std::vector<PropertyResult> results;
  auto record = [&](const std::string& name, double measured, double tol) {
    results.push_back({name, measured, tol, measured < tol});
    char line[160];
    std::snprintf(line, sizeof line, "%s %-28s measured=%.3e tol=%.0e", measured < tol ? "PASS" : "FAIL",
                  name.c_str(), measured, tol);
    out << line << std::endl;
  };

  record("quat2rot_orthonormal", quat2rot_orthonormality(10000, 11), 1e-9);
  record("quat2rot_matches_oracle", quat2rot_oracle_gap(10000, 12), 1e-9);
  record("euler_roundtrip", euler_roundtrip_gap(10000, 13), 1e-9);

  core::GpatConfig shape;
  shape.n_layers = 2;
  shape.n_heads = 4;
  shape.head_dim = 8;
  shape.n_virtual_points = 4;
  shape.negate_point_term = negate_point_term;
  InvarianceGap worst;
  const std::size_t seeds = full ? 1000 : 20;
  for (std::size_t s = 0; s < seeds; ++s) {
    const InvarianceGap g = invariance_trial(1000 + s, shape);
    worst.attention = std::max(worst.attention, g.attention);
    worst.features = std::max(worst.features, g.features);
    worst.rotation = std::max(worst.rotation, g.rotation);
    worst.translation = std::max(worst.translation, g.translation);
  }
  record("attention_invariance", worst.attention, 1e-6);
  record("feature_invariance", worst.features, 1e-6);
  record("pose_equivariance_rotation", worst.rotation, 1e-6);
  record("pose_equivariance_translation", worst.translation, 1e-6);

  {
    // Norm-wise over the whole gradient; see README for why not per entry.
    const ag::FdReport fd = toy_gradient_error(5);
    record("gradient_check", fd.global, 1e-4);
    char line[200];
    std::snprintf(line, sizeof line, "     (per entry %.3e, worst tensor %.3e in %s)", fd.elementwise, fd.tensorwise,
                  fd.worst_tensor.c_str());
    out << line << std::endl;
  }
  record("stop_gradient", stop_gradient_gap(6, 3), 1e-12);
  record("chamfer_grid_vs_brute", chamfer_path_gap(full ? 1000 : 100, 14), 1e-9);
  return results;
}

}  // namespace gpat::verify
