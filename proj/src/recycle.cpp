#include "gpat/recycle.hpp"

#include <cmath>
#include <stdexcept>

#include "gpat/nn.hpp"

namespace gpat::recycle {

void RecycleConfig::validate() const {
  if (n_recycle < 1) throw std::invalid_argument("recycle: n_recycle must be at least 1");
  if (infer_rounds < 1) throw std::invalid_argument("recycle: infer_rounds must be at least 1");
}

void ModelConfig::validate() const {
  encoder.validate();
  gpat.validate();
  if (encoder.d != gpat.d) {
    throw std::invalid_argument("model: encoder width " + std::to_string(encoder.d) + " != attention width " +
                                std::to_string(gpat.d));
  }
}

void add_model_params(ag::ParameterStore& store, const ModelConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  encoder::add_encoder_params(store, cfg.encoder, rng);
  core::add_gpat_params(store, cfg.gpat, cfg.encoder.bins(), rng);
  const std::size_t d = cfg.encoder.d;
  nn::add_mlp(store, "pose_embed", {9, d, d, d}, rng);
}

RecycleState RecycleState::zeros(std::size_t n_parts, const encoder::EncoderConfig& enc) {
  return {ag::Tensor::zeros({n_parts, enc.d}), ag::Tensor::zeros({n_parts, enc.d}),
          ag::Tensor::zeros({n_parts, n_parts, enc.bins()}), 0};
}

PositionFeatures position_recycle(const ag::ParameterStore& store, const std::vector<encoder::PartCloud>& clouds,
                                  const std::vector<geom::RigidTransform>& poses, const encoder::EncoderConfig& enc) {
  if (poses.size() != clouds.size()) throw std::invalid_argument("position_recycle: pose count != part count");
  std::vector<encoder::PartCloud> moved(clouds.size());
  std::vector<ag::Tensor> tensors;
  for (std::size_t i = 0; i < clouds.size(); ++i) {
    moved[i].points = geom::apply(poses[i], clouds[i].points);
    moved[i].part_id = clouds[i].part_id;
    tensors.push_back(encoder::cloud_tensor(moved[i].points));
  }
  const std::vector<geom::Vec3> centers = core::part_centers(moved);
  const std::size_t n = clouds.size(), bins = enc.bins();
  std::vector<double> z(n * n * bins);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const auto r = encoder::rbf_distance(geom::norm(centers[i] - centers[j]), enc);
      std::copy(r.begin(), r.end(), z.begin() + static_cast<std::ptrdiff_t>((i * n + j) * bins));
    }
  }
  return {encoder::backbone_all(store, tensors), ag::Tensor::from({n, n, bins}, std::move(z))};
}

std::array<double, 9> pose_features(const geom::RigidTransform& pose) {
  const geom::EulerAngles r = geom::mat2axis(pose.r);
  return {std::sin(r.phi), std::sin(r.theta), std::sin(r.psi),  //
          std::cos(r.phi), std::cos(r.theta), std::cos(r.psi),  //
          pose.t.v.x,      pose.t.v.y,        pose.t.v.z};
}

ag::Tensor pose_recycle(const ag::ParameterStore& store, const std::vector<geom::RigidTransform>& poses) {
  std::vector<double> input;
  input.reserve(9 * poses.size());
  for (const geom::RigidTransform& p : poses) {
    const auto f = pose_features(p);
    input.insert(input.end(), f.begin(), f.end());
  }
  return nn::mlp(store, "pose_embed", ag::Tensor::from({poses.size(), 9}, std::move(input)));
}

RecycleState make_state(const ag::ParameterStore& store, const ModelConfig& cfg,
                        const std::vector<encoder::PartCloud>& clouds,
                        const std::optional<std::vector<geom::RigidTransform>>& previous, std::size_t round_index) {
  if (!previous) {
    RecycleState s = RecycleState::zeros(clouds.size(), cfg.encoder);
    s.round_index = round_index;
    return s;
  }
  PositionFeatures pos = position_recycle(store, clouds, *previous, cfg.encoder);
  return {pos.h_pos, pose_recycle(store, *previous), pos.z_pos, round_index};
}

core::GpatOutput run_round(const ag::ParameterStore& store, const ModelConfig& cfg,
                           const std::vector<encoder::PartCloud>& clouds, const RecycleState& state) {
  std::vector<ag::Tensor> tensors;
  tensors.reserve(clouds.size());
  for (const encoder::PartCloud& c : clouds) tensors.push_back(encoder::cloud_tensor(c.points));
  const encoder::PartFeatures f = encoder::encode(store, tensors, state.h_pos, state.h_pose, state.z_pos);
  return core::gpat_forward(store, cfg.gpat, cfg.encoder, f, core::part_centers(clouds),
                            core::PoseTensors::identity(clouds.size()));
}

RecycleResult run_rounds(const ag::ParameterStore& store, const ModelConfig& cfg,
                         const std::vector<encoder::PartCloud>& clouds, std::size_t rounds, bool tape_all) {
  if (rounds < 1) throw std::invalid_argument("run_rounds: need at least one round");
  RecycleResult out;
  out.rounds = rounds;
  std::optional<std::vector<geom::RigidTransform>> previous;
  for (std::size_t k = 0; k < rounds; ++k) {
    const bool taped = tape_all || k + 1 == rounds;
    std::optional<ag::NoGradScope> frozen;
    if (!taped) frozen.emplace();
    const RecycleState state = make_state(store, cfg, clouds, previous, k);
    core::GpatOutput o = run_round(store, cfg, clouds, state);
    previous = o.poses.values();
    out.round_poses.push_back(*previous);
    if (tape_all) out.taped_rounds.push_back(o.poses);
    if (k + 1 == rounds) out.final_poses = o.poses;
  }
  return out;
}

RecycleResult run_with_recycling(const ag::ParameterStore& store, const ModelConfig& cfg,
                                 const RecycleConfig& rcfg, const std::vector<encoder::PartCloud>& clouds, Mode mode,
                                 std::mt19937_64& rng) {
  rcfg.validate();
  if (mode == Mode::infer) {
    ag::NoGradScope frozen;
    return run_rounds(store, cfg, clouds, rcfg.infer_rounds);
  }
  return run_rounds(store, cfg, clouds, sample_recycle_count(rng, rcfg.n_recycle), rcfg.loss_all_rounds);
}

std::size_t sample_recycle_count(std::mt19937_64& rng, std::size_t max) {
  if (max < 1) throw std::invalid_argument("sample_recycle_count: max must be at least 1");
  return std::uniform_int_distribution<std::size_t>(1, max)(rng);
}

}  // namespace gpat::recycle
