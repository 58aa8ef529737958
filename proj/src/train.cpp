#include "gpat/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <numeric>
#include <thread>

namespace gpat::train {

std::string log_header() { return "step,recycle_r,loss_total,loss_pose,loss_chamfer,loss_point,wall_ms"; }

std::string log_row(const StepLog& s) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%zu,%.9g,%.9g,%.9g,%.9g,%.3f", s.step, s.recycle_r, s.loss_total, s.loss_pose,
                s.loss_chamfer, s.loss_point, s.wall_ms);
  return buf;
}

ag::ParameterStore init_params(const recycle::ModelConfig& model, std::uint64_t seed) {
  ag::ParameterStore store;
  std::mt19937_64 rng(seed);
  recycle::add_model_params(store, model, rng);
  return store;
}

objective::LossComponents sample_loss(const ag::ParameterStore& store, const config::RunConfig& cfg,
                                      const synth::AssemblySample& sample, std::size_t rounds) {
  const bool all = cfg.recycle.loss_all_rounds;
  const recycle::RecycleResult run = recycle::run_rounds(store, cfg.model, sample.parts, rounds, all);
  if (!all) return objective::compute_losses(run.final_poses, sample.gt_poses, sample.parts, cfg.loss);
  objective::LossComponents sum;
  const double w = 1.0 / static_cast<double>(run.taped_rounds.size());
  for (const core::PoseTensors& poses : run.taped_rounds) {
    objective::LossComponents c = objective::compute_losses(poses, sample.gt_poses, sample.parts, cfg.loss);
    if (!sum.total.defined()) {
      sum = {ag::scale(c.pose, w), ag::scale(c.chamfer, w), ag::scale(c.point, w), ag::scale(c.total, w)};
    } else {
      sum.pose = sum.pose + ag::scale(c.pose, w);
      sum.chamfer = sum.chamfer + ag::scale(c.chamfer, w);
      sum.point = sum.point + ag::scale(c.point, w);
      sum.total = sum.total + ag::scale(c.total, w);
    }
  }
  return sum;
}

Trainer::Trainer(config::RunConfig cfg, std::vector<synth::AssemblySample> data)
    : cfg_(std::move(cfg)), data_(std::move(data)) {
  cfg_.validate();
  std::seed_seq seq{cfg_.training.seed, std::uint64_t{1}};
  rng_.seed(seq);
  if (data_.empty()) throw std::invalid_argument("trainer: empty dataset");
  store_ = init_params(cfg_.model, cfg_.training.seed);
  order_.resize(data_.size());
}

std::size_t Trainer::next_index() {
  if (cursor_ == 0) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    for (std::size_t k = order_.size(); k > 1; --k) {
      std::swap(order_[k - 1], order_[std::uniform_int_distribution<std::size_t>(0, k - 1)(rng_)]);
    }
  }
  const std::size_t idx = order_[cursor_];
  cursor_ = (cursor_ + 1) % order_.size();
  return idx;
}

StepLog Trainer::step() {
  const auto start = std::chrono::steady_clock::now();
  StepLog log;
  log.step = steps_ + 1;
  log.recycle_r = recycle::sample_recycle_count(rng_, cfg_.recycle.n_recycle);
  const std::size_t batch = cfg_.training.batch_size;
  const double w = 1.0 / static_cast<double>(batch);
  store_.zero_grad();
  for (std::size_t b = 0; b < batch; ++b) {
    const synth::AssemblySample& sample = data_[next_index()];
    ag::Tape tape;
    ag::TapeScope scope(tape);
    objective::LossComponents c;
    try {
      c = sample_loss(store_, cfg_, sample, log.recycle_r);
    } catch (const ag::NumericError& e) {
      throw NumericDivergence(log.step, std::string(e.what()) + " at step " + std::to_string(log.step) +
                                            " (object " + sample.object_id + ")");
    }
    const double total = c.total.item();
    if (!std::isfinite(total)) {
      throw NumericDivergence(log.step, "non-finite loss at step " + std::to_string(log.step) + " (object " +
                                            sample.object_id + ")");
    }
    log.loss_total += w * total;
    log.loss_pose += w * c.pose.item();
    log.loss_chamfer += w * c.chamfer.item();
    log.loss_point += w * c.point.item();
    tape.backward(ag::scale(c.total, w));
  }
  for (const auto& [name, p] : store_.all()) {
    for (double g : p.grad()) {
      if (!std::isfinite(g)) throw NumericDivergence(log.step, "non-finite gradient in '" + name + "' at step " +
                                                                   std::to_string(log.step));
    }
  }
  // Parameters that the sampled round count never reached (pose_embed at r = 1).
  store_.fill_missing_grads();
  store_.adam_step(cfg_.optimizer);
  ++steps_;
  log.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return log;
}

std::vector<geom::RigidTransform> predict(const ag::ParameterStore& store, const recycle::ModelConfig& model,
                                          const std::vector<encoder::PartCloud>& clouds, std::size_t rounds) {
  ag::NoGradScope frozen;
  return recycle::run_rounds(store, model, clouds, rounds).round_poses.back();
}

std::size_t worker_threads() {
  const char* env = std::getenv("GPAT_THREADS");
  if (env == nullptr) return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  return (end != env && *end == '\0' && v > 0) ? static_cast<std::size_t>(v) : 1;
}

void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t k = 0; k < n; ++k) fn(k);
    return;
  }
  std::exception_ptr first;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t k = w; k < n; k += workers) fn(k);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!first) first = std::current_exception();
      }
    });
  }
  for (std::thread& t : pool) t.join();
  if (first) std::rethrow_exception(first);
}

}  // namespace gpat::train
