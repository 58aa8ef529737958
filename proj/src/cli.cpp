#include "gpat/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>

#include "CLI11.hpp"
#include "gpat/config.hpp"
#include "gpat/objective.hpp"
#include "gpat/params.hpp"
#include "gpat/synthdata.hpp"
#include "gpat/train.hpp"
#include "gpat/verify.hpp"

namespace gpat::cli {

namespace fs = std::filesystem;

namespace {

// I/O failure that should surface as exit 3 with the offending path.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create " + path.parent_path().string() + ": " + ec.message());
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  if (!f) throw IoError("write failed for " + path.string());
}

void require_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("dataset directory " + dir.string() + " does not exist");
}

std::string metadata_for(const config::RunConfig& cfg) {
  return config::model_text(cfg.model) + "training.seed=" + std::to_string(cfg.training.seed) + "\n";
}

// Model from checkpoint metadata, or from --config when given; the
// checkpoint must fit the model either way.
struct LoadedModel {
  recycle::ModelConfig model;
  ag::ParameterStore store;
};

LoadedModel load_model(const fs::path& ckpt_path, const std::optional<fs::path>& config_path) {
  const ag::Checkpoint ckpt = ag::read_checkpoint(ckpt_path);
  LoadedModel m;
  m.model = config::parse_model_text(ckpt.metadata);
  if (config_path) {
    const recycle::ModelConfig wanted = config::load_config(*config_path).model;
    // Settings that do not change tensor shapes still have to agree.
    std::istringstream a(config::model_text(wanted)), b(config::model_text(m.model));
    std::string la, lb;
    while (std::getline(a, la) && std::getline(b, lb)) {
      if (la != lb) {
        const std::string key = la.substr(0, la.find('='));
        throw ag::CheckpointMismatch(key, "config has " + la + " but checkpoint has " + lb);
      }
    }
    m.model = wanted;
  }
  m.model.validate();
  m.store = train::init_params(m.model, 0);
  ag::load_into(ckpt, m.store);
  return m;
}

std::vector<geom::RigidTransform> identity_poses(std::size_t n) { return std::vector<geom::RigidTransform>(n); }

// ---- gen-data --------------------------------------------------------------------

struct GenFlags {
  std::uint64_t seed = 0;
  std::size_t n_samples = 0;
  std::size_t parts_min = 2;
  std::size_t parts_max = 4;
  std::size_t points = 64;
  std::string out;
  std::optional<double> split;
};

synth::AssemblySample generate_one(const GenFlags& f, std::size_t k) {
  std::seed_seq seq{f.seed, static_cast<std::uint64_t>(k)};
  std::mt19937_64 rng(seq);
  const std::size_t n = std::uniform_int_distribution<std::size_t>(f.parts_min, f.parts_max)(rng);
  const std::uint64_t sample_seed = rng();
  return synth::generate_from_seed(sample_seed, n, f.points, "box-" + std::to_string(sample_seed));
}

int cmd_gen_data(const GenFlags& f, std::ostream& out) {
  if (f.parts_max < f.parts_min) throw CLI::ValidationError("--parts-max", "must be at least --parts-min");
  std::vector<synth::AssemblySample> samples(f.n_samples);
  train::parallel_for(f.n_samples, train::worker_threads(), [&](std::size_t k) {
    samples[k] = generate_one(f, k);
    const synth::CheckReport check = synth::canonical_check(samples[k]);
    if (!check.passed()) {
      std::string why;
      for (const auto& item : check.items) {
        if (!item.passed) why += " " + item.name + " (" + item.detail + ")";
      }
      throw IoError("sample " + std::to_string(k) + " failed validation:" + why);
    }
  });
  synth::DatasetManifest manifest;
  manifest.seed = f.seed;
  manifest.parts_min = f.parts_min;
  manifest.parts_max = f.parts_max;
  manifest.points_per_part = f.points;
  const fs::path dir(f.out);
  if (!f.split) {
    synth::write_dataset(samples, manifest, dir);
  } else {
    // Split by object id, then write each side as its own dataset.
    synth::DatasetManifest all = manifest;
    for (std::size_t k = 0; k < samples.size(); ++k) all.entries.push_back({std::to_string(k), samples[k].object_id});
    std::seed_seq seq{f.seed, std::uint64_t{2}};
    std::mt19937_64 rng(seq);
    const auto [train_m, test_m] = synth::split_dataset(all, *f.split, rng);
    for (const auto* side : {&train_m, &test_m}) {
      std::vector<std::size_t> idx;
      for (const auto& e : side->entries) idx.push_back(std::stoul(e.file));
      std::sort(idx.begin(), idx.end());
      std::vector<synth::AssemblySample> subset;
      for (std::size_t k : idx) subset.push_back(samples[k]);
      synth::DatasetManifest m = manifest;
      m.split = side->split;
      synth::write_dataset(subset, m, dir / side->split);
    }
    out << "split " << train_m.entries.size() << " train / " << test_m.entries.size() << " test\n";
  }
  out << "generated " << f.n_samples << " samples\n";
  return kOk;
}

// ---- train -----------------------------------------------------------------------

struct TrainFlags {
  std::string config;
  std::string data;
  std::string out_ckpt;
};

int cmd_train(const TrainFlags& f, std::ostream& out) {
  config::RunConfig cfg = config::load_config(f.config);
  if (!f.data.empty()) cfg.paths.data = f.data;
  if (!f.out_ckpt.empty()) cfg.paths.checkpoint = f.out_ckpt;
  if (cfg.paths.data.empty()) throw CLI::ValidationError("--data", "no dataset given (flag or paths.data)");
  if (cfg.paths.checkpoint.empty()) throw CLI::ValidationError("--out-ckpt", "no checkpoint path given");
  cfg.validate();
  require_dataset(cfg.paths.data);
  std::vector<synth::AssemblySample> data = synth::read_dataset(cfg.paths.data);

  const fs::path ckpt(cfg.paths.checkpoint);
  const fs::path log_path = cfg.paths.log.empty() ? fs::path(ckpt.string() + ".log.csv") : fs::path(cfg.paths.log);
  out << "seed=" << cfg.training.seed << " steps=" << cfg.training.steps << " samples=" << data.size() << "\n";

  train::Trainer trainer(cfg, std::move(data));
  std::string log = train::log_header() + "\n";
  const std::string meta = metadata_for(cfg);
  for (std::size_t s = 0; s < cfg.training.steps; ++s) {
    const train::StepLog row = trainer.step();
    log += train::log_row(row) + "\n";
    if (cfg.training.eval_every > 0 && row.step % cfg.training.eval_every == 0 && row.step < cfg.training.steps) {
      ag::save_checkpoint(ckpt.string() + ".step" + std::to_string(row.step), trainer.params(), meta);
      write_text(log_path, log);
      char buf[96];
      std::snprintf(buf, sizeof buf, "step %zu loss %.6g\n", row.step, row.loss_total);
      out << buf;
    }
  }
  write_text(log_path, log);
  ag::save_checkpoint(ckpt, trainer.params(), meta);
  out << "wrote " << ckpt.string() << "\n";
  return kOk;
}

// ---- eval ------------------------------------------------------------------------

struct EvalFlags {
  std::string ckpt;
  std::string data;
  std::size_t rounds = 4;
  std::string report;
  std::string config;
  bool identity = false;
};

int cmd_eval(const EvalFlags& f, std::ostream& out) {
  if (!f.identity && f.ckpt.empty()) throw CLI::ValidationError("--ckpt", "required unless --identity-baseline");
  require_dataset(f.data);
  const std::vector<synth::AssemblySample> data = synth::read_dataset(f.data);
  std::optional<LoadedModel> model;
  if (!f.identity) {
    model = load_model(f.ckpt, f.config.empty() ? std::nullopt : std::optional<fs::path>(f.config));
  }

  std::vector<objective::MetricReport> reports(data.size());
  train::parallel_for(data.size(), train::worker_threads(), [&](std::size_t k) {
    const synth::AssemblySample& s = data[k];
    const auto pred = f.identity ? identity_poses(s.parts.size())
                                 : train::predict(model->store, model->model, s.parts, f.rounds);
    reports[k] = objective::evaluate(pred, s.gt_poses, s.parts, s.contacts);
  });

  std::string csv = objective::MetricReport::csv_header() + "\n";
  for (std::size_t k = 0; k < data.size(); ++k) csv += reports[k].csv_row(data[k].object_id) + "\n";
  const objective::MetricReport total = objective::aggregate(reports);
  std::string text = "rounds=" + std::to_string(f.rounds) + "\n";
  text += std::string("predictor=") + (f.identity ? "identity" : "checkpoint") + "\n";
  text += total.to_text();
  if (!f.report.empty()) {
    write_text(f.report, text);
    write_text(f.report + ".samples.csv", csv);
  }
  out << text;
  return kOk;
}

// ---- assemble --------------------------------------------------------------------

struct AssembleFlags {
  std::string ckpt;
  std::string sample;
  std::string out;
  std::size_t rounds = 4;
  std::string config;
};

int cmd_assemble(const AssembleFlags& f, std::ostream& out) {
  const synth::AssemblySample s = synth::read_sample(f.sample);
  const LoadedModel m = load_model(f.ckpt, f.config.empty() ? std::nullopt : std::optional<fs::path>(f.config));
  const std::vector<geom::RigidTransform> pred = train::predict(m.store, m.model, s.parts, f.rounds);

  std::string text = "GPATASSEMBLY 1\nobject " + s.object_id + "\n";
  for (std::size_t k = 0; k < pred.size(); ++k) text += synth::format_pose(k, pred[k]);
  char buf[160];
  for (std::size_t k = 0; k < pred.size(); ++k) {
    for (const geom::Vec3& p : geom::apply(pred[k], s.parts[k].points)) {
      std::snprintf(buf, sizeof buf, "point %zu %.17g %.17g %.17g\n", k, p.x, p.y, p.z);
      text += buf;
    }
  }
  write_text(f.out, text);

  constexpr double tau = 0.01;
  std::size_t hits = 0;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    const double cd = objective::chamfer_distance(geom::apply(s.gt_poses[k], s.parts[k].points),
                                                  geom::apply(pred[k], s.parts[k].points));
    const bool ok = cd < tau;
    hits += ok ? 1 : 0;
    std::snprintf(buf, sizeof buf, "part %zu cd=%.6g %s\n", k, cd, ok ? "placed" : "misplaced");
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "part_accuracy=%.6g\nshape_cd=%.6g\n", 100.0 * hits / pred.size(),
                objective::shape_chamfer(pred, s.gt_poses, s.parts));
  out << buf;
  return kOk;
}

// ---- verify ----------------------------------------------------------------------

int cmd_verify(const std::string& level, bool negate, std::ostream& out) {
  const auto results = verify::run_suite(level, negate, out);
  const bool all = std::all_of(results.begin(), results.end(), [](const auto& r) { return r.passed; });
  out << (all ? "all properties passed\n" : "property failure\n");
  return all ? kOk : kPropertyFailure;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"GPAT shape assembly"};
  app.require_subcommand(1);

  GenFlags gen;
  auto* g = app.add_subcommand("gen-data", "generate a synthetic box-fracture dataset");
  g->add_option("--seed", gen.seed, "dataset seed");
  g->add_option("--n-samples", gen.n_samples, "number of samples")->required()->check(CLI::PositiveNumber);
  g->add_option("--parts-min", gen.parts_min, "fewest parts per object")->check(CLI::Range(2, 8));
  g->add_option("--parts-max", gen.parts_max, "most parts per object")->check(CLI::Range(2, 8));
  g->add_option("--points", gen.points, "points per part")->check(CLI::Range(4, 1 << 20));
  g->add_option("--out", gen.out, "output directory")->required();
  g->add_option("--split", gen.split, "train fraction; writes train/ and test/")->check(CLI::Range(0.0, 1.0));

  TrainFlags tr;
  auto* t = app.add_subcommand("train", "train a model");
  t->add_option("--config", tr.config, "key=value config file")->required();
  t->add_option("--data", tr.data, "dataset directory (overrides paths.data)");
  t->add_option("--out-ckpt", tr.out_ckpt, "checkpoint path (overrides paths.checkpoint)");

  EvalFlags ev;
  auto* e = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  e->add_option("--ckpt", ev.ckpt, "checkpoint");
  e->add_option("--data", ev.data, "dataset directory")->required();
  e->add_option("--rounds", ev.rounds, "recycling rounds")->check(CLI::Range(1, 64));
  e->add_option("--report", ev.report, "aggregate report path; per-sample CSV goes next to it");
  e->add_option("--config", ev.config, "config whose model must match the checkpoint");
  e->add_flag("--identity-baseline", ev.identity, "predict identity poses instead");

  AssembleFlags as;
  auto* a = app.add_subcommand("assemble", "predict poses for one sample");
  a->add_option("--ckpt", as.ckpt, "checkpoint")->required();
  a->add_option("--sample", as.sample, "sample file")->required();
  a->add_option("--out", as.out, "output file")->required();
  a->add_option("--rounds", as.rounds, "recycling rounds")->check(CLI::Range(1, 64));
  a->add_option("--config", as.config, "config whose model must match the checkpoint");

  std::string level = "quick";
  bool negate = false;
  auto* v = app.add_subcommand("verify", "run the property suite");
  v->add_option("--level", level, "quick or full")->check(CLI::IsMember({"quick", "full"}));
  v->add_flag("--negate-point-term", negate, "flip the sign of the point term (test hook)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
    if (g->parsed()) return cmd_gen_data(gen, out);
    if (t->parsed()) return cmd_train(tr, out);
    if (e->parsed()) return cmd_eval(ev, out);
    if (a->parsed()) return cmd_assemble(as, out);
    return cmd_verify(level, negate, out);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::Error& x) {
    err << "error: " << x.what() << "\n";
    return kFlagError;
  } catch (const config::ConfigError& x) {
    err << "config error: " << x.what() << "\n";
    return kFlagError;
  } catch (const train::NumericDivergence& x) {
    err << "numeric divergence at step " << x.step() << ": " << x.what() << "\n";
    return kNumericDivergence;
  } catch (const ag::CheckpointMismatch& x) {
    err << "checkpoint mismatch in parameter '" << x.parameter() << "': " << x.what() << "\n";
    return kCheckpointMismatch;
  } catch (const std::invalid_argument& x) {
    err << "error: " << x.what() << "\n";
    return kFlagError;
  } catch (const std::exception& x) {
    // dataset, checkpoint format, filesystem and generation failures
    err << "error: " << x.what() << "\n";
    return kIoError;
  }
}

}  // namespace gpat::cli
