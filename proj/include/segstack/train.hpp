#pragma once

#include <chrono>
#include <iostream>

#include "segstack/checkpoint.hpp"
#include "segstack/config.hpp"
#include "segstack/loss.hpp"

namespace segstack {

struct EpochRecord {
  int epoch = 0;
  double h = 0.0, j = 0.0, l = 0.0;
  double val_iou = 0.0;
  double lr = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  std::string checkpoint;
  std::string optimizer_state;
  int start_epoch = 0;  // nonzero when resumed
  std::vector<EpochRecord> epochs;
  double final_val_iou = 0.0;
};

inline std::string level_checkpoint_path(const PathsConfig& paths, int level) {
  return paths.checkpoint_dir + "/level" + std::to_string(level) + ".ckpt";
}
inline std::string level_optimizer_path(const PathsConfig& paths, int level) {
  return paths.checkpoint_dir + "/level" + std::to_string(level) + ".optim";
}

// Writes the ordered list of level checkpoints next to them.
inline void write_stack_manifest(const PathsConfig& paths, int levels) {
  std::ofstream f(paths.checkpoint_dir + "/stack.manifest");
  for (int k = 0; k < levels; ++k) f << "level" << k << ".ckpt" << '\n';
}

// Trains one stack level with all predecessors frozen, per the configured
// schedule. Checkpoints (parameters + optimizer state) are written after
// every epoch, so a crashed or interrupted run resumes from the last epoch;
// sampling derives from (seed, epoch), making the resumed stream identical.
class Trainer {
 public:
  explicit Trainer(RunConfig cfg, std::ostream& log = std::cerr)
      : cfg_(std::move(cfg)), log_(log) {
    cfg_.validate();
  }

  // stop_after > 0 bounds the epochs run in this invocation; the schedule
  // position is checkpointed, so a later call resumes where this one stopped.
  TrainResult train_level(int level, int stop_after = 0) {
    check(level >= 0 && level < cfg_.levels, "train: level ", level, " out of range");
    namespace fs = std::filesystem;
    fs::create_directories(cfg_.paths.checkpoint_dir);
    fs::create_directories(cfg_.paths.output_dir);

    DatasetManifest manifest = load_dataset(cfg_.paths.dataset_root);
    const std::string split_path = cfg_.paths.checkpoint_dir + "/split.tsv";
    if (fs::exists(split_path)) {
      manifest.load_split(split_path);
      check(!manifest.ids_in(Split::train).empty() && !manifest.ids_in(Split::val).empty(),
            "train: split file ", split_path, " does not cover the dataset");
    } else {
      split_dataset(manifest, cfg_.training.val_fraction, Rng(cfg_.training.seed));
      manifest.save(split_path);
    }

    std::vector<Sample> train_samples, val_samples;
    for (const auto& id : manifest.ids_in(Split::train))
      train_samples.push_back(load_sample(manifest, id));
    for (const auto& id : manifest.ids_in(Split::val))
      val_samples.push_back(load_sample(manifest, id));
    log_ << "[train] level " << level << ": " << train_samples.size() << " train / "
         << val_samples.size() << " val tiles\n";

    StackedModel stack(cfg_.stack_config(), Rng(cfg_.training.seed));
    for (int k = 0; k < level; ++k) {
      const std::string path = level_checkpoint_path(cfg_.paths, k);
      if (!fs::exists(path))
        fail("train: level ", level, " requires the level ", k, " checkpoint at ", path,
             " (train level ", k, " first)");
      load_model(path, stack.level(k));
    }

    UNet& net = stack.level(level);
    NadamState opt(net.parameters());
    const std::string ckpt_path = level_checkpoint_path(cfg_.paths, level);
    const std::string optim_path = level_optimizer_path(cfg_.paths, level);

    TrainResult result;
    result.checkpoint = ckpt_path;
    result.optimizer_state = optim_path;
    if (fs::exists(ckpt_path) && fs::exists(optim_path)) {
      load_model(ckpt_path, net);
      result.start_epoch = load_optimizer(optim_path, net, opt);
      log_ << "[train] resuming level " << level << " at epoch " << result.start_epoch << "\n";
    }

    const std::string record_path =
        cfg_.paths.output_dir + "/train_level" + std::to_string(level) + ".jsonl";
    open_record(record_path, result.start_epoch > 0);

    SamplerConfig scfg;
    scfg.patch = cfg_.model.input_size;
    scfg.margin = cfg_.model.crop_margin;
    scfg.batch = cfg_.training.batch_size;
    scfg.patches_per_image = cfg_.training.patches_per_image;
    scfg.augment = cfg_.training.augment;
    scfg.empty_keep_prob = cfg_.training.empty_patch_keep_prob;
    PatchSampler sampler(train_samples, scfg,
                         cfg_.training.seed * 31 + std::uint64_t(level));

    const std::vector<PatchBatch> val_batches = fixed_val_batches(val_samples, scfg);

    const LrSchedule& schedule = cfg_.training.level_schedules[level];
    int total_epochs = schedule.total_epochs();
    if (stop_after > 0) total_epochs = std::min(total_epochs, result.start_epoch + stop_after);
    for (int epoch = result.start_epoch; epoch < total_epochs; ++epoch) {
      const float lr = *schedule.lr_for_epoch(epoch);
      const auto t0 = std::chrono::steady_clock::now();
      double sum_h = 0.0, sum_j = 0.0, sum_l = 0.0;
      int batches = 0;

      sampler.begin_epoch(epoch);
      PatchBatch batch;
      while (sampler.next(batch)) {
        zero_grads(net.parameters());
        Tape tape;
        Tensor out = stack.forward(batch.images, level, Mode::train, &tape);
        LossBreakdown lb;
        try {
          lb = joint_loss(batch.targets, out, &tape);
          backward(lb.loss, tape);
          opt.step(net.parameters(), lr);
        } catch (const RuntimeError& e) {
          fail("train: aborted at level ", level, " epoch ", epoch,
               " on a non-finite value (", e.what(), "); last good checkpoint: ",
               epoch > result.start_epoch ? ckpt_path : "(none this run)");
        }
        sum_h += lb.h;
        sum_j += lb.j;
        sum_l += lb.l;
        ++batches;
      }

      EpochRecord rec;
      rec.epoch = epoch;
      rec.h = sum_h / batches;
      rec.j = sum_j / batches;
      rec.l = sum_l / batches;
      rec.lr = lr;
      rec.val_iou = patch_validation_iou(stack, level, val_batches);
      rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

      save_model(ckpt_path, net);
      save_optimizer(optim_path, net, opt, epoch + 1);
      append_record(rec);
      log_ << "[train] level " << level << " epoch " << epoch << "/" << total_epochs
           << " lr " << lr << " H " << rec.h << " J " << rec.j << " L " << rec.l << " val_iou "
           << rec.val_iou << " (" << rec.seconds << "s)\n";
      result.epochs.push_back(rec);
      result.final_val_iou = rec.val_iou;
    }

    write_stack_manifest(cfg_.paths, level + 1);
    return result;
  }

 private:
  // Deterministic validation batches: augmentation off, fixed seed, reused
  // across epochs so the curve is comparable epoch to epoch.
  std::vector<PatchBatch> fixed_val_batches(const std::vector<Sample>& val_samples,
                                            SamplerConfig scfg) {
    scfg.augment = false;
    scfg.empty_keep_prob = 1.0f;
    scfg.patches_per_image = std::max(2, scfg.patches_per_image);
    PatchSampler val_sampler(val_samples, scfg, cfg_.training.seed ^ 0x5eedULL);
    val_sampler.begin_epoch(0);
    std::vector<PatchBatch> out;
    PatchBatch b;
    while (val_sampler.next(b)) out.push_back(b);
    return out;
  }

  double patch_validation_iou(StackedModel& stack, int level,
                              const std::vector<PatchBatch>& batches) {
    std::int64_t tp = 0, fp = 0, fn = 0;
    for (const auto& b : batches) {
      Tensor out = stack.forward(b.images, level, Mode::eval);
      for (std::int64_t i = 0; i < out.numel(); ++i) {
        const bool p = out.data()[i] >= 0.5f;
        const bool t = b.targets.data()[i] >= 0.5f;
        tp += t && p;
        fp += !t && p;
        fn += t && !p;
      }
    }
    const std::int64_t uni = tp + fp + fn;
    return uni == 0 ? 1.0 : double(tp) / double(uni);
  }

  void open_record(const std::string& path, bool resuming) {
    record_path_ = path;
    const std::string hash = std::to_string(cfg_.hash());
    if (resuming && std::filesystem::exists(path)) {
      std::ifstream f(path);
      std::string first;
      std::getline(f, first);
      const json j = json::parse(first, nullptr, false);
      check(!j.is_discarded() && j.contains("config_hash"),
            "train: corrupt experiment record ", path);
      check(j.at("config_hash").get<std::string>() == hash,
            "train: config does not match the run being resumed (", path, ")");
      return;
    }
    std::ofstream f(path, std::ios::trunc);
    json head;
    head["config"] = cfg_.to_json();
    head["config_hash"] = hash;
    f << head.dump() << '\n';
  }

  void append_record(const EpochRecord& r) {
    std::ofstream f(record_path_, std::ios::app);
    json j;
    j["epoch"] = r.epoch;
    j["H"] = r.h;
    j["J"] = r.j;
    j["L"] = r.l;
    j["lr"] = r.lr;
    j["val_iou"] = r.val_iou;
    j["seconds"] = r.seconds;
    f << j.dump() << '\n';
  }

  RunConfig cfg_;
  std::ostream& log_;
  std::string record_path_;
};

// Loads a trained stack (levels 0..levels-1) from checkpoints.
inline StackedModel load_stack(const RunConfig& cfg, int levels_available) {
  StackedModel stack(cfg.stack_config(), Rng(cfg.training.seed));
  for (int k = 0; k < levels_available; ++k)
    load_model(level_checkpoint_path(cfg.paths, k), stack.level(k));
  return stack;
}

// Counts how many consecutive level checkpoints exist.
inline int stack_levels_on_disk(const RunConfig& cfg) {
  int k = 0;
  while (k < cfg.levels && std::filesystem::exists(level_checkpoint_path(cfg.paths, k))) ++k;
  return k;
}

inline Predictor stack_predictor(StackedModel& stack, int upto_level) {
  return [&stack, upto_level](const Tensor& batch) {
    return stack.forward(batch, upto_level, Mode::eval);
  };
}

}  // namespace segstack
