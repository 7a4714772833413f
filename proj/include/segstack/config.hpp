#pragma once

#include <json.hpp>

#include "segstack/data.hpp"
#include "segstack/model.hpp"
#include "segstack/optim.hpp"

namespace segstack {

using json = nlohmann::json;

struct TrainingConfig {
  int batch_size = 128;
  std::uint64_t seed = 1234;
  int patches_per_image = 4;
  float val_fraction = 0.1f;
  bool augment = true;
  float empty_patch_keep_prob = 1.0f;
  std::vector<LrSchedule> level_schedules;  // one per stack level
};

struct PipelineRunConfig {
  bool tta = true;
  float threshold = 0.5f;
  int scale_den = 1;
  int predict_batch = 8;
};

struct PathsConfig {
  std::string dataset_root = "data/synth";
  std::string checkpoint_dir = "checkpoints";
  std::string output_dir = "out";
};

// Full run configuration. Profiles provide the defaults: "paper" matches the
// published hyperparameters (patch 224, batch 128, 50+50 epoch phases, TTA
// on); "desk" is sized for CPU-scale experiments on the synthetic set.
struct RunConfig {
  int version = 1;
  std::string profile = "paper";
  UNetConfig model;
  int levels = 2;
  StackingInput stacking_input = StackingInput::image_plus_prob;
  SynthConfig synth;
  TrainingConfig training;
  PipelineRunConfig pipeline;
  PathsConfig paths;

  static RunConfig paper_profile() {
    RunConfig c;
    c.profile = "paper";
    c.model = UNetConfig{4, 32, 3, 16, 224};
    c.levels = 2;
    c.training.batch_size = 128;
    c.training.patches_per_image = 4;
    c.training.val_fraction = 0.1f;
    c.training.level_schedules = {LrSchedule{{{50, 1e-3f}, {50, 1e-4f}}},
                                  LrSchedule{{{50, 1e-4f}}}};
    return c;
  }

  static RunConfig desk_profile() {
    RunConfig c;
    c.profile = "desk";
    c.model = UNetConfig{3, 16, 3, 16, 128};
    c.levels = 2;
    c.training.batch_size = 8;
    c.training.patches_per_image = 2;
    c.training.val_fraction = 0.2f;
    c.training.level_schedules = {LrSchedule{{{20, 1e-3f}, {20, 1e-4f}}},
                                  LrSchedule{{{20, 1e-4f}}}};
    c.synth = SynthConfig{};  // 60 tiles of 512^2
    return c;
  }

  static RunConfig from_profile(const std::string& name) {
    if (name == "paper") return paper_profile();
    if (name == "desk") return desk_profile();
    throw InvalidArgument("unknown profile: " + name + " (expected desk or paper)");
  }

  StackConfig stack_config() const {
    return StackConfig::uniform(levels, model, stacking_input);
  }

  void validate() const {
    check(version == 1, "config: unsupported version ", version);
    model.validate();
    stack_config().validate();
    synth.validate();
    check(training.batch_size >= 1, "config: training.batch_size must be >= 1");
    check(training.patches_per_image >= 1, "config: training.patches_per_image must be >= 1");
    check(training.val_fraction > 0.0f && training.val_fraction < 1.0f,
          "config: training.val_fraction must be in (0,1)");
    check(training.empty_patch_keep_prob > 0.0f && training.empty_patch_keep_prob <= 1.0f,
          "config: training.empty_patch_keep_prob must be in (0,1]");
    check(int(training.level_schedules.size()) == levels,
          "config: training.level_schedules must have one schedule per level");
    for (const auto& s : training.level_schedules) s.validate();
    check(pipeline.threshold > 0.0f && pipeline.threshold < 1.0f,
          "config: pipeline.threshold must be in (0,1)");
    check(pipeline.scale_den == 1 || pipeline.scale_den == 2 || pipeline.scale_den == 4,
          "config: pipeline.scale must be 1, 1/2 or 1/4");
    check(pipeline.predict_batch >= 1, "config: pipeline.predict_batch must be >= 1");
  }

  json to_json() const {
    json j;
    j["version"] = version;
    j["profile"] = profile;
    j["model"] = {{"depth", model.depth},
                  {"base_filters", model.base_filters},
                  {"in_channels", model.in_channels},
                  {"crop_margin", model.crop_margin},
                  {"patch_size", model.input_size},
                  {"levels", levels},
                  {"stacking_input", stacking_input == StackingInput::image_plus_prob
                                         ? "image_plus_prob"
                                         : "prob_only"}};
    j["synth"] = {{"seed", synth.seed},         {"count", synth.count},
                  {"tile", synth.tile},         {"buildings_min", synth.buildings_min},
                  {"buildings_max", synth.buildings_max}, {"size_min", synth.size_min},
                  {"size_max", synth.size_max}, {"rotation", synth.rotation},
                  {"noise", synth.noise}};
    json schedules = json::array();
    for (const auto& s : training.level_schedules) {
      json phases = json::array();
      for (const auto& [n, lr] : s.phases) phases.push_back({n, lr});
      schedules.push_back(phases);
    }
    j["training"] = {{"batch_size", training.batch_size},
                     {"seed", training.seed},
                     {"patches_per_image", training.patches_per_image},
                     {"val_fraction", training.val_fraction},
                     {"augment", training.augment},
                     {"empty_patch_keep_prob", training.empty_patch_keep_prob},
                     {"level_schedules", schedules}};
    j["pipeline"] = {{"tta", pipeline.tta},
                     {"threshold", pipeline.threshold},
                     {"scale_den", pipeline.scale_den},
                     {"predict_batch", pipeline.predict_batch}};
    j["paths"] = {{"dataset_root", paths.dataset_root},
                  {"checkpoint_dir", paths.checkpoint_dir},
                  {"output_dir", paths.output_dir}};
    return j;
  }

  // Applies a config file on top of the profile defaults. Unknown keys are
  // errors so hyperparameter typos cannot silently fall back to defaults.
  void apply_json(const json& j);

  std::string canonical_dump() const { return to_json().dump(); }

  std::uint64_t hash() const {
    // FNV-1a 64 over the canonical dump
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : canonical_dump()) {
      h ^= c;
      h *= 1099511628211ULL;
    }
    return h;
  }
};

namespace detail {

inline void check_keys(const json& obj, const char* section,
                       std::initializer_list<const char*> allowed) {
  for (const auto& [key, value] : obj.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw InvalidArgument(std::string("config: unknown key \"") + key + "\" in " +
                                   section);
  }
}

template <typename T>
void maybe(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

}  // namespace detail

inline void RunConfig::apply_json(const json& j) {
  if (!j.is_object()) throw InvalidArgument("config: top level must be an object");
  detail::check_keys(j, "top level",
                     {"version", "profile", "model", "synth", "training", "pipeline", "paths"});
  detail::maybe(j, "version", version);
  if (j.contains("profile")) {
    const std::string p = j.at("profile").get<std::string>();
    check(p == profile, "config: profile \"", p, "\" does not match the selected profile \"",
          profile, "\" (pass --profile ", p, ")");
  }
  if (j.contains("model")) {
    const json& m = j.at("model");
    detail::check_keys(m, "model",
                       {"depth", "base_filters", "in_channels", "crop_margin", "patch_size",
                        "levels", "stacking_input"});
    detail::maybe(m, "depth", model.depth);
    detail::maybe(m, "base_filters", model.base_filters);
    detail::maybe(m, "in_channels", model.in_channels);
    detail::maybe(m, "crop_margin", model.crop_margin);
    detail::maybe(m, "patch_size", model.input_size);
    detail::maybe(m, "levels", levels);
    if (m.contains("stacking_input")) {
      const std::string s = m.at("stacking_input").get<std::string>();
      if (s == "image_plus_prob")
        stacking_input = StackingInput::image_plus_prob;
      else if (s == "prob_only")
        stacking_input = StackingInput::prob_only;
      else
        throw InvalidArgument("config: bad stacking_input \"" + s + "\"");
    }
  }
  if (j.contains("synth")) {
    const json& s = j.at("synth");
    detail::check_keys(s, "synth",
                       {"seed", "count", "tile", "buildings_min", "buildings_max", "size_min",
                        "size_max", "rotation", "noise"});
    detail::maybe(s, "seed", synth.seed);
    detail::maybe(s, "count", synth.count);
    detail::maybe(s, "tile", synth.tile);
    detail::maybe(s, "buildings_min", synth.buildings_min);
    detail::maybe(s, "buildings_max", synth.buildings_max);
    detail::maybe(s, "size_min", synth.size_min);
    detail::maybe(s, "size_max", synth.size_max);
    detail::maybe(s, "rotation", synth.rotation);
    detail::maybe(s, "noise", synth.noise);
  }
  if (j.contains("training")) {
    const json& t = j.at("training");
    detail::check_keys(t, "training",
                       {"batch_size", "seed", "patches_per_image", "val_fraction", "augment",
                        "empty_patch_keep_prob", "level_schedules"});
    detail::maybe(t, "batch_size", training.batch_size);
    detail::maybe(t, "seed", training.seed);
    detail::maybe(t, "patches_per_image", training.patches_per_image);
    detail::maybe(t, "val_fraction", training.val_fraction);
    detail::maybe(t, "augment", training.augment);
    detail::maybe(t, "empty_patch_keep_prob", training.empty_patch_keep_prob);
    if (t.contains("level_schedules")) {
      training.level_schedules.clear();
      for (const auto& phases : t.at("level_schedules")) {
        LrSchedule s;
        for (const auto& p : phases) {
          check(p.is_array() && p.size() == 2, "config: schedule phase must be [epochs, lr]");
          s.phases.emplace_back(p[0].get<int>(), p[1].get<float>());
        }
        training.level_schedules.push_back(std::move(s));
      }
    }
  }
  if (j.contains("pipeline")) {
    const json& p = j.at("pipeline");
    detail::check_keys(p, "pipeline", {"tta", "threshold", "scale_den", "predict_batch"});
    detail::maybe(p, "tta", pipeline.tta);
    detail::maybe(p, "threshold", pipeline.threshold);
    detail::maybe(p, "scale_den", pipeline.scale_den);
    detail::maybe(p, "predict_batch", pipeline.predict_batch);
  }
  if (j.contains("paths")) {
    const json& p = j.at("paths");
    detail::check_keys(p, "paths", {"dataset_root", "checkpoint_dir", "output_dir"});
    detail::maybe(p, "dataset_root", paths.dataset_root);
    detail::maybe(p, "checkpoint_dir", paths.checkpoint_dir);
    detail::maybe(p, "output_dir", paths.output_dir);
  }
  validate();
}

inline RunConfig load_config(const std::string& profile, const std::string& config_path) {
  RunConfig cfg = RunConfig::from_profile(profile);
  if (!config_path.empty()) {
    std::ifstream f(config_path);
    check(f.good(), "config: cannot open ", config_path);
    json j;
    try {
      f >> j;
    } catch (const std::exception& e) {
      throw InvalidArgument(std::string("config: parse error in ") + config_path + ": " +
                            e.what());
    }
    cfg.apply_json(j);
  }
  cfg.validate();
  return cfg;
}

}  // namespace segstack
