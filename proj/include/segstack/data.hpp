#pragma once

#include <filesystem>
#include <fstream>
#include <map>

#include "segstack/pipeline.hpp"
#include "segstack/png_io.hpp"

namespace segstack {

struct Sample {
  std::string id;
  Raster image;  // RGB
  Mask mask;
};

enum class Split { train, val };

inline const char* split_name(Split s) { return s == Split::train ? "train" : "val"; }

// Dataset by directory convention: root/images/*.png paired with
// root/gt/*.png by basename. Pairs failing validation are recorded with a
// reason and skipped; unpaired files are a hard error.
struct DatasetManifest {
  std::string root;
  std::vector<std::string> ids;  // valid pairs, sorted
  std::map<std::string, Split> split;
  std::vector<std::pair<std::string, std::string>> rejected;  // (id, reason)

  std::vector<std::string> ids_in(Split s) const {
    std::vector<std::string> out;
    for (const auto& id : ids) {
      auto it = split.find(id);
      if (it != split.end() && it->second == s) out.push_back(id);
    }
    return out;
  }

  std::string image_path(const std::string& id) const { return root + "/images/" + id + ".png"; }
  std::string gt_path(const std::string& id) const { return root + "/gt/" + id + ".png"; }

  void save(const std::string& path) const {
    std::ofstream f(path);
    check(f.good(), "manifest save: cannot open ", path);
    for (const auto& id : ids) {
      auto it = split.find(id);
      f << id << '\t' << (it == split.end() ? "unsplit" : split_name(it->second)) << '\n';
    }
  }

  void load_split(const std::string& path) {
    std::ifstream f(path);
    check(f.good(), "manifest load: cannot open ", path);
    split.clear();
    std::string line;
    while (std::getline(f, line)) {
      const auto tab = line.find('\t');
      if (tab == std::string::npos) continue;
      const std::string id = line.substr(0, tab), s = line.substr(tab + 1);
      if (s == "train")
        split[id] = Split::train;
      else if (s == "val")
        split[id] = Split::val;
    }
  }
};

inline Sample load_sample(const DatasetManifest& m, const std::string& id) {
  Sample s;
  s.id = id;
  s.image = read_png(m.image_path(id));
  s.mask = raster_to_mask(read_png(m.gt_path(id)));
  check(s.image.h == s.mask.h && s.image.w == s.mask.w, "load_sample: dimension mismatch for ",
        id);
  return s;
}

inline DatasetManifest load_dataset(const std::string& root) {
  namespace fs = std::filesystem;
  check(fs::is_directory(root + "/images"), "load_dataset: missing ", root, "/images");
  check(fs::is_directory(root + "/gt"), "load_dataset: missing ", root, "/gt");

  auto list_pngs = [](const std::string& dir) {
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(dir))
      if (e.is_regular_file() && e.path().extension() == ".png")
        names.push_back(e.path().stem().string());
    std::sort(names.begin(), names.end());
    return names;
  };
  const auto images = list_pngs(root + "/images");
  const auto gts = list_pngs(root + "/gt");

  for (const auto& id : images)
    if (!std::binary_search(gts.begin(), gts.end(), id))
      fail("load_dataset: image without ground truth: ", id);
  for (const auto& id : gts)
    if (!std::binary_search(images.begin(), images.end(), id))
      fail("load_dataset: ground truth without image: ", id);
  check(!images.empty(), "load_dataset: empty dataset at ", root);

  DatasetManifest m;
  m.root = root;
  for (const auto& id : images) {
    try {
      const Raster img = read_png(m.image_path(id));
      const Raster gt = read_png(m.gt_path(id));
      if (img.h != gt.h || img.w != gt.w) {
        m.rejected.emplace_back(id, "image/mask dimension mismatch");
        continue;
      }
      raster_to_mask(gt);  // throws on non-binary values
      m.ids.push_back(id);
    } catch (const std::exception& e) {
      m.rejected.emplace_back(id, e.what());
    }
  }
  check(!m.ids.empty(), "load_dataset: no valid pairs at ", root);
  return m;
}

// Deterministic train/val split: Fisher-Yates shuffle with the given seed,
// first round(n * val_fraction) ids go to validation (at least one each way).
inline void split_dataset(DatasetManifest& m, float val_fraction, Rng rng) {
  check(val_fraction > 0.0f && val_fraction < 1.0f, "split_dataset: val_fraction in (0,1)");
  check(m.ids.size() >= 2, "split_dataset: need at least 2 samples");
  std::vector<std::string> order = m.ids;
  for (int i = int(order.size()) - 1; i > 0; --i)
    std::swap(order[i], order[rng.uniform_int(0, i)]);
  int n_val = int(std::lround(double(order.size()) * val_fraction));
  n_val = std::clamp(n_val, 1, int(order.size()) - 1);
  m.split.clear();
  for (std::size_t i = 0; i < order.size(); ++i)
    m.split[order[i]] = int(i) < n_val ? Split::val : Split::train;
}

// ---- training patch sampler ----

struct SamplerConfig {
  int patch = 224;
  int margin = 16;
  int batch = 8;
  int patches_per_image = 4;
  bool augment = true;
  float empty_keep_prob = 1.0f;  // < 1 down-weights all-background patches
};

struct PatchBatch {
  Tensor images;   // (B, 3, patch, patch) in [0,1]
  Tensor targets;  // (B, 1, patch-2m, patch-2m) in {0,1}
  int count = 0;
};

// Draws random augmented patches from mirror-padded training samples. One
// epoch visits the images in a shuffled order, patches_per_image draws each.
// All randomness derives from (seed, epoch), so a resumed run samples the
// same stream as an unbroken one.
class PatchSampler {
 public:
  PatchSampler(std::vector<Sample> samples, SamplerConfig cfg, std::uint64_t seed)
      : cfg_(cfg), seed_(seed), rng_(seed) {
    check(!samples.empty(), "PatchSampler: no samples");
    check(cfg.patch > 2 * cfg.margin, "PatchSampler: patch must exceed twice the margin");
    for (auto& s : samples) {
      check(std::min(s.image.h, s.image.w) + 2 * cfg.margin >= cfg.patch,
            "PatchSampler: sample ", s.id, " smaller than the patch size after padding");
      padded_images_.push_back(pad_reflect(s.image, cfg.margin, cfg.margin, cfg.margin,
                                           cfg.margin));
      padded_masks_.push_back(pad_reflect(mask_to_raster(s.mask), cfg.margin, cfg.margin,
                                          cfg.margin, cfg.margin));
    }
  }

  int patches_per_epoch() const { return int(padded_images_.size()) * cfg_.patches_per_image; }
  int batches_per_epoch() const {
    return (patches_per_epoch() + cfg_.batch - 1) / cfg_.batch;
  }

  void begin_epoch(int epoch) {
    rng_ = Rng(seed_).child(std::uint64_t(epoch) + 1);
    order_.clear();
    for (int i = 0; i < int(padded_images_.size()); ++i)
      for (int k = 0; k < cfg_.patches_per_image; ++k) order_.push_back(i);
    for (int i = int(order_.size()) - 1; i > 0; --i)
      std::swap(order_[i], order_[rng_.uniform_int(0, i)]);
    cursor_ = 0;
  }

  bool next(PatchBatch& out) {
    if (cursor_ >= int(order_.size())) return false;
    const int n = std::min(cfg_.batch, int(order_.size()) - cursor_);
    const int target_size = cfg_.patch - 2 * cfg_.margin;
    out.images = Tensor({n, 3, cfg_.patch, cfg_.patch});
    out.targets = Tensor({n, 1, target_size, target_size});
    out.count = n;
    for (int slot = 0; slot < n; ++slot) draw_into(out, slot, order_[cursor_++]);
    return true;
  }

 private:
  void draw_into(PatchBatch& out, int slot, int img_idx) {
    const Raster& pimg = padded_images_[img_idx];
    const Raster& pmask = padded_masks_[img_idx];
    for (int attempt = 0;; ++attempt) {
      const int y0 = rng_.uniform_int(0, pimg.h - cfg_.patch);
      const int x0 = rng_.uniform_int(0, pimg.w - cfg_.patch);
      const AugTransform t =
          cfg_.augment ? kDihedralGroup[rng_.uniform_int(0, 7)] : AugTransform{};

      Raster ip(cfg_.patch, cfg_.patch, 3), mp(cfg_.patch, cfg_.patch, 1);
      for (int y = 0; y < cfg_.patch; ++y)
        for (int x = 0; x < cfg_.patch; ++x) {
          for (int ch = 0; ch < 3; ++ch) ip.at(y, x, ch) = pimg.at(y0 + y, x0 + x, ch);
          mp.at(y, x, 0) = pmask.at(y0 + y, x0 + x, 0);
        }
      if (cfg_.augment) {
        ip = apply_transform(ip, t);
        mp = apply_transform(mp, t);
      }

      const int m = cfg_.margin, ts = cfg_.patch - 2 * m;
      std::int64_t positives = 0;
      for (int y = 0; y < ts; ++y)
        for (int x = 0; x < ts; ++x) positives += mp.at(y + m, x + m, 0) == 255;
      if (positives == 0 && cfg_.empty_keep_prob < 1.0f && attempt < 10 &&
          !rng_.coin(cfg_.empty_keep_prob))
        continue;  // redraw an all-background patch

      fill_tensor_from_raster(out.images, slot, ip, 0, 0, cfg_.patch);
      for (int y = 0; y < ts; ++y)
        for (int x = 0; x < ts; ++x)
          out.targets.at(slot, 0, y, x) = mp.at(y + m, x + m, 0) == 255 ? 1.0f : 0.0f;
      return;
    }
  }

  SamplerConfig cfg_;
  std::uint64_t seed_;
  Rng rng_;
  std::vector<Raster> padded_images_;
  std::vector<Raster> padded_masks_;
  std::vector<int> order_;
  int cursor_ = 0;
};

// ---- synthetic dataset ----

// Renders textured background tiles with axis-aligned and 45-degree-rotated
// rectangles ("buildings") plus exact rasterized footprint masks.
struct SynthConfig {
  std::uint64_t seed = 1234;
  int count = 60;
  int tile = 512;
  int buildings_min = 6, buildings_max = 12;
  int size_min = 40, size_max = 120;
  bool rotation = true;
  int noise = 18;

  void validate() const {
    check(tile > 0 && tile % 16 == 0, "SynthConfig: tile size must be a positive multiple of 16");
    check(count >= 1, "SynthConfig: count must be >= 1");
    check(buildings_min >= 0 && buildings_max >= buildings_min, "SynthConfig: bad count range");
    check(size_min >= 4 && size_max >= size_min, "SynthConfig: bad size range");
    check(size_max < tile / 2, "SynthConfig: buildings too large for the tile");
    check(noise >= 0 && noise <= 60, "SynthConfig: noise out of range");
  }
};

namespace detail {

struct RectSpec {
  float cx, cy, hw, hh;  // center and half extents
  bool rotated;          // 45 degrees

  bool contains(float x, float y) const {
    const float dx = x - cx, dy = y - cy;
    if (!rotated) return std::fabs(dx) <= hw && std::fabs(dy) <= hh;
    constexpr float inv_sqrt2 = 0.70710678f;
    const float u = (dx + dy) * inv_sqrt2, v = (dy - dx) * inv_sqrt2;
    return std::fabs(u) <= hw && std::fabs(v) <= hh;
  }

  float bbox_extent_x() const { return rotated ? (hw + hh) * 0.70710678f : hw; }
  float bbox_extent_y() const { return rotated ? (hw + hh) * 0.70710678f : hh; }
};

}  // namespace detail

inline Sample synth_tile(const SynthConfig& cfg, int index) {
  Rng rng = Rng(cfg.seed).child(std::uint64_t(index));
  Sample s;
  s.id = [&] {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "synth_%04d", index);
    return std::string(buf);
  }();
  s.image = Raster(cfg.tile, cfg.tile, 3);
  s.mask = Mask(cfg.tile, cfg.tile);

  // background: muted green-gray with per-pixel noise
  const int base[3] = {92, 104, 84};
  for (int y = 0; y < cfg.tile; ++y)
    for (int x = 0; x < cfg.tile; ++x)
      for (int ch = 0; ch < 3; ++ch) {
        const int v = base[ch] + rng.uniform_int(-cfg.noise, cfg.noise);
        s.image.at(y, x, ch) = std::uint8_t(std::clamp(v, 0, 255));
      }

  static constexpr int kPalette[6][3] = {{172, 62, 52},  {201, 199, 194}, {72, 76, 86},
                                         {188, 152, 92}, {122, 44, 38},   {208, 180, 158}};

  const int want = rng.uniform_int(cfg.buildings_min, cfg.buildings_max);
  std::vector<detail::RectSpec> placed;
  for (int b = 0; b < want; ++b) {
    detail::RectSpec r{};
    bool ok = false;
    for (int attempt = 0; attempt < 40 && !ok; ++attempt) {
      r.hw = 0.5f * float(rng.uniform_int(cfg.size_min, cfg.size_max));
      r.hh = 0.5f * float(rng.uniform_int(cfg.size_min, cfg.size_max));
      r.rotated = cfg.rotation && rng.coin();
      const float ex = r.bbox_extent_x(), ey = r.bbox_extent_y();
      r.cx = rng.uniform(ex + 2.0f, float(cfg.tile) - ex - 2.0f);
      r.cy = rng.uniform(ey + 2.0f, float(cfg.tile) - ey - 2.0f);
      ok = true;
      for (const auto& o : placed) {
        // coarse bbox separation; adjacent placements stay legal
        if (std::fabs(r.cx - o.cx) < r.bbox_extent_x() + o.bbox_extent_x() &&
            std::fabs(r.cy - o.cy) < r.bbox_extent_y() + o.bbox_extent_y()) {
          ok = false;
          break;
        }
      }
    }
    if (!ok) continue;  // tile too crowded, skip this building
    placed.push_back(r);

    const int* pal = kPalette[rng.uniform_int(0, 5)];
    int col[3];
    for (int ch = 0; ch < 3; ++ch)
      col[ch] = std::clamp(pal[ch] + rng.uniform_int(-10, 10), 0, 255);

    const int y_lo = std::max(0, int(r.cy - r.bbox_extent_y()) - 1);
    const int y_hi = std::min(cfg.tile - 1, int(r.cy + r.bbox_extent_y()) + 1);
    const int x_lo = std::max(0, int(r.cx - r.bbox_extent_x()) - 1);
    const int x_hi = std::min(cfg.tile - 1, int(r.cx + r.bbox_extent_x()) + 1);
    for (int y = y_lo; y <= y_hi; ++y)
      for (int x = x_lo; x <= x_hi; ++x) {
        if (!r.contains(float(x) + 0.5f, float(y) + 0.5f)) continue;
        s.mask.at(y, x) = 1;
        for (int ch = 0; ch < 3; ++ch) {
          const int v = col[ch] + rng.uniform_int(-6, 6);
          s.image.at(y, x, ch) = std::uint8_t(std::clamp(v, 0, 255));
        }
      }
  }
  return s;
}

inline int synth_generate(const SynthConfig& cfg, const std::string& out_root) {
  cfg.validate();
  namespace fs = std::filesystem;
  fs::create_directories(out_root + "/images");
  fs::create_directories(out_root + "/gt");
  for (int i = 0; i < cfg.count; ++i) {
    const Sample s = synth_tile(cfg, i);
    write_png(out_root + "/images/" + s.id + ".png", s.image);
    write_png(out_root + "/gt/" + s.id + ".png", mask_to_raster(s.mask));
  }
  return cfg.count;
}

}  // namespace segstack
