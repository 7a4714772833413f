#pragma once

#include <array>
#include <chrono>
#include <functional>

#include "segstack/image.hpp"
#include "segstack/ops.hpp"

namespace segstack {

// ---- mirror padding ----

namespace detail {
// reflect-101 (edge pixel not repeated), periodic so any offset is valid
inline int reflect101(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i = ((i % period) + period) % period;
  return i < n ? i : period - i;
}
}  // namespace detail

inline Raster pad_reflect(const Raster& r, int top, int bottom, int left, int right) {
  Raster out(r.h + top + bottom, r.w + left + right, r.c);
  for (int y = 0; y < out.h; ++y) {
    const int sy = detail::reflect101(y - top, r.h);
    for (int x = 0; x < out.w; ++x) {
      const int sx = detail::reflect101(x - left, r.w);
      for (int ch = 0; ch < r.c; ++ch) out.at(y, x, ch) = r.at(sy, sx, ch);
    }
  }
  return out;
}

// Symmetric mirror padding; the border is reflected without repeating the
// edge pixel ([a,b,c] with margin 1 -> [b,a,b,c,b]).
inline Raster mirror_pad(const Raster& r, int margin) {
  check(margin >= 0, "mirror_pad: negative margin");
  check(margin < std::min(r.h, r.w), "mirror_pad: margin ", margin, " too large for ",
        r.h, "x", r.w);
  return pad_reflect(r, margin, margin, margin, margin);
}

// ---- tile grid ----

// Patch extraction geometry over a padded raster. Each patch's cropped
// output covers a stride x stride window of the original image; the last
// row/column origins are clamped so the windows end flush with the image
// edge (overlapped pixels are overwritten in row-major order).
struct TileGrid {
  int img_h = 0, img_w = 0;
  int patch = 0, margin = 0, stride = 0;
  int pad_top = 0, pad_bottom = 0, pad_left = 0, pad_right = 0;
  std::vector<int> ys, xs;  // output-window origins, image coordinates

  int cells() const { return int(ys.size() * xs.size()); }
};

inline TileGrid plan_grid(int img_h, int img_w, int patch, int margin) {
  check(patch > 2 * margin, "plan_grid: patch ", patch, " must exceed twice the margin ",
        margin);
  check(img_h > 0 && img_w > 0, "plan_grid: empty image");
  TileGrid g;
  g.img_h = img_h;
  g.img_w = img_w;
  g.patch = patch;
  g.margin = margin;
  g.stride = patch - 2 * margin;

  auto axis = [&](int dim, std::vector<int>& origins, int& pad_lead, int& pad_trail) {
    const int steps = std::max(1, int((std::int64_t(dim) + g.stride - 1) / g.stride));
    for (int i = 0; i < steps; ++i) {
      const int o = std::min(i * g.stride, std::max(0, dim - g.stride));
      if (origins.empty() || origins.back() != o) origins.push_back(o);
    }
    pad_lead = margin;
    pad_trail = margin + std::max(0, patch - (dim + 2 * margin));
  };
  axis(img_h, g.ys, g.pad_top, g.pad_bottom);
  axis(img_w, g.xs, g.pad_left, g.pad_right);
  return g;
}

inline Raster pad_for_grid(const Raster& r, const TileGrid& g) {
  return pad_reflect(r, g.pad_top, g.pad_bottom, g.pad_left, g.pad_right);
}

// Patch (iy, ix) as a raster window of the padded image. The patch origin in
// padded coordinates equals the output-window origin in image coordinates.
inline Raster extract_patch(const Raster& padded, const TileGrid& g, int iy, int ix) {
  Raster p(g.patch, g.patch, padded.c);
  const int oy = g.ys[iy], ox = g.xs[ix];
  for (int y = 0; y < g.patch; ++y)
    for (int x = 0; x < g.patch; ++x)
      for (int ch = 0; ch < padded.c; ++ch) p.at(y, x, ch) = padded.at(oy + y, ox + x, ch);
  return p;
}

// Writes one cropped (stride x stride) output into the assembled map,
// clipped to the image bounds. Callers iterate cells in row-major order so
// overlapped pixels follow the last-writer-wins rule.
inline void place_cell(ScoreMap& full, const TileGrid& g, int iy, int ix, const float* cell) {
  const int oy = g.ys[iy], ox = g.xs[ix];
  for (int y = 0; y < g.stride; ++y) {
    const int ty = oy + y;
    if (ty >= g.img_h) break;
    for (int x = 0; x < g.stride; ++x) {
      const int tx = ox + x;
      if (tx >= g.img_w) break;
      full.at(ty, tx) = cell[std::size_t(y) * g.stride + x];
    }
  }
}

inline ScoreMap assemble(const TileGrid& g, const std::vector<std::vector<float>>& cells) {
  check(int(cells.size()) == g.cells(), "assemble: expected ", g.cells(), " cells, got ",
        cells.size());
  ScoreMap full(g.img_h, g.img_w);
  int idx = 0;
  for (int iy = 0; iy < int(g.ys.size()); ++iy)
    for (int ix = 0; ix < int(g.xs.size()); ++ix, ++idx) {
      check(cells[idx].size() == std::size_t(g.stride) * g.stride,
            "assemble: cell ", idx, " has wrong size");
      place_cell(full, g, iy, ix, cells[idx].data());
    }
  return full;
}

// ---- dihedral transforms ----

// Element of the dihedral group of the square: rotate by 90deg*rot, then
// optionally flip horizontally. All eight elements, lossless on square
// rasters.
struct AugTransform {
  int rot = 0;    // quarter turns, clockwise
  bool flip = false;

  bool operator==(const AugTransform&) const = default;
};

inline constexpr std::array<AugTransform, 8> kDihedralGroup = {{
    {0, false},  // identity
    {1, false},  // rot90
    {2, false},  // rot180
    {3, false},  // rot270
    {0, true},   // hflip
    {2, true},   // vflip (= hflip o rot180)
    {1, true},   // hflip o rot90
    {3, true},   // vflip o rot90
}};

inline AugTransform invert(AugTransform t) {
  if (t.flip) return t;  // reflections are involutions
  return {(4 - t.rot) % 4, false};
}

namespace detail {
// Source coordinate for output pixel (y, x) of a size-S square.
inline std::pair<int, int> transform_src(int y, int x, int s, AugTransform t) {
  if (t.flip) x = s - 1 - x;
  switch (t.rot & 3) {
    case 0: return {y, x};
    case 1: return {s - 1 - x, y};          // 90deg clockwise
    case 2: return {s - 1 - y, s - 1 - x};  // 180deg
    default: return {x, s - 1 - y};         // 270deg
  }
}
}  // namespace detail

inline ScoreMap apply_transform(const ScoreMap& m, AugTransform t) {
  check(m.h == m.w, "apply_transform: non-square map ", m.h, "x", m.w);
  ScoreMap out(m.h, m.w);
  for (int y = 0; y < m.h; ++y)
    for (int x = 0; x < m.w; ++x) {
      auto [sy, sx] = detail::transform_src(y, x, m.h, t);
      out.at(y, x) = m.at(sy, sx);
    }
  return out;
}

inline Mask apply_transform(const Mask& m, AugTransform t) {
  check(m.h == m.w, "apply_transform: non-square mask ", m.h, "x", m.w);
  Mask out(m.h, m.w);
  for (int y = 0; y < m.h; ++y)
    for (int x = 0; x < m.w; ++x) {
      auto [sy, sx] = detail::transform_src(y, x, m.h, t);
      out.at(y, x) = m.at(sy, sx);
    }
  return out;
}

inline Raster apply_transform(const Raster& r, AugTransform t) {
  check(r.h == r.w, "apply_transform: non-square raster ", r.h, "x", r.w);
  Raster out(r.h, r.w, r.c);
  for (int y = 0; y < r.h; ++y)
    for (int x = 0; x < r.w; ++x) {
      auto [sy, sx] = detail::transform_src(y, x, r.h, t);
      for (int ch = 0; ch < r.c; ++ch) out.at(y, x, ch) = r.at(sy, sx, ch);
    }
  return out;
}

// Applies the transform to every (n, c) plane of a square NCHW tensor.
inline Tensor apply_transform(const Tensor& t, AugTransform tr) {
  const Shape4 s = t.shape();
  check(s.h == s.w, "apply_transform: non-square tensor ", s.str());
  Tensor out(s);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) {
          auto [sy, sx] = detail::transform_src(y, x, s.h, tr);
          out.at(n, c, y, x) = t.at(n, c, sy, sx);
        }
  return out;
}

// ---- prediction ----

// Maps an input batch (N, C, S, S) to a cropped probability batch
// (N, 1, S-2m, S-2m) in eval mode.
using Predictor = std::function<Tensor(const Tensor&)>;

// Averages the predictions of all eight dihedral variants of the batch,
// each mapped back through the inverse transform.
inline Tensor tta_predict(const Predictor& predict, const Tensor& batch) {
  check(batch.shape().h == batch.shape().w, "tta_predict: non-square input");
  Tensor acc;
  for (const AugTransform& t : kDihedralGroup) {
    Tensor out = predict(apply_transform(batch, t));
    Tensor back = apply_transform(out, invert(t));
    if (!acc.defined()) {
      acc = back;
    } else {
      check(acc.shape() == back.shape(), "tta_predict: inconsistent output shapes");
      for (std::int64_t i = 0; i < acc.numel(); ++i) acc.data()[i] += back.data()[i];
    }
  }
  for (std::int64_t i = 0; i < acc.numel(); ++i) acc.data()[i] *= 1.0f / 8.0f;
  return acc;
}

inline Mask threshold(const ScoreMap& scores, float tau) {
  check(tau > 0.0f && tau < 1.0f, "threshold: tau must be in (0,1), got ", tau);
  Mask m(scores.h, scores.w);
  for (std::size_t i = 0; i < scores.v.size(); ++i) m.v[i] = scores.v[i] >= tau ? 1 : 0;
  return m;
}

// Sweeps tau over 0.05..0.95 in 0.05 steps and returns the value maximizing
// pooled IoU over the validation pairs; ties go to the lower tau.
struct ThresholdSweepPoint {
  float tau;
  double iou;
};

inline std::vector<ThresholdSweepPoint> threshold_sweep(const std::vector<Mask>& gts,
                                                        const std::vector<ScoreMap>& scores) {
  check(!gts.empty() && gts.size() == scores.size(), "threshold_sweep: empty or mismatched");
  std::vector<ThresholdSweepPoint> sweep;
  for (int i = 1; i <= 19; ++i) {
    const float tau = float(i) * 0.05f;
    std::int64_t tp = 0, fp = 0, fn = 0;
    for (std::size_t k = 0; k < gts.size(); ++k) {
      check(gts[k].h == scores[k].h && gts[k].w == scores[k].w,
            "threshold_sweep: shape mismatch at ", k);
      for (std::size_t j = 0; j < gts[k].v.size(); ++j) {
        const bool p = scores[k].v[j] >= tau, t = gts[k].v[j];
        tp += t && p;
        fp += !t && p;
        fn += t && !p;
      }
    }
    const std::int64_t uni = tp + fp + fn;
    sweep.push_back({tau, uni == 0 ? 1.0 : double(tp) / double(uni)});
  }
  return sweep;
}

inline float tune_threshold(const std::vector<Mask>& gts, const std::vector<ScoreMap>& scores) {
  const auto sweep = threshold_sweep(gts, scores);
  std::size_t best = 0;
  for (std::size_t i = 1; i < sweep.size(); ++i)
    if (sweep[i].iou > sweep[best].iou) best = i;
  return sweep[best].tau;
}

// ---- rescaling ----

inline ScoreMap downscale_box(const ScoreMap& s, int k) {
  check(k >= 1, "downscale_box: bad factor");
  if (k == 1) return s;
  check(s.h % k == 0 && s.w % k == 0, "downscale_box: ", s.h, "x", s.w,
        " not divisible by ", k);
  ScoreMap out(s.h / k, s.w / k);
  for (int y = 0; y < out.h; ++y)
    for (int x = 0; x < out.w; ++x) {
      double acc = 0.0;
      for (int dy = 0; dy < k; ++dy)
        for (int dx = 0; dx < k; ++dx) acc += s.at(y * k + dy, x * k + dx);
      out.at(y, x) = float(acc / double(k * k));
    }
  return out;
}

inline Raster downscale_box(const Raster& r, int k) {
  check(k >= 1, "downscale_box: bad factor");
  if (k == 1) return r;
  check(r.h % k == 0 && r.w % k == 0, "downscale_box: ", r.h, "x", r.w,
        " not divisible by ", k);
  Raster out(r.h / k, r.w / k, r.c);
  for (int y = 0; y < out.h; ++y)
    for (int x = 0; x < out.w; ++x)
      for (int ch = 0; ch < r.c; ++ch) {
        double acc = 0.0;
        for (int dy = 0; dy < k; ++dy)
          for (int dx = 0; dx < k; ++dx) acc += r.at(y * k + dy, x * k + dx, ch);
        out.at(y, x, ch) = std::uint8_t(std::lround(acc / double(k * k)));
      }
  return out;
}

// Bilinear upscaling, align-corners off: output pixel centers map to
// (i + 0.5)/k - 0.5 in source coordinates, clamped at the borders.
inline ScoreMap upscale_bilinear(const ScoreMap& s, int k) {
  check(k >= 1, "upscale_bilinear: bad factor");
  if (k == 1) return s;
  ScoreMap out(s.h * k, s.w * k);
  for (int y = 0; y < out.h; ++y) {
    const float fy = std::clamp((y + 0.5f) / float(k) - 0.5f, 0.0f, float(s.h - 1));
    const int y0 = int(fy);
    const int y1 = std::min(y0 + 1, s.h - 1);
    const float wy = fy - float(y0);
    for (int x = 0; x < out.w; ++x) {
      const float fx = std::clamp((x + 0.5f) / float(k) - 0.5f, 0.0f, float(s.w - 1));
      const int x0 = int(fx);
      const int x1 = std::min(x0 + 1, s.w - 1);
      const float wx = fx - float(x0);
      out.at(y, x) = (1.0f - wy) * ((1.0f - wx) * s.at(y0, x0) + wx * s.at(y0, x1)) +
                     wy * ((1.0f - wx) * s.at(y1, x0) + wx * s.at(y1, x1));
    }
  }
  return out;
}

// ---- full-raster prediction ----

struct PredictOptions {
  int patch = 224;
  int margin = 16;
  float tau = 0.5f;
  bool tta = true;
  int scale_den = 1;  // 1, 2 or 4: predict at 1/scale_den resolution
  int batch_size = 8;
};

struct PredictionResult {
  Mask mask;
  ScoreMap scores;       // full resolution, after any upscaling
  double predict_seconds = 0.0;
  double rescale_seconds = 0.0;
  int patches = 0;
};

// Optional downscale -> mirror pad -> tiled (TTA) prediction -> assemble ->
// optional upscale -> threshold. The predict phase is timed separately from
// the rescale overhead.
inline PredictionResult run_prediction(const Raster& image, const Predictor& predict,
                                       const PredictOptions& opt) {
  using clock = std::chrono::steady_clock;
  check(opt.scale_den == 1 || opt.scale_den == 2 || opt.scale_den == 4,
        "run_prediction: scale denominator must be 1, 2 or 4");
  check(opt.batch_size >= 1, "run_prediction: bad batch size");
  PredictionResult res;

  const auto t_ds0 = clock::now();
  const Raster work = downscale_box(image, opt.scale_den);
  res.rescale_seconds += std::chrono::duration<double>(clock::now() - t_ds0).count();

  const auto t0 = clock::now();
  const TileGrid grid = plan_grid(work.h, work.w, opt.patch, opt.margin);
  const Raster padded = pad_for_grid(work, grid);
  ScoreMap assembled(grid.img_h, grid.img_w);

  const int total = grid.cells();
  res.patches = total;
  const int nx = int(grid.xs.size());
  std::vector<int> pending;
  Tensor batch({opt.batch_size, image.c, opt.patch, opt.patch});

  auto flush = [&](const std::vector<int>& cells) {
    if (cells.empty()) return;
    Tensor in = int(cells.size()) == opt.batch_size
                    ? batch
                    : Tensor({int(cells.size()), image.c, opt.patch, opt.patch});
    for (std::size_t k = 0; k < cells.size(); ++k) {
      const int iy = cells[k] / nx, ix = cells[k] % nx;
      Raster p = extract_patch(padded, grid, iy, ix);
      fill_tensor_from_raster(in, int(k), p, 0, 0, opt.patch);
    }
    Tensor out = opt.tta ? tta_predict(predict, in) : predict(in);
    const Shape4 os = out.shape();
    check(os.c == 1 && os.h == grid.stride && os.w == grid.stride,
          "run_prediction: predictor output ", os.str(), " does not match stride ",
          grid.stride);
    for (std::size_t k = 0; k < cells.size(); ++k) {
      const int iy = cells[k] / nx, ix = cells[k] % nx;
      place_cell(assembled, grid, iy, ix, out.data() + out.index(int(k), 0, 0, 0));
    }
  };

  for (int cell = 0; cell < total; ++cell) {
    pending.push_back(cell);
    if (int(pending.size()) == opt.batch_size) {
      flush(pending);
      pending.clear();
    }
  }
  flush(pending);
  res.predict_seconds = std::chrono::duration<double>(clock::now() - t0).count();

  const auto t_us0 = clock::now();
  res.scores = upscale_bilinear(assembled, opt.scale_den);
  res.rescale_seconds += std::chrono::duration<double>(clock::now() - t_us0).count();

  res.mask = threshold(res.scores, opt.tau);
  return res;
}

}  // namespace segstack
