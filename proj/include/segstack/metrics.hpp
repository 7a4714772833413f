#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "segstack/common.hpp"

namespace segstack {

// Strictly binary 2-D mask, one byte per pixel (0 or 1).
struct Mask {
  int h = 0, w = 0;
  std::vector<std::uint8_t> v;

  Mask() = default;
  Mask(int height, int width) : h(height), w(width), v(std::size_t(height) * width, 0) {}

  std::uint8_t& at(int y, int x) { return v[std::size_t(y) * w + x]; }
  std::uint8_t at(int y, int x) const { return v[std::size_t(y) * w + x]; }
  std::int64_t count() const {
    std::int64_t c = 0;
    for (auto b : v) c += b;
    return c;
  }
};

// Per-pixel prediction scores in [0, 1].
struct ScoreMap {
  int h = 0, w = 0;
  std::vector<float> v;

  ScoreMap() = default;
  ScoreMap(int height, int width) : h(height), w(width), v(std::size_t(height) * width, 0.0f) {}

  float& at(int y, int x) { return v[std::size_t(y) * w + x]; }
  float at(int y, int x) const { return v[std::size_t(y) * w + x]; }
};

namespace detail {
inline void check_same_shape(const Mask& a, const Mask& b, const char* op) {
  check(a.h == b.h && a.w == b.w, op, ": shape mismatch (", a.h, "x", a.w, ") vs (", b.h,
        "x", b.w, ")");
}
}  // namespace detail

// Chebyshev dilation with a square structuring element of side 2*rho+1,
// done as separable horizontal/vertical max passes.
inline Mask dilate(const Mask& m, int rho) {
  check(rho >= 0, "dilate: negative radius");
  if (rho == 0) return m;
  Mask tmp(m.h, m.w), out(m.h, m.w);
  for (int y = 0; y < m.h; ++y)
    for (int x = 0; x < m.w; ++x) {
      std::uint8_t acc = 0;
      for (int d = std::max(0, x - rho); d <= std::min(m.w - 1, x + rho) && !acc; ++d)
        acc = m.at(y, d);
      tmp.at(y, x) = acc;
    }
  for (int y = 0; y < m.h; ++y)
    for (int x = 0; x < m.w; ++x) {
      std::uint8_t acc = 0;
      for (int d = std::max(0, y - rho); d <= std::min(m.h - 1, y + rho) && !acc; ++d)
        acc = tmp.at(d, x);
      out.at(y, x) = acc;
    }
  return out;
}

// Intersection over union; 1.0 when both masks are empty.
inline double iou(const Mask& gt, const Mask& pred) {
  detail::check_same_shape(gt, pred, "iou");
  std::int64_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < gt.v.size(); ++i) {
    inter += gt.v[i] && pred.v[i];
    uni += gt.v[i] || pred.v[i];
  }
  return uni == 0 ? 1.0 : double(inter) / double(uni);
}

inline double accuracy(const Mask& gt, const Mask& pred) {
  detail::check_same_shape(gt, pred, "accuracy");
  std::int64_t correct = 0;
  for (std::size_t i = 0; i < gt.v.size(); ++i) correct += gt.v[i] == pred.v[i];
  return double(correct) / double(gt.v.size());
}

// Relaxed precision/recall: a predicted positive counts if it falls within
// Chebyshev distance rho of a ground-truth positive, and vice versa
// (rho = 3 gives the 7x7 window). Conventions: precision = 1 for an empty
// prediction, recall = 1 for an empty ground truth.
inline std::pair<double, double> relaxed_precision_recall(const Mask& gt, const Mask& pred,
                                                          int rho = 3) {
  detail::check_same_shape(gt, pred, "relaxed_precision_recall");
  const Mask gt_d = dilate(gt, rho);
  const Mask pred_d = dilate(pred, rho);
  std::int64_t pred_pos = 0, pred_hit = 0, gt_pos = 0, gt_hit = 0;
  for (std::size_t i = 0; i < gt.v.size(); ++i) {
    pred_pos += pred.v[i];
    pred_hit += pred.v[i] && gt_d.v[i];
    gt_pos += gt.v[i];
    gt_hit += gt.v[i] && pred_d.v[i];
  }
  const double p = pred_pos == 0 ? 1.0 : double(pred_hit) / double(pred_pos);
  const double r = gt_pos == 0 ? 1.0 : double(gt_hit) / double(gt_pos);
  return {p, r};
}

namespace detail {

// Candidate thresholds: the sorted unique score values, subsampled to at
// most 256 evenly spaced positions for large maps. Shared by the single and
// pooled breakeven sweeps so both use identical candidates.
inline std::vector<float> breakeven_thresholds(std::vector<float> scores) {
  std::sort(scores.begin(), scores.end());
  scores.erase(std::unique(scores.begin(), scores.end()), scores.end());
  if (scores.size() <= 256) return scores;
  std::vector<float> picked;
  picked.reserve(256);
  const double step = double(scores.size() - 1) / 255.0;
  for (int j = 0; j < 256; ++j) {
    const auto idx = std::size_t(std::llround(j * step));
    picked.push_back(scores[idx]);
  }
  picked.erase(std::unique(picked.begin(), picked.end()), picked.end());
  return picked;
}

// Crossing of the precision/recall curves given per-threshold values in
// ascending threshold order: the interpolated common value at the first sign
// flip of (precision - recall), or the midpoint at the |difference|
// minimizer when no flip occurs.
inline double breakeven_from_curves(const std::vector<double>& p, const std::vector<double>& r) {
  const std::size_t n = p.size();
  for (std::size_t k = 0; k < n; ++k)
    if (p[k] == r[k]) return p[k];
  for (std::size_t k = 0; k + 1 < n; ++k) {
    const double d0 = p[k] - r[k], d1 = p[k + 1] - r[k + 1];
    if ((d0 < 0.0) != (d1 < 0.0)) {
      const double alpha = d0 / (d0 - d1);
      return p[k] + alpha * (p[k + 1] - p[k]);
    }
  }
  std::size_t best = 0;
  for (std::size_t k = 1; k < n; ++k)
    if (std::fabs(p[k] - r[k]) < std::fabs(p[best] - r[best])) best = k;
  return 0.5 * (p[best] + r[best]);
}

}  // namespace detail

// Relaxed precision-recall breakeven point over a threshold sweep of the
// score map. Throws for the undefined case (constant scores, empty gt).
inline double breakeven_point(const Mask& gt, const ScoreMap& scores, int rho = 3) {
  check(gt.h == scores.h && gt.w == scores.w, "breakeven_point: shape mismatch");
  const std::vector<float> ts = detail::breakeven_thresholds(scores.v);
  if (ts.size() == 1 && gt.count() == 0)
    fail("breakeven_point: constant score map with no positive ground truth");

  std::vector<double> ps, rs;
  Mask pred(gt.h, gt.w);
  for (float t : ts) {
    for (std::size_t i = 0; i < scores.v.size(); ++i) pred.v[i] = scores.v[i] >= t;
    auto [p, r] = relaxed_precision_recall(gt, pred, rho);
    ps.push_back(p);
    rs.push_back(r);
  }
  return detail::breakeven_from_curves(ps, rs);
}

// Pooled variant: one sweep over the union of all score values, counts
// summed across images at each threshold (dilation stays per-image).
inline double breakeven_point_pooled(const std::vector<const Mask*>& gts,
                                     const std::vector<const ScoreMap*>& scores, int rho = 3) {
  check(!gts.empty() && gts.size() == scores.size(), "breakeven_point_pooled: bad inputs");
  std::vector<float> all;
  std::int64_t gt_total = 0;
  for (std::size_t i = 0; i < gts.size(); ++i) {
    check(gts[i]->h == scores[i]->h && gts[i]->w == scores[i]->w,
          "breakeven_point_pooled: shape mismatch at image ", i);
    all.insert(all.end(), scores[i]->v.begin(), scores[i]->v.end());
    gt_total += gts[i]->count();
  }
  const std::vector<float> ts = detail::breakeven_thresholds(std::move(all));
  if (ts.size() == 1 && gt_total == 0)
    fail("breakeven_point_pooled: constant scores with no positive ground truth");

  std::vector<Mask> gt_dil;
  gt_dil.reserve(gts.size());
  for (const Mask* g : gts) gt_dil.push_back(dilate(*g, rho));

  std::vector<double> ps, rs;
  for (float t : ts) {
    std::int64_t pred_pos = 0, pred_hit = 0, gt_hit = 0;
    for (std::size_t i = 0; i < gts.size(); ++i) {
      Mask pred(gts[i]->h, gts[i]->w);
      for (std::size_t j = 0; j < pred.v.size(); ++j) pred.v[j] = scores[i]->v[j] >= t;
      const Mask pred_d = dilate(pred, rho);
      for (std::size_t j = 0; j < pred.v.size(); ++j) {
        pred_pos += pred.v[j];
        pred_hit += pred.v[j] && gt_dil[i].v[j];
        gt_hit += gts[i]->v[j] && pred_d.v[j];
      }
    }
    ps.push_back(pred_pos == 0 ? 1.0 : double(pred_hit) / double(pred_pos));
    rs.push_back(gt_total == 0 ? 1.0 : double(gt_hit) / double(gt_total));
  }
  return detail::breakeven_from_curves(ps, rs);
}

// Pixel counts and derived metrics for one evaluated region/tile.
struct MetricsReport {
  std::string label;
  std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
  // relaxed counts at the radius used for the report
  int rho = 3;
  std::int64_t pred_pos = 0, pred_hit = 0, gt_pos = 0, gt_hit = 0;
  std::optional<double> breakeven;

  std::int64_t pixels() const { return tp + fp + fn + tn; }
  double iou() const {
    const std::int64_t uni = tp + fp + fn;
    return uni == 0 ? 1.0 : double(tp) / double(uni);
  }
  double accuracy() const { return double(tp + tn) / double(pixels()); }
  double relaxed_precision() const {
    return pred_pos == 0 ? 1.0 : double(pred_hit) / double(pred_pos);
  }
  double relaxed_recall() const { return gt_pos == 0 ? 1.0 : double(gt_hit) / double(gt_pos); }
};

inline MetricsReport evaluate_masks(const std::string& label, const Mask& gt, const Mask& pred,
                                    int rho = 3) {
  detail::check_same_shape(gt, pred, "evaluate_masks");
  MetricsReport r;
  r.label = label;
  r.rho = rho;
  const Mask gt_d = dilate(gt, rho);
  const Mask pred_d = dilate(pred, rho);
  for (std::size_t i = 0; i < gt.v.size(); ++i) {
    const bool t = gt.v[i], p = pred.v[i];
    r.tp += t && p;
    r.fp += !t && p;
    r.fn += t && !p;
    r.tn += !t && !p;
    r.pred_pos += p;
    r.pred_hit += p && gt_d.v[i];
    r.gt_pos += t;
    r.gt_hit += t && pred_d.v[i];
  }
  return r;
}

// Overall row: metrics recomputed from summed pixel counts, never averaged
// ratios. Breakeven does not aggregate from counts and is left unset.
inline MetricsReport aggregate(const std::vector<MetricsReport>& reports,
                               const std::string& label = "Overall") {
  check(!reports.empty(), "aggregate: empty report list");
  MetricsReport out;
  out.label = label;
  out.rho = reports.front().rho;
  for (const auto& r : reports) {
    check(r.rho == out.rho, "aggregate: mixed relaxation radii");
    out.tp += r.tp;
    out.fp += r.fp;
    out.fn += r.fn;
    out.tn += r.tn;
    out.pred_pos += r.pred_pos;
    out.pred_hit += r.pred_hit;
    out.gt_pos += r.gt_pos;
    out.gt_hit += r.gt_hit;
  }
  if (reports.size() == 1) out.breakeven = reports.front().breakeven;
  return out;
}

}  // namespace segstack
