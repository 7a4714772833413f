#include <gtest/gtest.h>

#include <set>

#include "segstack/loss.hpp"
#include "segstack/metrics.hpp"

using namespace segstack;

namespace {

Mask random_mask(int h, int w, Rng& rng, float density = 0.3f) {
  Mask m(h, w);
  for (auto& b : m.v) b = rng.coin(density) ? 1 : 0;
  return m;
}

// ---- naive double-loop oracles, independent of the library code ----

double iou_oracle(const Mask& gt, const Mask& pred) {
  std::int64_t inter = 0, uni = 0;
  for (int y = 0; y < gt.h; ++y)
    for (int x = 0; x < gt.w; ++x) {
      if (gt.at(y, x) && pred.at(y, x)) ++inter;
      if (gt.at(y, x) || pred.at(y, x)) ++uni;
    }
  return uni == 0 ? 1.0 : double(inter) / double(uni);
}

double accuracy_oracle(const Mask& gt, const Mask& pred) {
  std::int64_t ok = 0;
  for (int y = 0; y < gt.h; ++y)
    for (int x = 0; x < gt.w; ++x) ok += gt.at(y, x) == pred.at(y, x);
  return double(ok) / double(gt.h * gt.w);
}

bool near_positive(const Mask& m, int y, int x, int rho) {
  for (int dy = -rho; dy <= rho; ++dy)
    for (int dx = -rho; dx <= rho; ++dx) {
      const int sy = y + dy, sx = x + dx;
      if (sy < 0 || sy >= m.h || sx < 0 || sx >= m.w) continue;
      if (m.at(sy, sx)) return true;
    }
  return false;
}

std::pair<double, double> relaxed_pr_oracle(const Mask& gt, const Mask& pred, int rho) {
  std::int64_t pred_pos = 0, pred_hit = 0, gt_pos = 0, gt_hit = 0;
  for (int y = 0; y < gt.h; ++y)
    for (int x = 0; x < gt.w; ++x) {
      if (pred.at(y, x)) {
        ++pred_pos;
        if (near_positive(gt, y, x, rho)) ++pred_hit;
      }
      if (gt.at(y, x)) {
        ++gt_pos;
        if (near_positive(pred, y, x, rho)) ++gt_hit;
      }
    }
  return {pred_pos == 0 ? 1.0 : double(pred_hit) / double(pred_pos),
          gt_pos == 0 ? 1.0 : double(gt_hit) / double(gt_pos)};
}

// Exhaustive sweep oracle for the breakeven point: same candidate-threshold
// rule, but precision/recall and the crossing computed with the naive loops.
double breakeven_oracle(const Mask& gt, const ScoreMap& scores, int rho) {
  std::set<float> uniq(scores.v.begin(), scores.v.end());
  std::vector<float> sorted(uniq.begin(), uniq.end());
  std::vector<float> ts;
  if (sorted.size() <= 256) {
    ts = sorted;
  } else {
    const double step = double(sorted.size() - 1) / 255.0;
    for (int j = 0; j < 256; ++j) {
      const float v = sorted[std::size_t(std::llround(j * step))];
      if (ts.empty() || ts.back() != v) ts.push_back(v);
    }
  }
  std::vector<double> ps, rs;
  for (float t : ts) {
    Mask pred(gt.h, gt.w);
    for (std::size_t i = 0; i < scores.v.size(); ++i) pred.v[i] = scores.v[i] >= t;
    auto [p, r] = relaxed_pr_oracle(gt, pred, rho);
    ps.push_back(p);
    rs.push_back(r);
  }
  for (std::size_t k = 0; k < ps.size(); ++k)
    if (ps[k] == rs[k]) return ps[k];
  for (std::size_t k = 0; k + 1 < ps.size(); ++k) {
    const double d0 = ps[k] - rs[k], d1 = ps[k + 1] - rs[k + 1];
    if ((d0 < 0.0) != (d1 < 0.0)) return ps[k] + d0 / (d0 - d1) * (ps[k + 1] - ps[k]);
  }
  std::size_t best = 0;
  for (std::size_t k = 1; k < ps.size(); ++k)
    if (std::fabs(ps[k] - rs[k]) < std::fabs(ps[best] - rs[best])) best = k;
  return 0.5 * (ps[best] + rs[best]);
}

}  // namespace

TEST(Iou, BasicCases) {
  Mask a(4, 4), b(4, 4);
  a.at(1, 1) = 1;
  b.at(1, 1) = 1;
  EXPECT_DOUBLE_EQ(iou(a, b), 1.0);

  Mask c(4, 4);
  c.at(2, 2) = 1;
  EXPECT_DOUBLE_EQ(iou(a, c), 0.0);

  Mask empty1(4, 4), empty2(4, 4);
  EXPECT_DOUBLE_EQ(iou(empty1, empty2), 1.0);

  Mask wrong(4, 5);
  EXPECT_THROW(iou(a, wrong), InvalidArgument);
}

TEST(Iou, ShiftedBlockExample) {
  // GT: 2x2 block at (0,0); P: 2x2 block at (0,1) on an 8x8 grid.
  Mask gt(8, 8), pred(8, 8);
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 2; ++x) {
      gt.at(y, x) = 1;
      pred.at(y, x + 1) = 1;
    }
  EXPECT_NEAR(iou(gt, pred), 1.0 / 3.0, 1e-12);  // intersection 2, union 6
  // accuracy barely notices the error, the paper's discriminativeness point
  EXPECT_NEAR(accuracy(gt, pred), (64.0 - 4.0) / 64.0, 1e-12);
}

TEST(Accuracy, IdentityAndComplement) {
  Rng rng(1);
  Mask m = random_mask(8, 8, rng);
  EXPECT_DOUBLE_EQ(accuracy(m, m), 1.0);
  Mask inv(8, 8);
  for (std::size_t i = 0; i < m.v.size(); ++i) inv.v[i] = 1 - m.v[i];
  EXPECT_DOUBLE_EQ(accuracy(m, inv), 0.0);
}

TEST(Metrics, SymmetryProperties) {
  Rng rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    Mask a = random_mask(16, 16, rng);
    Mask b = random_mask(16, 16, rng);
    EXPECT_DOUBLE_EQ(iou(a, b), iou(b, a));
    EXPECT_DOUBLE_EQ(accuracy(a, b), accuracy(b, a));
  }
}

TEST(RelaxedPr, TranslationWithinWindow) {
  // interior 4x4 blob translated by (0,3): inside the 7x7 window
  Mask gt(32, 32), pred3(32, 32), pred4(32, 32);
  for (int y = 12; y < 16; ++y)
    for (int x = 12; x < 16; ++x) {
      gt.at(y, x) = 1;
      pred3.at(y, x + 3) = 1;
      pred4.at(y, x + 4) = 1;
    }
  auto [p_eq, r_eq] = relaxed_precision_recall(gt, gt, 3);
  EXPECT_DOUBLE_EQ(p_eq, 1.0);
  EXPECT_DOUBLE_EQ(r_eq, 1.0);

  auto [p3, r3] = relaxed_precision_recall(gt, pred3, 3);
  EXPECT_DOUBLE_EQ(p3, 1.0);
  EXPECT_DOUBLE_EQ(r3, 1.0);

  // single pixel translated by 4: outside the window
  Mask g1(32, 32), p1(32, 32);
  g1.at(10, 10) = 1;
  p1.at(10, 14) = 1;
  auto [pp, rr] = relaxed_precision_recall(g1, p1, 3);
  EXPECT_DOUBLE_EQ(pp, 0.0);
  EXPECT_DOUBLE_EQ(rr, 0.0);
}

TEST(RelaxedPr, RhoZeroIsExactPrecisionRecall) {
  Rng rng(3);
  Mask gt = random_mask(24, 24, rng);
  Mask pred = random_mask(24, 24, rng);
  std::int64_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < gt.v.size(); ++i) {
    tp += gt.v[i] && pred.v[i];
    fp += !gt.v[i] && pred.v[i];
    fn += gt.v[i] && !pred.v[i];
  }
  auto [p, r] = relaxed_precision_recall(gt, pred, 0);
  EXPECT_DOUBLE_EQ(p, double(tp) / double(tp + fp));
  EXPECT_DOUBLE_EQ(r, double(tp) / double(tp + fn));
  EXPECT_LE(iou(gt, pred), p);
}

TEST(RelaxedPr, MonotoneInRho) {
  Rng rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    Mask gt = random_mask(20, 20, rng, 0.15f);
    Mask pred = random_mask(20, 20, rng, 0.15f);
    double prev_p = -1.0, prev_r = -1.0;
    for (int rho = 0; rho <= 4; ++rho) {
      auto [p, r] = relaxed_precision_recall(gt, pred, rho);
      EXPECT_GE(p, prev_p);
      EXPECT_GE(r, prev_r);
      prev_p = p;
      prev_r = r;
    }
  }
}

TEST(Metrics, OracleEquivalenceOnRandomMasks) {
  Rng rng(5);
  for (int trial = 0; trial < 25; ++trial) {
    Mask gt = random_mask(32, 32, rng, rng.uniform(0.05f, 0.6f));
    Mask pred = random_mask(32, 32, rng, rng.uniform(0.05f, 0.6f));
    ASSERT_DOUBLE_EQ(iou(gt, pred), iou_oracle(gt, pred));
    ASSERT_DOUBLE_EQ(accuracy(gt, pred), accuracy_oracle(gt, pred));
    for (int rho : {0, 1, 3}) {
      auto [p, r] = relaxed_precision_recall(gt, pred, rho);
      auto [po, ro] = relaxed_pr_oracle(gt, pred, rho);
      ASSERT_DOUBLE_EQ(p, po) << "rho " << rho;
      ASSERT_DOUBLE_EQ(r, ro) << "rho " << rho;
    }
  }
}

TEST(Breakeven, PerfectScoresGiveOne) {
  Rng rng(6);
  Mask gt = random_mask(16, 16, rng);
  ScoreMap s(16, 16);
  for (std::size_t i = 0; i < gt.v.size(); ++i) s.v[i] = float(gt.v[i]);
  EXPECT_NEAR(breakeven_point(gt, s, 3), 1.0, 1e-12);
}

TEST(Breakeven, AdversarialAndDegenerateCases) {
  Rng rng(7);
  Mask gt(16, 16);
  for (int y = 6; y < 10; ++y)
    for (int x = 6; x < 10; ++x) gt.at(y, x) = 1;
  ScoreMap inv(16, 16);
  for (std::size_t i = 0; i < gt.v.size(); ++i) inv.v[i] = 1.0f - float(gt.v[i]);
  // no crossing: the minimizer convention must agree with the oracle
  EXPECT_NEAR(breakeven_point(gt, inv, 3), breakeven_oracle(gt, inv, 3), 1e-9);

  Mask empty(16, 16);
  ScoreMap flat(16, 16);
  for (auto& v : flat.v) v = 0.4f;
  EXPECT_THROW(breakeven_point(empty, flat, 3), RuntimeError);
}

TEST(Breakeven, MatchesExhaustiveSweepOracle) {
  Rng rng(8);
  for (int trial = 0; trial < 15; ++trial) {
    Mask gt = random_mask(64, 64, rng, 0.25f);
    ScoreMap s(64, 64);
    // correlated continuous scores: many unique values (quantile path)
    for (std::size_t i = 0; i < s.v.size(); ++i)
      s.v[i] = std::clamp(0.6f * gt.v[i] + rng.uniform(0.0f, 0.5f), 0.0f, 1.0f);
    ASSERT_NEAR(breakeven_point(gt, s, 3), breakeven_oracle(gt, s, 3), 1e-6) << trial;
  }
  for (int trial = 0; trial < 10; ++trial) {
    Mask gt = random_mask(32, 32, rng, 0.3f);
    ScoreMap s(32, 32);
    // quantized scores: few unique values (full-unique path)
    for (std::size_t i = 0; i < s.v.size(); ++i)
      s.v[i] = float(rng.uniform_int(0, 10)) / 10.0f;
    ASSERT_NEAR(breakeven_point(gt, s, 3), breakeven_oracle(gt, s, 3), 1e-6) << trial;
  }
}

TEST(Aggregate, SingleAndCountArithmetic) {
  Rng rng(9);
  Mask gt = random_mask(16, 16, rng);
  Mask pred = random_mask(16, 16, rng);
  MetricsReport r = evaluate_masks("tile", gt, pred);
  MetricsReport agg = aggregate({r});
  EXPECT_DOUBLE_EQ(agg.iou(), r.iou());
  EXPECT_DOUBLE_EQ(agg.accuracy(), r.accuracy());
  EXPECT_EQ(agg.pixels(), 16 * 16);

  // one all-TP tile and one all-FN tile of equal gt area -> overall IoU 0.5
  Mask g1(8, 8), p1(8, 8), g2(8, 8), p2(8, 8);
  for (int i = 0; i < 8; ++i) {
    g1.at(0, i) = 1;
    p1.at(0, i) = 1;
    g2.at(0, i) = 1;
  }
  MetricsReport combined = aggregate({evaluate_masks("a", g1, p1), evaluate_masks("b", g2, p2)});
  EXPECT_DOUBLE_EQ(combined.iou(), 0.5);

  EXPECT_THROW(aggregate({}), InvalidArgument);
}

TEST(Aggregate, PartitionEqualsWholeImage) {
  Rng rng(10);
  Mask gt = random_mask(32, 32, rng);
  Mask pred = random_mask(32, 32, rng);

  std::vector<MetricsReport> tiles;
  for (int qy = 0; qy < 2; ++qy)
    for (int qx = 0; qx < 2; ++qx) {
      Mask g(16, 16), p(16, 16);
      for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) {
          g.at(y, x) = gt.at(16 * qy + y, 16 * qx + x);
          p.at(y, x) = pred.at(16 * qy + y, 16 * qx + x);
        }
      tiles.push_back(evaluate_masks("q", g, p));
    }
  MetricsReport whole = evaluate_masks("whole", gt, pred);
  MetricsReport agg = aggregate(tiles);
  EXPECT_EQ(agg.tp, whole.tp);
  EXPECT_EQ(agg.fp, whole.fp);
  EXPECT_EQ(agg.fn, whole.fn);
  EXPECT_EQ(agg.tn, whole.tn);
  EXPECT_DOUBLE_EQ(agg.iou(), whole.iou());
  EXPECT_DOUBLE_EQ(agg.accuracy(), whole.accuracy());
  // relaxed counts do not partition (window effects at tile borders), so
  // they are intentionally not compared here
}

TEST(CrossCheck, SoftJaccardOnBinaryMasksCountsAgreement) {
  // With strictly binary inputs the per-pixel-mean soft Jaccard reduces to
  // TP / n_pixels (up to the epsilon): cross-check against metrics counts.
  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    Mask gt = random_mask(16, 16, rng);
    Mask pred = random_mask(16, 16, rng);
    Tensor y({1, 1, 16, 16}), p({1, 1, 16, 16});
    for (std::size_t i = 0; i < gt.v.size(); ++i) {
      y.data()[i] = float(gt.v[i]);
      p.data()[i] = float(pred.v[i]);
    }
    MetricsReport r = evaluate_masks("t", gt, pred);
    const double j = soft_jaccard(y, p).item();
    EXPECT_NEAR(j, double(r.tp) / double(r.pixels()), 1e-5);
  }
}
