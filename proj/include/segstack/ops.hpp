#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>
#include <vector>

#include "segstack/gemm.hpp"
#include "segstack/tensor.hpp"

namespace segstack {

enum class Mode { train, eval };

namespace detail {

#ifndef NDEBUG
inline void debug_check_finite(const Tensor& t, const char* op) {
  if (!t.all_finite()) fail(op, ": non-finite value in output");
}
#else
inline void debug_check_finite(const Tensor&, const char*) {}
#endif

// Fills one im2col matrix (C*9 x H*W) for a 3x3 kernel with zero padding 1.
// Row k = c*9 + dy*3 + dx holds the input plane c shifted by (dy-1, dx-1).
inline void im2col_3x3(const float* src, int c_in, int h, int w, float* col) {
  const std::size_t plane = std::size_t(h) * w;
  for (int c = 0; c < c_in; ++c) {
    const float* xp = src + std::size_t(c) * plane;
    for (int dy = 0; dy < 3; ++dy) {
      for (int dx = 0; dx < 3; ++dx) {
        float* row = col + (std::size_t(c) * 9 + dy * 3 + dx) * plane;
        for (int y = 0; y < h; ++y) {
          const int sy = y + dy - 1;
          float* dst = row + std::size_t(y) * w;
          if (sy < 0 || sy >= h) {
            std::memset(dst, 0, sizeof(float) * w);
            continue;
          }
          const float* s = xp + std::size_t(sy) * w;
          if (dx == 1) {
            std::memcpy(dst, s, sizeof(float) * w);
          } else if (dx == 0) {
            dst[0] = 0.0f;
            std::memcpy(dst + 1, s, sizeof(float) * (w - 1));
          } else {
            std::memcpy(dst, s + 1, sizeof(float) * (w - 1));
            dst[w - 1] = 0.0f;
          }
        }
      }
    }
  }
}

// Scatter-adds an im2col-layout gradient back onto the input plane.
inline void col2im_add_3x3(const float* col, int c_in, int h, int w, float* dst) {
  const std::size_t plane = std::size_t(h) * w;
  for (int c = 0; c < c_in; ++c) {
    float* xg = dst + std::size_t(c) * plane;
    for (int dy = 0; dy < 3; ++dy) {
      for (int dx = 0; dx < 3; ++dx) {
        const float* row = col + (std::size_t(c) * 9 + dy * 3 + dx) * plane;
        for (int y = 0; y < h; ++y) {
          const int sy = y + dy - 1;
          if (sy < 0 || sy >= h) continue;
          const float* g = row + std::size_t(y) * w;
          float* d = xg + std::size_t(sy) * w;
          if (dx == 1) {
            for (int x = 0; x < w; ++x) d[x] += g[x];
          } else if (dx == 0) {
            for (int x = 1; x < w; ++x) d[x - 1] += g[x];
          } else {
            for (int x = 0; x < w - 1; ++x) d[x + 1] += g[x];
          }
        }
      }
    }
  }
}

}  // namespace detail

// 3x3 convolution, stride 1, zero padding 1 (same-size output).
// weight: (C_out, C_in, 3, 3), bias: (1, C_out, 1, 1).
inline Tensor conv2d(const Tensor& x, Parameter& weight, Parameter& bias, Tape* tape = nullptr) {
  const Shape4 xs = x.shape(), ws = weight.tensor.shape(), bs = bias.tensor.shape();
  check(ws.h == 3 && ws.w == 3, "conv2d: kernel must be 3x3, got ", ws.str());
  check(ws.c == xs.c, "conv2d: input has ", xs.c, " channels, weight expects ", ws.c);
  check(bs == Shape4{1, ws.n, 1, 1}, "conv2d: bias shape ", bs.str(), " does not match C_out ", ws.n);

  const int n = xs.n, ci = xs.c, h = xs.h, w = xs.w, co = ws.n;
  const int k = ci * 9;
  const std::size_t plane = std::size_t(h) * w;
  const std::size_t in_stride = std::size_t(ci) * plane;
  const std::size_t out_stride = std::size_t(co) * plane;

  Tensor out({n, co, h, w});
  Tensor wt = weight.tensor;
  Tensor bt = bias.tensor;

  // Per-image im2col buffers are retained when recording so the backward
  // pass can form the weight gradient without refilling them.
  auto cols = std::make_shared<std::vector<std::vector<float>>>();
  const bool keep = tape != nullptr;
  if (keep) cols->resize(n);
  std::vector<float> scratch;
  if (!keep) scratch.resize(std::size_t(k) * plane);

  for (int i = 0; i < n; ++i) {
    float* col = keep ? ((*cols)[i].resize(std::size_t(k) * plane), (*cols)[i].data())
                      : scratch.data();
    detail::im2col_3x3(x.data() + i * in_stride, ci, h, w, col);
    gemm::nn(wt.data(), col, out.data() + i * out_stride, co, k, int(plane));
  }
  for (int i = 0; i < n; ++i)
    for (int o = 0; o < co; ++o) {
      float* p = out.data() + i * out_stride + o * plane;
      const float bv = bt.data()[o];
      for (std::size_t j = 0; j < plane; ++j) p[j] += bv;
    }
  detail::debug_check_finite(out, "conv2d");

  Tensor xin = x;
  detail::prepare_node(tape, out, {&xin, &wt, &bt});
  if (tape) {
    tape->record([xin, wt, bt, out, cols, n, ci, co, h, w, k, plane, in_stride,
                  out_stride]() mutable {
      const float* dy = out.grad();
      for (int i = 0; i < n; ++i) {
        const float* dyn = dy + i * out_stride;
        float* col = (*cols)[i].data();
        if (wt.has_grad())
          gemm::nt(dyn, col, wt.grad(), co, int(plane), k, /*accumulate=*/true);
        if (bt.has_grad())
          for (int o = 0; o < co; ++o) {
            double s = 0.0;
            const float* p = dyn + o * plane;
            for (std::size_t j = 0; j < plane; ++j) s += p[j];
            bt.grad()[o] += float(s);
          }
        if (xin.has_grad()) {
          // dW above consumed the stored activations; reuse the buffer for dcol.
          gemm::tn(wt.data(), dyn, col, k, co, int(plane));
          detail::col2im_add_3x3(col, ci, h, w, xin.grad() + i * in_stride);
        }
      }
      cols->clear();
    });
  }
  return out;
}

inline Tensor relu(const Tensor& x, Tape* tape = nullptr) {
  Tensor out(x.shape());
  const std::int64_t m = x.numel();
  const float* xp = x.data();
  float* op = out.data();
  for (std::int64_t i = 0; i < m; ++i) op[i] = xp[i] > 0.0f ? xp[i] : 0.0f;

  Tensor xin = x;
  detail::prepare_node(tape, out, {&xin});
  if (tape)
    tape->record([xin, out, m]() mutable {
      if (!xin.has_grad()) return;
      const float* dy = out.grad();
      const float* xp2 = xin.data();
      float* dx = xin.grad();
      for (std::int64_t i = 0; i < m; ++i)
        if (xp2[i] > 0.0f) dx[i] += dy[i];
    });
  return out;
}

inline Tensor sigmoid(const Tensor& x, Tape* tape = nullptr) {
  Tensor out(x.shape());
  const std::int64_t m = x.numel();
  const float* xp = x.data();
  float* op = out.data();
  for (std::int64_t i = 0; i < m; ++i) {
    const float v = xp[i];
    op[i] = v >= 0.0f ? 1.0f / (1.0f + std::exp(-v))
                      : std::exp(v) / (1.0f + std::exp(v));
  }

  Tensor xin = x;
  detail::prepare_node(tape, out, {&xin});
  if (tape)
    tape->record([xin, out, m]() mutable {
      if (!xin.has_grad()) return;
      const float* dy = out.grad();
      const float* s = out.data();
      float* dx = xin.grad();
      for (std::int64_t i = 0; i < m; ++i) dx[i] += dy[i] * s[i] * (1.0f - s[i]);
    });
  return out;
}

// 2x2 max pooling, stride 2. Gradient goes to the window argmax; ties break
// to the first element in row-major order.
inline Tensor maxpool2x2(const Tensor& x, Tape* tape = nullptr) {
  const Shape4 xs = x.shape();
  check(xs.h % 2 == 0 && xs.w % 2 == 0, "maxpool2x2: odd spatial size ", xs.str());
  const int n = xs.n, c = xs.c, h = xs.h, w = xs.w, oh = h / 2, ow = w / 2;

  Tensor out({n, c, oh, ow});
  auto argmax = std::make_shared<std::vector<std::uint32_t>>(out.numel());
  const float* xp = x.data();
  float* op = out.data();
  std::size_t oi = 0;
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t base = (std::size_t(i) * c + ch) * h * w;
      for (int y = 0; y < oh; ++y)
        for (int x2 = 0; x2 < ow; ++x2, ++oi) {
          std::size_t best = base + std::size_t(2 * y) * w + 2 * x2;
          float bv = xp[best];
          const std::size_t cand[3] = {best + 1, best + w, best + w + 1};
          for (std::size_t idx : cand)
            if (xp[idx] > bv) {
              bv = xp[idx];
              best = idx;
            }
          op[oi] = bv;
          (*argmax)[oi] = std::uint32_t(best);
        }
    }

  Tensor xin = x;
  detail::prepare_node(tape, out, {&xin});
  if (tape)
    tape->record([xin, out, argmax]() mutable {
      if (!xin.has_grad()) return;
      const float* dy = out.grad();
      float* dx = xin.grad();
      const std::int64_t m = out.numel();
      for (std::int64_t i = 0; i < m; ++i) dx[(*argmax)[i]] += dy[i];
    });
  return out;
}

// Nearest-neighbour 2x upsampling: each source element fills its 2x2 window.
inline Tensor upsample2x_replicate(const Tensor& x, Tape* tape = nullptr) {
  const Shape4 xs = x.shape();
  const int n = xs.n, c = xs.c, h = xs.h, w = xs.w;
  Tensor out({n, c, 2 * h, 2 * w});
  const float* xp = x.data();
  float* op = out.data();
  for (int i = 0; i < n * c; ++i) {
    const float* sp = xp + std::size_t(i) * h * w;
    float* dp = op + std::size_t(i) * 4 * h * w;
    for (int y = 0; y < h; ++y)
      for (int x2 = 0; x2 < w; ++x2) {
        const float v = sp[std::size_t(y) * w + x2];
        float* d = dp + std::size_t(2 * y) * 2 * w + 2 * x2;
        d[0] = v;
        d[1] = v;
        d[2 * w] = v;
        d[2 * w + 1] = v;
      }
  }

  Tensor xin = x;
  detail::prepare_node(tape, out, {&xin});
  if (tape)
    tape->record([xin, out, n, c, h, w]() mutable {
      if (!xin.has_grad()) return;
      const float* dy = out.grad();
      float* dx = xin.grad();
      for (int i = 0; i < n * c; ++i) {
        const float* d = dy + std::size_t(i) * 4 * h * w;
        float* s = dx + std::size_t(i) * h * w;
        for (int y = 0; y < h; ++y)
          for (int x2 = 0; x2 < w; ++x2) {
            const float* g = d + std::size_t(2 * y) * 2 * w + 2 * x2;
            s[std::size_t(y) * w + x2] += g[0] + g[1] + g[2 * w] + g[2 * w + 1];
          }
      }
    });
  return out;
}

// Concatenates along the channel axis, a's channels first.
inline Tensor concat_channels(const Tensor& a, const Tensor& b, Tape* tape = nullptr) {
  const Shape4 as = a.shape(), bs = b.shape();
  check(as.n == bs.n && as.h == bs.h && as.w == bs.w,
        "concat_channels: mismatched shapes ", as.str(), " vs ", bs.str());
  const int n = as.n, ca = as.c, cb = bs.c, h = as.h, w = as.w;
  const std::size_t plane = std::size_t(h) * w;
  Tensor out({n, ca + cb, h, w});
  for (int i = 0; i < n; ++i) {
    std::memcpy(out.data() + (std::size_t(i) * (ca + cb)) * plane,
                a.data() + std::size_t(i) * ca * plane, sizeof(float) * ca * plane);
    std::memcpy(out.data() + (std::size_t(i) * (ca + cb) + ca) * plane,
                b.data() + std::size_t(i) * cb * plane, sizeof(float) * cb * plane);
  }

  Tensor ain = a, bin = b;
  detail::prepare_node(tape, out, {&ain, &bin});
  if (tape)
    tape->record([ain, bin, out, n, ca, cb, plane]() mutable {
      const float* dy = out.grad();
      for (int i = 0; i < n; ++i) {
        if (ain.has_grad()) {
          float* da = ain.grad() + std::size_t(i) * ca * plane;
          const float* g = dy + (std::size_t(i) * (ca + cb)) * plane;
          for (std::size_t j = 0; j < ca * plane; ++j) da[j] += g[j];
        }
        if (bin.has_grad()) {
          float* db = bin.grad() + std::size_t(i) * cb * plane;
          const float* g = dy + (std::size_t(i) * (ca + cb) + ca) * plane;
          for (std::size_t j = 0; j < cb * plane; ++j) db[j] += g[j];
        }
      }
    });
  return out;
}

// Drops a margin of `m` pixels on every spatial side.
inline Tensor crop_center(const Tensor& x, int margin, Tape* tape = nullptr) {
  const Shape4 xs = x.shape();
  check(margin >= 0, "crop_center: negative margin");
  check(2 * margin < std::min(xs.h, xs.w), "crop_center: margin ", margin,
        " too large for ", xs.str());
  const int n = xs.n, c = xs.c, h = xs.h, w = xs.w;
  const int oh = h - 2 * margin, ow = w - 2 * margin;
  Tensor out({n, c, oh, ow});
  for (int i = 0; i < n * c; ++i) {
    const float* sp = x.data() + std::size_t(i) * h * w;
    float* dp = out.data() + std::size_t(i) * oh * ow;
    for (int y = 0; y < oh; ++y)
      std::memcpy(dp + std::size_t(y) * ow,
                  sp + std::size_t(y + margin) * w + margin, sizeof(float) * ow);
  }

  Tensor xin = x;
  detail::prepare_node(tape, out, {&xin});
  if (tape)
    tape->record([xin, out, n, c, h, w, oh, ow, margin]() mutable {
      if (!xin.has_grad()) return;
      const float* dy = out.grad();
      for (int i = 0; i < n * c; ++i) {
        float* dx = xin.grad() + std::size_t(i) * h * w;
        const float* g = dy + std::size_t(i) * oh * ow;
        for (int y = 0; y < oh; ++y)
          for (int x2 = 0; x2 < ow; ++x2)
            dx[std::size_t(y + margin) * w + margin + x2] += g[std::size_t(y) * ow + x2];
      }
    });
  return out;
}

// Zero-pads `m` pixels on every spatial side (inverse of crop_center).
inline Tensor pad_zero(const Tensor& x, int margin, Tape* tape = nullptr) {
  check(margin >= 0, "pad_zero: negative margin");
  const Shape4 xs = x.shape();
  const int n = xs.n, c = xs.c, h = xs.h, w = xs.w;
  const int oh = h + 2 * margin, ow = w + 2 * margin;
  Tensor out({n, c, oh, ow});
  for (int i = 0; i < n * c; ++i) {
    const float* sp = x.data() + std::size_t(i) * h * w;
    float* dp = out.data() + std::size_t(i) * oh * ow;
    for (int y = 0; y < h; ++y)
      std::memcpy(dp + std::size_t(y + margin) * ow + margin,
                  sp + std::size_t(y) * w, sizeof(float) * w);
  }

  Tensor xin = x;
  detail::prepare_node(tape, out, {&xin});
  if (tape)
    tape->record([xin, out, n, c, h, w, oh, ow, margin]() mutable {
      if (!xin.has_grad()) return;
      const float* dy = out.grad();
      for (int i = 0; i < n * c; ++i) {
        float* dx = xin.grad() + std::size_t(i) * h * w;
        const float* g = dy + std::size_t(i) * oh * ow;
        for (int y = 0; y < h; ++y)
          for (int x2 = 0; x2 < w; ++x2)
            dx[std::size_t(y) * w + x2] += g[std::size_t(y + margin) * ow + margin + x2];
      }
    });
  return out;
}

// Running statistics owned by one batch-norm layer.
struct BatchNormState {
  Tensor running_mean;  // (1, C, 1, 1)
  Tensor running_var;   // (1, C, 1, 1)
  bool ready = false;   // set after the first training batch

  explicit BatchNormState(int channels = 0) {
    if (channels > 0) {
      running_mean = Tensor({1, channels, 1, 1});
      running_var = Tensor::full({1, channels, 1, 1}, 1.0f);
    }
  }
};

inline constexpr float kBatchNormEps = 1e-5f;
inline constexpr float kBatchNormMomentum = 0.99f;

// Per-channel batch normalization over N*H*W. Training mode uses batch
// statistics and updates the running averages; eval mode uses the stored
// running statistics and requires them to be populated.
inline Tensor batchnorm(const Tensor& x, Parameter& gamma, Parameter& beta,
                        BatchNormState& state, Mode mode, Tape* tape = nullptr) {
  const Shape4 xs = x.shape();
  const int n = xs.n, c = xs.c, h = xs.h, w = xs.w;
  check(gamma.tensor.shape() == Shape4{1, c, 1, 1} && beta.tensor.shape() == Shape4{1, c, 1, 1},
        "batchnorm: gamma/beta must be (1,", c, ",1,1)");
  if (mode == Mode::eval)
    check(state.ready, "batchnorm: eval mode with unpopulated running stats");

  const std::size_t plane = std::size_t(h) * w;
  const std::int64_t m = std::int64_t(n) * h * w;
  Tensor out(xs);
  auto mean = std::make_shared<std::vector<float>>(c);
  auto invstd = std::make_shared<std::vector<float>>(c);

  for (int ch = 0; ch < c; ++ch) {
    double mu, var;
    if (mode == Mode::train) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) {
        const float* p = x.data() + (std::size_t(i) * c + ch) * plane;
        for (std::size_t j = 0; j < plane; ++j) s += p[j];
      }
      mu = s / double(m);
      double sq = 0.0;
      for (int i = 0; i < n; ++i) {
        const float* p = x.data() + (std::size_t(i) * c + ch) * plane;
        for (std::size_t j = 0; j < plane; ++j) {
          const double d = p[j] - mu;
          sq += d * d;
        }
      }
      var = sq / double(m);
      state.running_mean.data()[ch] = kBatchNormMomentum * state.running_mean.data()[ch] +
                                      (1.0f - kBatchNormMomentum) * float(mu);
      state.running_var.data()[ch] = kBatchNormMomentum * state.running_var.data()[ch] +
                                     (1.0f - kBatchNormMomentum) * float(var);
    } else {
      mu = state.running_mean.data()[ch];
      var = state.running_var.data()[ch];
    }
    (*mean)[ch] = float(mu);
    (*invstd)[ch] = 1.0f / std::sqrt(float(var) + kBatchNormEps);
    if (!std::isfinite((*invstd)[ch])) fail("batchnorm: non-finite inverse stddev");

    const float g = gamma.tensor.data()[ch], b = beta.tensor.data()[ch];
    const float mu_f = (*mean)[ch], is_f = (*invstd)[ch];
    for (int i = 0; i < n; ++i) {
      const float* p = x.data() + (std::size_t(i) * c + ch) * plane;
      float* o = out.data() + (std::size_t(i) * c + ch) * plane;
      for (std::size_t j = 0; j < plane; ++j) o[j] = (p[j] - mu_f) * is_f * g + b;
    }
  }
  if (mode == Mode::train) state.ready = true;

  Tensor xin = x, gt = gamma.tensor, bt = beta.tensor;
  detail::prepare_node(tape, out, {&xin, &gt, &bt});
  if (tape)
    tape->record([xin, gt, bt, out, mean, invstd, mode, n, c, plane, m]() mutable {
      const float* dy = out.grad();
      for (int ch = 0; ch < c; ++ch) {
        const float mu = (*mean)[ch], is = (*invstd)[ch], g = gt.data()[ch];
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int i = 0; i < n; ++i) {
          const float* p = xin.data() + (std::size_t(i) * c + ch) * plane;
          const float* d = dy + (std::size_t(i) * c + ch) * plane;
          for (std::size_t j = 0; j < plane; ++j) {
            sum_dy += d[j];
            sum_dy_xhat += double(d[j]) * (p[j] - mu) * is;
          }
        }
        if (gt.has_grad()) gt.grad()[ch] += float(sum_dy_xhat);
        if (bt.has_grad()) bt.grad()[ch] += float(sum_dy);
        if (!xin.has_grad()) continue;
        if (mode == Mode::train) {
          const float k1 = g * is / float(m);
          for (int i = 0; i < n; ++i) {
            const float* p = xin.data() + (std::size_t(i) * c + ch) * plane;
            const float* d = dy + (std::size_t(i) * c + ch) * plane;
            float* dx = xin.grad() + (std::size_t(i) * c + ch) * plane;
            for (std::size_t j = 0; j < plane; ++j) {
              const float xhat = (p[j] - mu) * is;
              dx[j] += k1 * (float(m) * d[j] - float(sum_dy) - xhat * float(sum_dy_xhat));
            }
          }
        } else {
          const float k1 = g * is;
          for (int i = 0; i < n; ++i) {
            const float* d = dy + (std::size_t(i) * c + ch) * plane;
            float* dx = xin.grad() + (std::size_t(i) * c + ch) * plane;
            for (std::size_t j = 0; j < plane; ++j) dx[j] += k1 * d[j];
          }
        }
      }
    });
  return out;
}

// ---- elementwise and reduction ops ----

namespace detail {
template <typename Fwd, typename Bwd>
Tensor binary_op(const Tensor& a, const Tensor& b, Tape* tape, const char* name,
                 Fwd fwd, Bwd bwd) {
  check(a.shape() == b.shape(), name, ": shape mismatch ", a.shape().str(), " vs ",
        b.shape().str());
  Tensor out(a.shape());
  const std::int64_t m = a.numel();
  for (std::int64_t i = 0; i < m; ++i) out.data()[i] = fwd(a.data()[i], b.data()[i]);
  Tensor ain = a, bin = b;
  prepare_node(tape, out, {&ain, &bin});
  if (tape)
    tape->record([ain, bin, out, m, bwd]() mutable {
      const float* dy = out.grad();
      for (std::int64_t i = 0; i < m; ++i) {
        float da, db;
        bwd(ain.data()[i], bin.data()[i], dy[i], da, db);
        if (ain.has_grad()) ain.grad()[i] += da;
        if (bin.has_grad()) bin.grad()[i] += db;
      }
    });
  return out;
}
}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b, Tape* tape = nullptr) {
  return detail::binary_op(a, b, tape, "add",
                           [](float x, float y) { return x + y; },
                           [](float, float, float g, float& da, float& db) {
                             da = g;
                             db = g;
                           });
}

inline Tensor sub(const Tensor& a, const Tensor& b, Tape* tape = nullptr) {
  return detail::binary_op(a, b, tape, "sub",
                           [](float x, float y) { return x - y; },
                           [](float, float, float g, float& da, float& db) {
                             da = g;
                             db = -g;
                           });
}

inline Tensor mul(const Tensor& a, const Tensor& b, Tape* tape = nullptr) {
  return detail::binary_op(a, b, tape, "mul",
                           [](float x, float y) { return x * y; },
                           [](float x, float y, float g, float& da, float& db) {
                             da = g * y;
                             db = g * x;
                           });
}

inline Tensor log_op(const Tensor& x, Tape* tape = nullptr) {
  Tensor out(x.shape());
  const std::int64_t m = x.numel();
  for (std::int64_t i = 0; i < m; ++i) out.data()[i] = std::log(x.data()[i]);
  detail::debug_check_finite(out, "log_op");
  Tensor xin = x;
  detail::prepare_node(tape, out, {&xin});
  if (tape)
    tape->record([xin, out, m]() mutable {
      if (!xin.has_grad()) return;
      const float* dy = out.grad();
      for (std::int64_t i = 0; i < m; ++i) xin.grad()[i] += dy[i] / xin.data()[i];
    });
  return out;
}

// max(x, lo) elementwise; gradient passes only where x > lo.
inline Tensor clamp_min(const Tensor& x, float lo, Tape* tape = nullptr) {
  Tensor out(x.shape());
  const std::int64_t m = x.numel();
  for (std::int64_t i = 0; i < m; ++i) out.data()[i] = std::max(x.data()[i], lo);
  Tensor xin = x;
  detail::prepare_node(tape, out, {&xin});
  if (tape)
    tape->record([xin, out, m, lo]() mutable {
      if (!xin.has_grad()) return;
      const float* dy = out.grad();
      for (std::int64_t i = 0; i < m; ++i)
        if (xin.data()[i] > lo) xin.grad()[i] += dy[i];
    });
  return out;
}

inline Tensor scale(const Tensor& x, float s, Tape* tape = nullptr) {
  Tensor out(x.shape());
  const std::int64_t m = x.numel();
  for (std::int64_t i = 0; i < m; ++i) out.data()[i] = x.data()[i] * s;
  Tensor xin = x;
  detail::prepare_node(tape, out, {&xin});
  if (tape)
    tape->record([xin, out, m, s]() mutable {
      if (!xin.has_grad()) return;
      const float* dy = out.grad();
      for (std::int64_t i = 0; i < m; ++i) xin.grad()[i] += dy[i] * s;
    });
  return out;
}

inline Tensor sum_all(const Tensor& x, Tape* tape = nullptr) {
  double s = 0.0;
  const std::int64_t m = x.numel();
  for (std::int64_t i = 0; i < m; ++i) s += x.data()[i];
  Tensor out = Tensor::scalar(float(s));
  Tensor xin = x;
  detail::prepare_node(tape, out, {&xin});
  if (tape)
    tape->record([xin, out, m]() mutable {
      if (!xin.has_grad()) return;
      const float g = out.grad()[0];
      for (std::int64_t i = 0; i < m; ++i) xin.grad()[i] += g;
    });
  return out;
}

inline Tensor mean_all(const Tensor& x, Tape* tape = nullptr) {
  const std::int64_t m = x.numel();
  check(m > 0, "mean_all: empty tensor");
  Tensor s = sum_all(x, tape);
  return scale(s, 1.0f / float(m), tape);
}

// He-uniform initialization: i.i.d. uniform on [-sqrt(6/fan_in), +sqrt(6/fan_in)].
inline Tensor he_uniform_init(Shape4 shape, int fan_in, Rng& rng) {
  check(fan_in > 0, "he_uniform_init: fan_in must be positive");
  const float bound = std::sqrt(6.0f / float(fan_in));
  Tensor t(shape);
  const std::int64_t m = t.numel();
  for (std::int64_t i = 0; i < m; ++i) t.data()[i] = rng.uniform(-bound, bound);
  return t;
}

}  // namespace segstack
