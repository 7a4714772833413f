#pragma once

#include "segstack/ops.hpp"

namespace segstack {

// Prediction clip for the cross-entropy term.
inline constexpr float kBceClipEps = 1e-7f;
// Denominator/argument guard for the soft Jaccard term.
inline constexpr float kJaccardEps = 1e-7f;

// Mean binary cross entropy over all elements. Predictions are clipped to
// [eps, 1-eps] so saturated sigmoid outputs cannot produce infinities.
inline Tensor bce(const Tensor& y, const Tensor& yhat, Tape* tape = nullptr) {
  check(y.shape() == yhat.shape(), "bce: shape mismatch ", y.shape().str(), " vs ",
        yhat.shape().str());
  const std::int64_t m = y.numel();
  check(m > 0, "bce: empty tensors");
  double s = 0.0;
  for (std::int64_t i = 0; i < m; ++i) {
    const double t = y.data()[i];
    const double p = std::clamp(yhat.data()[i], kBceClipEps, 1.0f - kBceClipEps);
    s -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
  }
  Tensor out = Tensor::scalar(float(s / double(m)));
  if (!std::isfinite(out.item())) fail("bce: non-finite loss");

  Tensor yin = y, phat = yhat;
  detail::prepare_node(tape, out, {&yin, &phat});
  if (tape)
    tape->record([yin, phat, out, m]() mutable {
      if (!phat.has_grad()) return;
      const float g = out.grad()[0] / float(m);
      for (std::int64_t i = 0; i < m; ++i) {
        const float p = phat.data()[i];
        if (p <= kBceClipEps || p >= 1.0f - kBceClipEps) continue;  // clipped: flat
        phat.grad()[i] += g * (p - yin.data()[i]) / (p * (1.0f - p));
      }
    });
  return out;
}

// Soft Jaccard: mean over elements of y*yhat / (y + yhat - y*yhat + eps).
// Symmetric in its arguments and differentiable in yhat.
inline Tensor soft_jaccard(const Tensor& y, const Tensor& yhat, Tape* tape = nullptr) {
  check(y.shape() == yhat.shape(), "soft_jaccard: shape mismatch ", y.shape().str(),
        " vs ", yhat.shape().str());
  const std::int64_t m = y.numel();
  check(m > 0, "soft_jaccard: empty tensors");
  double s = 0.0;
  for (std::int64_t i = 0; i < m; ++i) {
    const double t = y.data()[i], p = yhat.data()[i];
    s += t * p / (t + p - t * p + kJaccardEps);
  }
  Tensor out = Tensor::scalar(float(s / double(m)));
  if (!std::isfinite(out.item())) fail("soft_jaccard: non-finite value");

  Tensor yin = y, phat = yhat;
  detail::prepare_node(tape, out, {&yin, &phat});
  if (tape)
    tape->record([yin, phat, out, m]() mutable {
      const float g = out.grad()[0] / float(m);
      for (std::int64_t i = 0; i < m; ++i) {
        const float t = yin.data()[i], p = phat.data()[i];
        const float den = t + p - t * p + kJaccardEps;
        if (phat.has_grad()) phat.grad()[i] += g * (t * den - t * p * (1.0f - t)) / (den * den);
        if (yin.has_grad()) yin.grad()[i] += g * (p * den - t * p * (1.0f - p)) / (den * den);
      }
    });
  return out;
}

// Joint loss L = H - log(J). H is cross entropy, J the soft Jaccard; J is
// clamped from below so L stays finite even for an all-background batch.
struct LossBreakdown {
  float h = 0.0f;
  float j = 0.0f;
  float l = 0.0f;
  Tensor loss;  // scalar, connected to the tape
};

inline LossBreakdown joint_loss(const Tensor& y, const Tensor& yhat, Tape* tape = nullptr) {
  LossBreakdown out;
  Tensor ht = bce(y, yhat, tape);
  Tensor jt = soft_jaccard(y, yhat, tape);
  out.loss = sub(ht, log_op(clamp_min(jt, kJaccardEps, tape), tape), tape);
  out.h = ht.item();
  out.j = jt.item();
  out.l = out.loss.item();
  if (!std::isfinite(out.l)) fail("joint_loss: non-finite loss");
  return out;
}

}  // namespace segstack
