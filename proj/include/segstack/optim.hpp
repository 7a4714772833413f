#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "segstack/tensor.hpp"

namespace segstack {

// Ordered (epoch_count, learning_rate) phases, e.g. {{50, 1e-3}, {50, 1e-4}}.
struct LrSchedule {
  std::vector<std::pair<int, float>> phases;

  void validate() const {
    check(!phases.empty(), "LrSchedule: empty schedule");
    for (const auto& [n, lr] : phases) {
      check(n > 0, "LrSchedule: phase epoch count must be positive");
      check(lr > 0.0f, "LrSchedule: learning rate must be positive");
    }
  }

  int total_epochs() const {
    int t = 0;
    for (const auto& [n, lr] : phases) t += n;
    return t;
  }

  // Rate of the phase containing `epoch` (0-based); empty once the schedule
  // is exhausted, signalling training complete.
  std::optional<float> lr_for_epoch(int epoch) const {
    check(epoch >= 0, "lr_for_epoch: negative epoch");
    int start = 0;
    for (const auto& [n, lr] : phases) {
      if (epoch < start + n) return lr;
      start += n;
    }
    return std::nullopt;
  }
};

struct NadamConfig {
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  float schedule_decay = 0.004f;
};

// Nadam: Adam with Nesterov momentum and the 0.96-power momentum schedule.
// First/second moments are kept per parameter, zero-initialized.
class NadamState {
 public:
  NadamState() = default;

  explicit NadamState(const std::vector<Parameter*>& params, NadamConfig cfg = {})
      : cfg_(cfg) {
    for (const Parameter* p : params) moments_.emplace_back(Tensor(p->tensor.shape()),
                                                            Tensor(p->tensor.shape()));
  }

  const NadamConfig& config() const { return cfg_; }
  long step_count() const { return t_; }

  Tensor& first_moment(std::size_t i) { return moments_[i].first; }
  Tensor& second_moment(std::size_t i) { return moments_[i].second; }
  std::size_t size() const { return moments_.size(); }

  // Restores the step counter (after loading m/v from a checkpoint) and
  // replays the momentum-schedule product up to step t.
  void restore_step(long t) {
    t_ = t;
    mu_product_ = 1.0;
    for (long i = 1; i <= t; ++i) mu_product_ *= mu(i);
  }

  double mu(long step) const {
    return double(cfg_.beta1) * (1.0 - 0.5 * std::pow(0.96, double(step) * cfg_.schedule_decay));
  }

  // One optimizer step. Aborts (throws, no mutation) on a non-finite gradient.
  void step(const std::vector<Parameter*>& params, float lr) {
    check(params.size() == moments_.size(), "nadam_step: parameter count changed (",
          params.size(), " vs state ", moments_.size(), ")");
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor& t = params[i]->tensor;
      check(t.shape() == moments_[i].first.shape(), "nadam_step: shape mismatch for ",
            params[i]->name);
      check(t.has_grad(), "nadam_step: missing gradient for ", params[i]->name);
      const float* g = t.grad();
      for (std::int64_t j = 0; j < t.numel(); ++j)
        if (!std::isfinite(g[j]))
          fail("nadam_step: non-finite gradient in ", params[i]->name, " (step aborted)");
    }

    const long step_t = t_ + 1;
    const double mu_t = mu(step_t);
    const double mu_next = mu(step_t + 1);
    const double mu_prod = mu_product_ * mu_t;
    const double mu_prod_next = mu_prod * mu_next;
    const double g_corr = 1.0 / (1.0 - mu_prod);
    const double m_corr = 1.0 / (1.0 - mu_prod_next);
    const double v_corr = 1.0 / (1.0 - std::pow(double(cfg_.beta2), double(step_t)));

    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor& t = params[i]->tensor;
      float* p = t.data();
      const float* g = t.grad();
      float* m = moments_[i].first.data();
      float* v = moments_[i].second.data();
      const float b1 = cfg_.beta1, b2 = cfg_.beta2;
      for (std::int64_t j = 0; j < t.numel(); ++j) {
        m[j] = b1 * m[j] + (1.0f - b1) * g[j];
        v[j] = b2 * v[j] + (1.0f - b2) * g[j] * g[j];
        const double g_hat = double(g[j]) * g_corr;
        const double m_hat = double(m[j]) * m_corr;
        const double v_hat = double(v[j]) * v_corr;
        const double m_bar = (1.0 - mu_t) * g_hat + mu_next * m_hat;
        p[j] = float(double(p[j]) - double(lr) * m_bar / (std::sqrt(v_hat) + double(cfg_.eps)));
      }
    }
    t_ = step_t;
    mu_product_ = mu_prod;
  }

 private:
  NadamConfig cfg_;
  std::vector<std::pair<Tensor, Tensor>> moments_;  // (m, v) per parameter
  long t_ = 0;
  double mu_product_ = 1.0;
};

inline void zero_grads(const std::vector<Parameter*>& params) {
  for (Parameter* p : params) {
    p->tensor.ensure_grad();
    p->tensor.zero_grad();
  }
}

}  // namespace segstack
