#pragma once

#include <map>
#include <string>
#include <vector>

#include "segstack/ops.hpp"

namespace segstack {

// One U-Net. depth = number of pooling stages; encoder stage i outputs
// base_filters * 2^i channels and the decoder mirrors that schedule.
struct UNetConfig {
  int depth = 4;
  int base_filters = 32;
  int in_channels = 3;
  int crop_margin = 16;
  int input_size = 224;

  void validate() const {
    check(depth >= 1, "UNetConfig: depth must be >= 1");
    check(base_filters >= 1, "UNetConfig: base_filters must be >= 1");
    check(in_channels >= 1, "UNetConfig: in_channels must be >= 1");
    check(crop_margin >= 0, "UNetConfig: crop_margin must be >= 0");
    check(input_size % (1 << depth) == 0, "UNetConfig: input_size ", input_size,
          " not divisible by 2^depth = ", 1 << depth);
    check(2 * crop_margin < input_size, "UNetConfig: crop_margin ", crop_margin,
          " too large for input_size ", input_size);
  }

  int output_size() const { return input_size - 2 * crop_margin; }
};

// How stacked levels beyond the first are fed.
enum class StackingInput {
  image_plus_prob,  // concat(image, previous probability map)
  prob_only,
};

struct StackConfig {
  int levels = 1;
  std::vector<UNetConfig> per_level;  // one entry per level
  StackingInput stacking_input = StackingInput::image_plus_prob;

  void validate() const {
    check(levels >= 1, "StackConfig: levels must be >= 1");
    check(int(per_level.size()) == levels, "StackConfig: per_level size ",
          per_level.size(), " != levels ", levels);
    for (int k = 0; k < levels; ++k) {
      per_level[k].validate();
      check(per_level[k].input_size == per_level[0].input_size &&
                per_level[k].crop_margin == per_level[0].crop_margin,
            "StackConfig: all levels must share input_size and crop_margin");
      if (k > 0) {
        const int want = stacking_input == StackingInput::image_plus_prob
                             ? per_level[0].in_channels + 1
                             : 1;
        check(per_level[k].in_channels == want, "StackConfig: level ", k,
              " in_channels must be ", want, " for the chosen stacking input");
      }
    }
  }

  // Uniform stack: every level uses `base`, with level k > 0 channel counts
  // adjusted to the stacking input.
  static StackConfig uniform(int levels, UNetConfig base, StackingInput si) {
    StackConfig cfg;
    cfg.levels = levels;
    cfg.stacking_input = si;
    for (int k = 0; k < levels; ++k) {
      UNetConfig c = base;
      if (k > 0)
        c.in_channels = si == StackingInput::image_plus_prob ? base.in_channels + 1 : 1;
      cfg.per_level.push_back(c);
    }
    return cfg;
  }
};

namespace nn {

struct Conv3x3 {
  Parameter weight, bias;

  Conv3x3() = default;
  Conv3x3(const std::string& name, int c_in, int c_out, Rng& rng)
      : weight(name + "/weight", he_uniform_init({c_out, c_in, 3, 3}, c_in * 9, rng)),
        bias(name + "/bias", Tensor({1, c_out, 1, 1})) {}

  Tensor operator()(const Tensor& x, Tape* tape) { return conv2d(x, weight, bias, tape); }
};

struct BatchNorm {
  Parameter gamma, beta;
  BatchNormState state;

  BatchNorm() = default;
  BatchNorm(const std::string& name, int channels, Rng&)
      : gamma(name + "/gamma", Tensor::full({1, channels, 1, 1}, 1.0f)),
        beta(name + "/beta", Tensor({1, channels, 1, 1})),
        state(channels) {}

  Tensor operator()(const Tensor& x, Mode mode, Tape* tape) {
    return batchnorm(x, gamma, beta, state, mode, tape);
  }
};

// conv -> BN -> ReLU, twice.
struct ConvBlock {
  Conv3x3 conv1, conv2;
  BatchNorm bn1, bn2;
  int out_channels = 0;

  ConvBlock() = default;
  ConvBlock(const std::string& name, int c_in, int c_out, Rng& rng)
      : conv1(name + "/conv1", c_in, c_out, rng),
        conv2(name + "/conv2", c_out, c_out, rng),
        bn1(name + "/bn1", c_out, rng),
        bn2(name + "/bn2", c_out, rng),
        out_channels(c_out) {}

  Tensor operator()(const Tensor& x, Mode mode, Tape* tape) {
    Tensor h = relu(bn1(conv1(x, tape), mode, tape), tape);
    return relu(bn2(conv2(h, tape), mode, tape), tape);
  }
};

}  // namespace nn

// A built U-Net: encoder blocks with 2x2 pooling, a bottleneck block, decoder
// blocks fed by replicate-upsampling plus skip concatenation, and a 1-channel
// conv head followed by sigmoid and a fixed center crop.
class UNet {
 public:
  UNet() = default;

  UNet(UNetConfig cfg, Rng& rng, const std::string& prefix = "") : cfg_(cfg) {
    cfg.validate();
    int ch = cfg.in_channels;
    for (int i = 0; i < cfg.depth; ++i) {
      const int out = cfg.base_filters << i;
      encoder_.emplace_back(prefix + "enc" + std::to_string(i), ch, out, rng);
      ch = out;
    }
    bottleneck_ = nn::ConvBlock(prefix + "bottleneck", ch, cfg.base_filters << cfg.depth, rng);
    ch = cfg.base_filters << cfg.depth;
    for (int i = cfg.depth - 1; i >= 0; --i) {
      const int skip = cfg.base_filters << i;
      decoder_.emplace_back(prefix + "dec" + std::to_string(i), skip + ch, skip, rng);
      ch = skip;
    }
    head_ = nn::Conv3x3(prefix + "head", ch, 1, rng);
    register_members();
  }

  UNet(const UNet&) = delete;
  UNet& operator=(const UNet&) = delete;
  UNet(UNet&& other) noexcept { *this = std::move(other); }
  UNet& operator=(UNet&& other) noexcept {
    cfg_ = other.cfg_;
    encoder_ = std::move(other.encoder_);
    bottleneck_ = std::move(other.bottleneck_);
    decoder_ = std::move(other.decoder_);
    head_ = std::move(other.head_);
    params_.clear();
    buffers_.clear();
    register_members();
    return *this;
  }

  const UNetConfig& config() const { return cfg_; }

  // batch: (N, in_channels, input_size, input_size) ->
  // (N, 1, input_size - 2*margin, input_size - 2*margin), values in (0, 1).
  Tensor forward(const Tensor& batch, Mode mode, Tape* tape = nullptr) {
    const Shape4 s = batch.shape();
    check(s.c == cfg_.in_channels && s.h == cfg_.input_size && s.w == cfg_.input_size,
          "forward: batch ", s.str(), " does not match config (C=", cfg_.in_channels,
          ", S=", cfg_.input_size, ")");
    std::vector<Tensor> skips;
    Tensor h = batch;
    for (auto& block : encoder_) {
      h = block(h, mode, tape);
      skips.push_back(h);
      h = maxpool2x2(h, tape);
    }
    h = bottleneck_(h, mode, tape);
    for (int i = 0; i < cfg_.depth; ++i) {
      h = upsample2x_replicate(h, tape);
      h = concat_channels(skips[cfg_.depth - 1 - i], h, tape);
      h = decoder_[i](h, mode, tape);
    }
    h = sigmoid(head_(h, tape), tape);
    return crop_center(h, cfg_.crop_margin, tape);
  }

  std::vector<Parameter*>& parameters() { return params_; }

  // Trainable parameters plus batch-norm running statistics, in construction
  // order; this is the checkpoint record list.
  struct NamedTensor {
    std::string name;
    Tensor* tensor;
  };
  const std::vector<NamedTensor>& state_tensors() const { return buffers_; }

  std::int64_t parameter_count() const {
    std::int64_t total = 0;
    for (const Parameter* p : params_) total += p->tensor.numel();
    return total;
  }

  Tensor* find_tensor(const std::string& name) {
    for (auto& nt : buffers_)
      if (nt.name == name) return nt.tensor;
    return nullptr;
  }

  int encoder_out_channels(int stage) const { return encoder_.at(stage).out_channels; }
  int decoder_out_channels(int stage_from_bottom) const {
    return decoder_.at(decoder_.size() - 1 - stage_from_bottom).out_channels;
  }
  int bottleneck_channels() const { return bottleneck_.out_channels; }

  // All batch-norm layers have seen at least one training batch.
  bool bn_ready() const {
    bool ok = true;
    const_cast<UNet*>(this)->for_each_bn([&](nn::BatchNorm& bn) { ok = ok && bn.state.ready; });
    return ok;
  }

  // Marks running stats as populated; used when parameters are constructed
  // by hand rather than trained.
  void force_bn_ready() {
    for_each_bn([](nn::BatchNorm& bn) { bn.state.ready = true; });
  }

  template <typename Fn>
  void for_each_bn(Fn fn) {
    for (auto& b : encoder_) {
      fn(b.bn1);
      fn(b.bn2);
    }
    fn(bottleneck_.bn1);
    fn(bottleneck_.bn2);
    for (auto& b : decoder_) {
      fn(b.bn1);
      fn(b.bn2);
    }
  }

 private:
  void register_members() {
    auto reg_param = [this](Parameter& p) {
      params_.push_back(&p);
      buffers_.push_back({p.name, &p.tensor});
    };
    auto reg_block = [&](nn::ConvBlock& b) {
      reg_param(b.conv1.weight);
      reg_param(b.conv1.bias);
      reg_param(b.bn1.gamma);
      reg_param(b.bn1.beta);
      buffers_.push_back({b.bn1.gamma.name.substr(0, b.bn1.gamma.name.rfind('/')) + "/running_mean",
                          &b.bn1.state.running_mean});
      buffers_.push_back({b.bn1.gamma.name.substr(0, b.bn1.gamma.name.rfind('/')) + "/running_var",
                          &b.bn1.state.running_var});
      reg_param(b.conv2.weight);
      reg_param(b.conv2.bias);
      reg_param(b.bn2.gamma);
      reg_param(b.bn2.beta);
      buffers_.push_back({b.bn2.gamma.name.substr(0, b.bn2.gamma.name.rfind('/')) + "/running_mean",
                          &b.bn2.state.running_mean});
      buffers_.push_back({b.bn2.gamma.name.substr(0, b.bn2.gamma.name.rfind('/')) + "/running_var",
                          &b.bn2.state.running_var});
    };
    for (auto& b : encoder_) reg_block(b);
    reg_block(bottleneck_);
    for (auto& b : decoder_) reg_block(b);
    reg_param(head_.weight);
    reg_param(head_.bias);
  }

  UNetConfig cfg_;
  std::vector<nn::ConvBlock> encoder_;
  nn::ConvBlock bottleneck_;
  std::vector<nn::ConvBlock> decoder_;  // ordered bottom-up (deepest first)
  nn::Conv3x3 head_;
  std::vector<Parameter*> params_;
  std::vector<NamedTensor> buffers_;
};

// N U-Nets arranged end to end; level k >= 1 consumes the previous level's
// probability map (zero-padded back to input size to undo the crop), either
// alone or concatenated after the image.
class StackedModel {
 public:
  StackedModel() = default;

  StackedModel(StackConfig cfg, Rng& rng) : cfg_(cfg) {
    cfg.validate();
    levels_.reserve(cfg.levels);
    for (int k = 0; k < cfg.levels; ++k)
      levels_.emplace_back(cfg.per_level[k], rng, "level" + std::to_string(k) + "/");
  }

  const StackConfig& config() const { return cfg_; }
  int levels() const { return int(levels_.size()); }
  UNet& level(int k) { return levels_.at(k); }
  const UNet& level(int k) const { return levels_.at(k); }

  // Probability map of `upto_level`. Levels before it always run in eval
  // mode without recording, so training a later level leaves them frozen.
  Tensor forward(const Tensor& batch, int upto_level, Mode mode, Tape* tape = nullptr) {
    check(upto_level >= 0 && upto_level < levels(), "stack_forward: level ", upto_level,
          " out of range [0,", levels(), ")");
    Tensor prob = levels_[0].forward(batch, upto_level == 0 ? mode : Mode::eval,
                                     upto_level == 0 ? tape : nullptr);
    for (int k = 1; k <= upto_level; ++k) {
      const Mode m = k == upto_level ? mode : Mode::eval;
      Tape* t = k == upto_level ? tape : nullptr;
      Tensor padded = pad_zero(prob, cfg_.per_level[0].crop_margin, t);
      Tensor input = cfg_.stacking_input == StackingInput::image_plus_prob
                         ? concat_channels(batch, padded, t)
                         : padded;
      prob = levels_[k].forward(input, m, t);
    }
    return prob;
  }

  std::int64_t parameter_count() const {
    std::int64_t total = 0;
    for (const auto& l : levels_) total += l.parameter_count();
    return total;
  }

 private:
  StackConfig cfg_;
  std::vector<UNet> levels_;
};

}  // namespace segstack
