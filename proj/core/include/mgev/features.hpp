// Multi-scale feature extraction for matching and aggregation guidance, and
// context extraction for recurrent-update hidden state initialization.
#pragma once

#include <array>

#include "mgev/nn.hpp"

namespace mgev {

// f_i lives at 1/i resolution with channels[i] channels
template <typename T>
struct FeaturePyramid {
  TensorT<T> f2, f4, f8, f16, f32;
};

template <typename T>
struct ContextLevel {
  TensorT<T> h0, cz, cr, ch;  // all hidden-channel maps at this level
};

// levels[0] = 1/4, levels[1] = 1/8, levels[2] = 1/16
template <typename T>
struct ContextSet {
  std::vector<ContextLevel<T>> levels;
};

struct FeatureNetConfig {
  std::array<int, 5> enc = {32, 48, 64, 96, 128};  // 1/2 .. 1/32 encoder widths
  int out2 = 32, out4 = 96, out8 = 64, out16 = 192, out32 = 160;
};

struct ContextNetConfig {
  int trunk = 128;
  int hidden = 128;
  int levels = 3;
};

template <typename T>
class FeatureNet {
 public:
  FeatureNet() = default;
  FeatureNet(Rng& rng, const FeatureNetConfig& cfg);

  // image: [3,H,W], H and W divisible by 32
  FeaturePyramid<T> operator()(const TensorT<T>& image) const;

  void params(const std::string& prefix, ParamList<T>& out) const;
  const FeatureNetConfig& config() const { return cfg_; }

 private:
  FeatureNetConfig cfg_;
  Conv2d<T> stem_;
  InstanceNorm2d<T> stem_norm_;
  std::array<Conv2d<T>, 4> down_, refine_;
  std::array<InstanceNorm2d<T>, 4> down_norm_, refine_norm_;
  Conv2d<T> proj32_;
  std::array<Conv2d<T>, 4> dec_;  // to 1/16, 1/8, 1/4, 1/2
  std::array<InstanceNorm2d<T>, 4> dec_norm_;
};

template <typename T>
class ContextNet {
 public:
  ContextNet() = default;
  ContextNet(Rng& rng, const ContextNetConfig& cfg);

  ContextSet<T> operator()(const TensorT<T>& image) const;

  void params(const std::string& prefix, ParamList<T>& out) const;
  const ContextNetConfig& config() const { return cfg_; }

 private:
  ContextNetConfig cfg_;
  Conv2d<T> stem1_, stem2_;
  std::vector<Conv2d<T>> down_;            // levels-1 stride-2 convs
  std::vector<ResidualBlock2d<T>> res_;    // one per level
  std::vector<std::array<Conv2d<T>, 4>> heads_;  // h0, cz, cr, ch per level
};

}  // namespace mgev
