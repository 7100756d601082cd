// 3D regularization of the raw cost volumes into geometry encoding volumes,
// plus initial disparity regression.
#pragma once

#include "mgev/cost_volume.hpp"

namespace mgev {

template <typename T>
struct GeometrySet {
  TensorT<T> g_s, g_m, g_l;     // [bins,H,W] at quarter resolution
  TensorT<T> d0_s, d0_m, d0_l;  // [H,W], full-resolution px units
};

// sigmoid(guide) ⊙ volume, guide broadcast along the bin axis
// volume: [ch,D,H,W], guide_logits: [ch,H,W]
template <typename T>
TensorT<T> excite(const TensorT<T>& volume, const TensorT<T>& guide_logits);

// per-pixel expectation sum_d (bin_stride*d) * softmax(g)_d, in the volume's
// quarter-resolution px units; g: [D,H,W] -> [H,W]
template <typename T>
TensorT<T> soft_argmin(const TensorT<T>& g, int bin_stride);

struct GuideChannels {
  int c4 = 96, c8 = 64, c16 = 192, c32 = 160;
};

// Lightweight 3D UNet over (bin, y, x): three stride-2 down blocks of two
// 3x3x3 convs (16/32/48 channels), three up blocks of a 4x4x4 transposed conv
// plus two 3x3x3 convs with skip connections, guided excitation at all four
// scales, final single-channel projection.
template <typename T>
class RegularizerUNet {
 public:
  RegularizerUNet() = default;
  RegularizerUNet(Rng& rng, int in_groups, const GuideChannels& guide);

  // c: [G,D,H,W] with D,H,W divisible by 8; returns [D,H,W]
  TensorT<T> operator()(const TensorT<T>& c, const FeaturePyramid<T>& guide) const;

  void params(const std::string& prefix, ParamList<T>& out) const;

 private:
  int groups_ = 8;
  Conv2d<T> proj4_, proj8_, proj16_, proj32_;
  Conv3d<T> d1a_, d1b_, d2a_, d2b_, d3a_, d3b_;
  ConvTranspose3d<T> u1_, u2_, u3_;
  Conv3d<T> u1a_, u1b_, u2a_, u2b_, u3a_, u3b_;
  Conv3d<T> final_;
};

// One independent UNet per active range.
template <typename T>
class Regularizer {
 public:
  Regularizer() = default;
  Regularizer(Rng& rng, const RangeSpec& spec, const GuideChannels& guide, bool single_range);

  GeometrySet<T> operator()(const CorrelationVolumeSet<T>& vols,
                            const FeaturePyramid<T>& guide) const;

  void params(const std::string& prefix, ParamList<T>& out) const;

 private:
  bool single_range_ = false;
  RegularizerUNet<T> r_s_, r_m_, r_l_;
};

}  // namespace mgev
