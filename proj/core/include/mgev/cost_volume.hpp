// Raw matching-cost volumes: group-wise correlation for the fine range,
// adaptive patch matching for the coarser ranges, and the all-pairs
// correlation volume used by the per-iteration lookup.
#pragma once

#include "mgev/features.hpp"
#include "mgev/tensor.hpp"

namespace mgev {

// Maximum disparities in full-resolution px. At quarter resolution the three
// volumes hold d/4, d/8 and d/16 bins (bin strides 1, 2, 4 quarter-px).
struct RangeSpec {
  int d_s = 192;
  int d_m = 384;
  int d_l = 768;
  int n_groups = 8;

  int bins_s() const { return d_s / 4; }
  int bins_m() const { return d_m / 8; }
  int bins_l() const { return d_l / 16; }
  void validate(bool single_range) const;
};

template <typename T>
struct CorrelationVolumeSet {
  TensorT<T> c_s;              // [G, bins_s, H, W]
  TensorT<T> c_m, c_l;         // undefined in single-range configs
  std::vector<TensorT<T>> apc; // [W', H, W] with W' = W, W/2, W/4
};

// out[g,d,y,x] = (G/C) * <fl_g(x,y), fr_g(x-d,y)>, zero where x < d
template <typename T>
TensorT<T> group_correlation(const TensorT<T>& f_l, const TensorT<T>& f_r, int n_bins,
                             int groups);

// out[g,k,y,x] = (G/C) * sum_i w[g,i] * <fl_g(x,y), fr_g(x-(k*stride+i),y)>
// stride must equal patch; out-of-range terms contribute zero.
template <typename T>
TensorT<T> adaptive_patch_correlation(const TensorT<T>& f_l, const TensorT<T>& f_r,
                                      int n_bins, int stride, int patch,
                                      const TensorT<T>& patch_weights);

// level 0: [W,H,W] with out[x',y,x] = <fl(x,y), fr(x',y)> / C, then two
// 2x-pooled levels along the x' axis.
template <typename T>
std::vector<TensorT<T>> all_pairs_correlation(const TensorT<T>& f_l, const TensorT<T>& f_r,
                                              int levels = 3);

template <typename T>
CorrelationVolumeSet<T> build_volumes(const FeaturePyramid<T>& pyr_l,
                                      const FeaturePyramid<T>& pyr_r, const RangeSpec& spec,
                                      const TensorT<T>& omega_m, const TensorT<T>& omega_l,
                                      bool single_range);

}  // namespace mgev
