// Iterative refinement: geometry lookup, selective fusion of the per-range
// lookups, ConvGRU hidden-state updates, disparity residuals, and convex
// upsampling to full resolution.
//
// The iteration state d is kept in quarter-resolution px on the quarter grid;
// upsampling scales values by 4 to full-resolution px.
#pragma once

#include "mgev/features.hpp"
#include "mgev/regularization.hpp"

namespace mgev {

struct LookupConfig {
  int radius = 4;
  int apc_levels = 3;
};

template <typename T>
struct GeometryLookup {
  TensorT<T> f_s, f_m, f_l;  // [(2r+1),H,W]; f_m/f_l undefined in single-range configs
  TensorT<T> f_apc;          // [apc_levels*(2r+1),H,W]
};

// Samples each volume along its bin axis at the current disparity: G^s at bin
// d, G^m at d/2, G^l at d/4, and the all-pairs pyramid at right-x = x - d.
template <typename T>
GeometryLookup<T> lookup_geometry(const GeometrySet<T>& geo,
                                  const std::vector<TensorT<T>>& apc, const TensorT<T>& d,
                                  const LookupConfig& cfg);

template <typename T>
struct DisparityField {
  std::vector<TensorT<T>> history;       // d_1..d_N, [H/4,W/4] quarter-px
  std::vector<TensorT<T>> history_full;  // upsampled per iteration when requested
  TensorT<T> final_full;                 // [H,W] full-resolution px
};

struct UpdateConfig {
  int hidden = 128;
  int levels = 3;  // ConvGRU levels at 1/4, 1/8, 1/16
  LookupConfig lookup;
  int enc_g = 96;
  int enc_d = 64;
  int sgff = 64;
  int ups_mid = 32;
  int ups_half = 64;
  bool single_range = false;
  int c4 = 96, c2 = 32;  // guide feature channels consumed by SGFF / upsampling
};

// Convolutional gated recurrent update; the gate weights are plain convolutions, the per-level
// context maps act as gate biases.
template <typename T>
struct GruCell {
  Conv2d<T> wz, wr, wh;

  GruCell() = default;
  GruCell(Rng& rng, int hidden, int input_ch);

  TensorT<T> operator()(const TensorT<T>& h, const TensorT<T>& x,
                        const ContextLevel<T>& ctx) const;
  void params(const std::string& prefix, ParamList<T>& out) const;
};

template <typename T>
class SelectiveFusion {
 public:
  SelectiveFusion() = default;
  SelectiveFusion(Rng& rng, int c4, int mid);

  // sigmoid selection weights [3,H,W] from the initial disparities and f_l4
  TensorT<T> weights(const TensorT<T>& d0s, const TensorT<T>& d0m, const TensorT<T>& d0l,
                     const TensorT<T>& f4) const;
  // s_s*f_s + s_m*f_m + s_l*f_l with per-range scalar weights broadcast over
  // the lookup channels; exposed separately so tests can inject weights
  static TensorT<T> blend(const TensorT<T>& s, const TensorT<T>& f_s, const TensorT<T>& f_m,
                          const TensorT<T>& f_l);

  void params(const std::string& prefix, ParamList<T>& out) const;

 private:
  Conv2d<T> conv_d_, conv_s_;
};

template <typename T>
class UpdateBlock {
 public:
  UpdateBlock() = default;
  UpdateBlock(Rng& rng, const UpdateConfig& cfg);

  // runs N iterations from the d0_s seed; upsamples every iterate when
  // upsample_each (training), otherwise only the final one
  DisparityField<T> iterate(const GeometrySet<T>& geo, const std::vector<TensorT<T>>& apc,
                            const ContextSet<T>& ctx, const FeaturePyramid<T>& pyr_l,
                            int iters, bool upsample_each) const;

  TensorT<T> upsample(const TensorT<T>& d, const TensorT<T>& h4, const TensorT<T>& f2) const;

  void params(const std::string& prefix, ParamList<T>& out) const;
  const UpdateConfig& config() const { return cfg_; }

 private:
  UpdateConfig cfg_;
  SelectiveFusion<T> sgff_;
  Conv2d<T> enc_g1_, enc_g2_, enc_d1_, enc_d2_;
  std::vector<GruCell<T>> cells_;
  Conv2d<T> dd1_, dd2_;
  Conv2d<T> ups1_, ups2_, ups3_;
};

}  // namespace mgev
