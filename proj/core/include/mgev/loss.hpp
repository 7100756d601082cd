// Training objective: weighted smooth-L1 on the initial regressions plus an
// exponentially weighted L1 over the iteration history.
#pragma once

#include "mgev/regularization.hpp"

namespace mgev {

struct LossConfig {
  double lambda_s = 1.0;
  double lambda_m = 0.5;
  double lambda_l = 0.2;
  double gamma = 0.9;
  double max_disp = 768.0;  // valid pixels: finite GT with 0 <= GT < max_disp
};

// 0/1 constant mask per the config rule
template <typename T>
TensorT<T> valid_mask(const TensorT<T>& gt, double max_disp);

// stride-4 subsampling; values stay in full-resolution px
template <typename T>
TensorT<T> downsample_quarter(const TensorT<T>& full);

// masked means; an all-zero mask is rejected
template <typename T>
TensorT<T> smooth_l1_loss(const TensorT<T>& pred, const TensorT<T>& gt, const TensorT<T>& mask);
template <typename T>
TensorT<T> l1_loss(const TensorT<T>& pred, const TensorT<T>& gt, const TensorT<T>& mask);

// lambda_s * L(d0_s) [+ lambda_m * L(d0_m) + lambda_l * L(d0_l)] at quarter
// resolution against stride-4-sampled GT
template <typename T>
TensorT<T> reg_loss(const GeometrySet<T>& geo, const TensorT<T>& gt_q, const TensorT<T>& mask_q,
                    const LossConfig& cfg);

// sum_i gamma^(N-i) * L1(upsampled_i, gt); the last iterate has weight 1
template <typename T>
TensorT<T> iter_loss(const std::vector<TensorT<T>>& upsampled, const TensorT<T>& gt,
                     const TensorT<T>& mask, double gamma);

template <typename T>
TensorT<T> total_loss(const TensorT<T>& reg, const TensorT<T>& iter);

}  // namespace mgev
