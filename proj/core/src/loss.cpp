#include "mgev/loss.hpp"

#include <cmath>

namespace mgev {

template <typename T>
TensorT<T> valid_mask(const TensorT<T>& gt, double max_disp) {
  TensorT<T> m = TensorT<T>::zeros(gt.shape());
  for (int64_t i = 0; i < gt.numel(); ++i) {
    T v = gt.data()[i];
    m.data()[i] = std::isfinite(static_cast<double>(v)) && v >= T(0) &&
                          static_cast<double>(v) < max_disp
                      ? T(1)
                      : T(0);
  }
  return m;
}

template <typename T>
TensorT<T> downsample_quarter(const TensorT<T>& full) {
  if (full.rank() != 2) fail("downsample_quarter: expected [H,W], got ", shape_str(full.shape()));
  int64_t h = full.dim(0), w = full.dim(1);
  if (h % 4 || w % 4) fail("downsample_quarter: dims must be divisible by 4, got ", h, "x", w);
  TensorT<T> q = TensorT<T>::zeros(Shape{h / 4, w / 4});
  for (int64_t y = 0; y < h / 4; ++y)
    for (int64_t x = 0; x < w / 4; ++x)
      q.data()[y * (w / 4) + x] = full.data()[4 * y * w + 4 * x];
  return q;
}

namespace {

template <typename T>
T mask_count(const char* op, const TensorT<T>& mask) {
  T count = T(0);
  for (T v : mask.values()) count += v;
  if (count <= T(0)) fail(op, ": empty valid-pixel mask");
  return count;
}

}  // namespace

template <typename T>
TensorT<T> smooth_l1_loss(const TensorT<T>& pred, const TensorT<T>& gt, const TensorT<T>& mask) {
  if (pred.shape() != gt.shape() || pred.shape() != mask.shape())
    fail("smooth_l1_loss: shape mismatch ", shape_str(pred.shape()), " vs ",
         shape_str(gt.shape()), " vs ", shape_str(mask.shape()));
  T count = mask_count("smooth_l1_loss", mask);
  TensorT<T> per_px = mul(smooth_l1(sub(pred, gt)), mask);
  return mul_scalar(sum(per_px), T(1) / count);
}

template <typename T>
TensorT<T> l1_loss(const TensorT<T>& pred, const TensorT<T>& gt, const TensorT<T>& mask) {
  if (pred.shape() != gt.shape() || pred.shape() != mask.shape())
    fail("l1_loss: shape mismatch ", shape_str(pred.shape()), " vs ", shape_str(gt.shape()),
         " vs ", shape_str(mask.shape()));
  T count = mask_count("l1_loss", mask);
  TensorT<T> per_px = mul(vabs(sub(pred, gt)), mask);
  return mul_scalar(sum(per_px), T(1) / count);
}

template <typename T>
TensorT<T> reg_loss(const GeometrySet<T>& geo, const TensorT<T>& gt_q, const TensorT<T>& mask_q,
                    const LossConfig& cfg) {
  TensorT<T> loss = mul_scalar(smooth_l1_loss(geo.d0_s, gt_q, mask_q),
                               static_cast<T>(cfg.lambda_s));
  if (geo.d0_m.defined())
    loss = add(loss, mul_scalar(smooth_l1_loss(geo.d0_m, gt_q, mask_q),
                                static_cast<T>(cfg.lambda_m)));
  if (geo.d0_l.defined())
    loss = add(loss, mul_scalar(smooth_l1_loss(geo.d0_l, gt_q, mask_q),
                                static_cast<T>(cfg.lambda_l)));
  return loss;
}

template <typename T>
TensorT<T> iter_loss(const std::vector<TensorT<T>>& upsampled, const TensorT<T>& gt,
                     const TensorT<T>& mask, double gamma) {
  if (upsampled.empty()) fail("iter_loss: empty iteration history");
  size_t n = upsampled.size();
  TensorT<T> loss;
  for (size_t i = 0; i < n; ++i) {
    T weight = static_cast<T>(std::pow(gamma, static_cast<double>(n - 1 - i)));
    TensorT<T> term = mul_scalar(l1_loss(upsampled[i], gt, mask), weight);
    loss = i == 0 ? term : add(loss, term);
  }
  return loss;
}

template <typename T>
TensorT<T> total_loss(const TensorT<T>& reg, const TensorT<T>& iter) {
  return add(reg, iter);
}

#define MGEV_INSTANTIATE(T)                                                                \
  template TensorT<T> valid_mask(const TensorT<T>&, double);                              \
  template TensorT<T> downsample_quarter(const TensorT<T>&);                              \
  template TensorT<T> smooth_l1_loss(const TensorT<T>&, const TensorT<T>&,                \
                                     const TensorT<T>&);                                  \
  template TensorT<T> l1_loss(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&);   \
  template TensorT<T> reg_loss(const GeometrySet<T>&, const TensorT<T>&,                  \
                               const TensorT<T>&, const LossConfig&);                     \
  template TensorT<T> iter_loss(const std::vector<TensorT<T>>&, const TensorT<T>&,        \
                                const TensorT<T>&, double);                               \
  template TensorT<T> total_loss(const TensorT<T>&, const TensorT<T>&);

MGEV_INSTANTIATE(float)
MGEV_INSTANTIATE(double)

#undef MGEV_INSTANTIATE

}  // namespace mgev
