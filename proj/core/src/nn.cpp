#include "mgev/nn.hpp"

#include <cmath>

namespace mgev {

template <typename T>
TensorT<T> randn_tensor(Rng& rng, Shape shape, double stddev, bool requires_grad) {
  TensorT<T> t = TensorT<T>::zeros(std::move(shape), requires_grad);
  if (stddev > 0.0)
    for (auto& v : t.values()) v = static_cast<T>(rng.normal(0.0, stddev));
  return t;
}

template <typename T>
Conv2d<T>::Conv2d(Rng& rng, int64_t in_ch, int64_t out_ch, int k, int stride_, int pad_,
                  double scale)
    : stride(stride_), pad(pad_ < 0 ? k / 2 : pad_) {
  double std = scale * std::sqrt(2.0 / (static_cast<double>(in_ch) * k * k));
  w = randn_tensor<T>(rng, Shape{out_ch, in_ch, k, k}, std);
  b = TensorT<T>::zeros(Shape{out_ch}, true);
}

template <typename T>
Conv3d<T>::Conv3d(Rng& rng, int64_t in_ch, int64_t out_ch, int k, int stride_, int pad_,
                  double scale)
    : stride(stride_), pad(pad_ < 0 ? k / 2 : pad_) {
  double std = scale * std::sqrt(2.0 / (static_cast<double>(in_ch) * k * k * k));
  w = randn_tensor<T>(rng, Shape{out_ch, in_ch, k, k, k}, std);
  b = TensorT<T>::zeros(Shape{out_ch}, true);
}

template <typename T>
ConvTranspose3d<T>::ConvTranspose3d(Rng& rng, int64_t in_ch, int64_t out_ch, int k,
                                    int stride_, int pad_)
    : stride(stride_), pad(pad_) {
  double std = std::sqrt(2.0 / (static_cast<double>(in_ch) * k * k * k));
  w = randn_tensor<T>(rng, Shape{in_ch, out_ch, k, k, k}, std);
  b = TensorT<T>::zeros(Shape{out_ch}, true);
}

template <typename T>
InstanceNorm2d<T>::InstanceNorm2d(int64_t ch) {
  gamma = TensorT<T>::full(Shape{ch, 1, 1}, T(1), true);
  beta = TensorT<T>::zeros(Shape{ch, 1, 1}, true);
}

template <typename T>
TensorT<T> InstanceNorm2d<T>::operator()(const TensorT<T>& x) const {
  TensorT<T> mu = mean_axes(x, {1, 2});
  TensorT<T> xc = sub(x, mu);
  TensorT<T> var = mean_axes(mul(xc, xc), {1, 2});
  TensorT<T> norm = div(xc, vsqrt(add_scalar(var, eps)));
  return add(mul(norm, gamma), beta);
}

template <typename T>
ResidualBlock2d<T>::ResidualBlock2d(Rng& rng, int64_t ch)
    : c1(rng, ch, ch, 3), c2(rng, ch, ch, 3) {}

template <typename T>
TensorT<T> ResidualBlock2d<T>::operator()(const TensorT<T>& x) const {
  return relu(add(c2(relu(c1(x))), x));
}

#define MGEV_INSTANTIATE(T)                                                       \
  template TensorT<T> randn_tensor<T>(Rng&, Shape, double, bool);                 \
  template struct Conv2d<T>;                                                      \
  template struct Conv3d<T>;                                                      \
  template struct ConvTranspose3d<T>;                                             \
  template struct InstanceNorm2d<T>;                                              \
  template struct ResidualBlock2d<T>;

MGEV_INSTANTIATE(float)
MGEV_INSTANTIATE(double)

#undef MGEV_INSTANTIATE

}  // namespace mgev
