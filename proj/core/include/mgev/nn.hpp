// Parameterized building blocks over the tensor ops.
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mgev/random.hpp"
#include "mgev/tensor.hpp"

namespace mgev {

template <typename T>
using ParamList = std::vector<std::pair<std::string, TensorT<T>>>;

template <typename T>
TensorT<T> randn_tensor(Rng& rng, Shape shape, double stddev, bool requires_grad = true);

template <typename T>
struct Conv2d {
  TensorT<T> w, b;
  int stride = 1, pad = 0;

  Conv2d() = default;
  // scale multiplies the Kaiming stddev; scale 0 gives an exactly-zero layer
  Conv2d(Rng& rng, int64_t in_ch, int64_t out_ch, int k, int stride_ = 1, int pad_ = -1,
         double scale = 1.0);

  TensorT<T> operator()(const TensorT<T>& x) const { return conv2d(x, w, b, stride, pad); }
  void params(const std::string& prefix, ParamList<T>& out) const {
    out.emplace_back(prefix + ".w", w);
    out.emplace_back(prefix + ".b", b);
  }
};

template <typename T>
struct Conv3d {
  TensorT<T> w, b;
  int stride = 1, pad = 0;

  Conv3d() = default;
  Conv3d(Rng& rng, int64_t in_ch, int64_t out_ch, int k, int stride_ = 1, int pad_ = -1,
         double scale = 1.0);

  TensorT<T> operator()(const TensorT<T>& x) const { return conv3d(x, w, b, stride, pad); }
  void params(const std::string& prefix, ParamList<T>& out) const {
    out.emplace_back(prefix + ".w", w);
    out.emplace_back(prefix + ".b", b);
  }
};

template <typename T>
struct ConvTranspose3d {
  TensorT<T> w, b;
  int stride = 2, pad = 1;

  ConvTranspose3d() = default;
  ConvTranspose3d(Rng& rng, int64_t in_ch, int64_t out_ch, int k, int stride_ = 2, int pad_ = 1);

  TensorT<T> operator()(const TensorT<T>& x) const {
    return conv3d_transposed(x, w, b, stride, pad);
  }
  void params(const std::string& prefix, ParamList<T>& out) const {
    out.emplace_back(prefix + ".w", w);
    out.emplace_back(prefix + ".b", b);
  }
};

template <typename T>
struct InstanceNorm2d {
  TensorT<T> gamma, beta;  // stored [C,1,1] for direct broadcast
  T eps = T(1e-5);

  InstanceNorm2d() = default;
  explicit InstanceNorm2d(int64_t ch);

  TensorT<T> operator()(const TensorT<T>& x) const;
  void params(const std::string& prefix, ParamList<T>& out) const {
    out.emplace_back(prefix + ".gamma", gamma);
    out.emplace_back(prefix + ".beta", beta);
  }
};

// conv -> relu -> conv -> +x -> relu, channel-preserving
template <typename T>
struct ResidualBlock2d {
  Conv2d<T> c1, c2;

  ResidualBlock2d() = default;
  ResidualBlock2d(Rng& rng, int64_t ch);

  TensorT<T> operator()(const TensorT<T>& x) const;
  void params(const std::string& prefix, ParamList<T>& out) const {
    c1.params(prefix + ".c1", out);
    c2.params(prefix + ".c2", out);
  }
};

}  // namespace mgev
