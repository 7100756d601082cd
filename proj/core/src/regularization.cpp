#include "mgev/regularization.hpp"

namespace mgev {

template <typename T>
TensorT<T> excite(const TensorT<T>& volume, const TensorT<T>& guide_logits) {
  if (volume.rank() != 4)
    fail("excite: volume must be [ch,D,H,W], got ", shape_str(volume.shape()));
  if (guide_logits.rank() != 3 || guide_logits.dim(0) != volume.dim(0) ||
      guide_logits.dim(1) != volume.dim(2) || guide_logits.dim(2) != volume.dim(3))
    fail("excite: guide ", shape_str(guide_logits.shape()), " does not match volume ",
         shape_str(volume.shape()));
  TensorT<T> gate = sigmoid(guide_logits);
  TensorT<T> gate4 = reshape(gate, Shape{volume.dim(0), 1, volume.dim(2), volume.dim(3)});
  return mul(volume, gate4);
}

template <typename T>
TensorT<T> soft_argmin(const TensorT<T>& g, int bin_stride) {
  if (g.rank() != 3) fail("soft_argmin: expected [D,H,W], got ", shape_str(g.shape()));
  int64_t bins = g.dim(0);
  TensorT<T> probs = softmax(g, 0);
  TensorT<T> levels = TensorT<T>::zeros(Shape{bins, 1, 1});
  for (int64_t d = 0; d < bins; ++d)
    levels.data()[d] = static_cast<T>(bin_stride) * static_cast<T>(d);
  TensorT<T> expectation = sum_axes(mul(probs, levels), {0});
  return reshape(expectation, Shape{g.dim(1), g.dim(2)});
}

template <typename T>
RegularizerUNet<T>::RegularizerUNet(Rng& rng, int in_groups, const GuideChannels& guide)
    : groups_(in_groups),
      proj4_(rng, guide.c4, in_groups, 1),
      proj8_(rng, guide.c8, 16, 1),
      proj16_(rng, guide.c16, 32, 1),
      proj32_(rng, guide.c32, 48, 1),
      d1a_(rng, in_groups, 16, 3, 2),
      d1b_(rng, 16, 16, 3, 1),
      d2a_(rng, 16, 32, 3, 2),
      d2b_(rng, 32, 32, 3, 1),
      d3a_(rng, 32, 48, 3, 2),
      d3b_(rng, 48, 48, 3, 1),
      u1_(rng, 48, 32, 4),
      u2_(rng, 32, 16, 4),
      u3_(rng, 16, 8, 4),
      u1a_(rng, 64, 32, 3, 1),
      u1b_(rng, 32, 32, 3, 1),
      u2a_(rng, 32, 16, 3, 1),
      u2b_(rng, 16, 16, 3, 1),
      u3a_(rng, 8 + in_groups, 8, 3, 1),
      u3b_(rng, 8, 8, 3, 1),
      final_(rng, 8, 1, 3, 1) {}

template <typename T>
TensorT<T> RegularizerUNet<T>::operator()(const TensorT<T>& c,
                                          const FeaturePyramid<T>& guide) const {
  if (c.rank() != 4 || c.dim(0) != groups_)
    fail("regularize: expected [", groups_, ",D,H,W], got ", shape_str(c.shape()));
  int64_t bins = c.dim(1), h = c.dim(2), w = c.dim(3);
  if (bins % 8 || h % 8 || w % 8)
    fail("regularize: (bins,H,W) = (", bins, ",", h, ",", w,
         ") must each be divisible by 8; pad by (", (8 - bins % 8) % 8, ",",
         (8 - h % 8) % 8, ",", (8 - w % 8) % 8, ")");

  TensorT<T> x0 = excite(c, proj4_(guide.f4));
  TensorT<T> x1 = excite(relu(d1b_(relu(d1a_(x0)))), proj8_(guide.f8));
  TensorT<T> x2 = excite(relu(d2b_(relu(d2a_(x1)))), proj16_(guide.f16));
  TensorT<T> x3 = excite(relu(d3b_(relu(d3a_(x2)))), proj32_(guide.f32));

  TensorT<T> y2 = relu(u1b_(relu(u1a_(concat<T>({u1_(x3), x2}, 0)))));
  TensorT<T> y1 = relu(u2b_(relu(u2a_(concat<T>({u2_(y2), x1}, 0)))));
  TensorT<T> y0 = relu(u3b_(relu(u3a_(concat<T>({u3_(y1), x0}, 0)))));
  TensorT<T> g = final_(y0);  // [1,D,H,W]
  return reshape(g, Shape{bins, h, w});
}

template <typename T>
void RegularizerUNet<T>::params(const std::string& prefix, ParamList<T>& out) const {
  proj4_.params(prefix + ".proj4", out);
  proj8_.params(prefix + ".proj8", out);
  proj16_.params(prefix + ".proj16", out);
  proj32_.params(prefix + ".proj32", out);
  d1a_.params(prefix + ".d1a", out);
  d1b_.params(prefix + ".d1b", out);
  d2a_.params(prefix + ".d2a", out);
  d2b_.params(prefix + ".d2b", out);
  d3a_.params(prefix + ".d3a", out);
  d3b_.params(prefix + ".d3b", out);
  u1_.params(prefix + ".u1", out);
  u2_.params(prefix + ".u2", out);
  u3_.params(prefix + ".u3", out);
  u1a_.params(prefix + ".u1a", out);
  u1b_.params(prefix + ".u1b", out);
  u2a_.params(prefix + ".u2a", out);
  u2b_.params(prefix + ".u2b", out);
  u3a_.params(prefix + ".u3a", out);
  u3b_.params(prefix + ".u3b", out);
  final_.params(prefix + ".final", out);
}

template <typename T>
Regularizer<T>::Regularizer(Rng& rng, const RangeSpec& spec, const GuideChannels& guide,
                            bool single_range)
    : single_range_(single_range), r_s_(rng, spec.n_groups, guide) {
  if (!single_range) {
    r_m_ = RegularizerUNet<T>(rng, spec.n_groups, guide);
    r_l_ = RegularizerUNet<T>(rng, spec.n_groups, guide);
  }
}

template <typename T>
GeometrySet<T> Regularizer<T>::operator()(const CorrelationVolumeSet<T>& vols,
                                          const FeaturePyramid<T>& guide) const {
  GeometrySet<T> geo;
  geo.g_s = r_s_(vols.c_s, guide);
  geo.d0_s = mul_scalar(soft_argmin(geo.g_s, 1), T(4));
  if (!single_range_) {
    geo.g_m = r_m_(vols.c_m, guide);
    geo.d0_m = mul_scalar(soft_argmin(geo.g_m, 2), T(4));
    geo.g_l = r_l_(vols.c_l, guide);
    geo.d0_l = mul_scalar(soft_argmin(geo.g_l, 4), T(4));
  }
  return geo;
}

template <typename T>
void Regularizer<T>::params(const std::string& prefix, ParamList<T>& out) const {
  r_s_.params(prefix + ".s", out);
  if (!single_range_) {
    r_m_.params(prefix + ".m", out);
    r_l_.params(prefix + ".l", out);
  }
}

#define MGEV_INSTANTIATE(T)                                                        \
  template TensorT<T> excite(const TensorT<T>&, const TensorT<T>&);                \
  template TensorT<T> soft_argmin(const TensorT<T>&, int);                         \
  template class RegularizerUNet<T>;                                               \
  template class Regularizer<T>;

MGEV_INSTANTIATE(float)
MGEV_INSTANTIATE(double)

#undef MGEV_INSTANTIATE

}  // namespace mgev
