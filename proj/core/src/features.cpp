#include "mgev/features.hpp"

namespace mgev {

template <typename T>
FeatureNet<T>::FeatureNet(Rng& rng, const FeatureNetConfig& cfg) : cfg_(cfg) {
  const auto& e = cfg.enc;
  stem_ = Conv2d<T>(rng, 3, e[0], 3, 2);
  stem_norm_ = InstanceNorm2d<T>(e[0]);
  for (int i = 0; i < 4; ++i) {
    down_[i] = Conv2d<T>(rng, e[i], e[i + 1], 3, 2);
    down_norm_[i] = InstanceNorm2d<T>(e[i + 1]);
    refine_[i] = Conv2d<T>(rng, e[i + 1], e[i + 1], 3, 1);
    refine_norm_[i] = InstanceNorm2d<T>(e[i + 1]);
  }
  proj32_ = Conv2d<T>(rng, e[4], cfg.out32, 1, 1);
  const int dec_in[4] = {e[4] + e[3], cfg.out16 + e[2], cfg.out8 + e[1], cfg.out4 + e[0]};
  const int dec_out[4] = {cfg.out16, cfg.out8, cfg.out4, cfg.out2};
  for (int i = 0; i < 4; ++i) {
    dec_[i] = Conv2d<T>(rng, dec_in[i], dec_out[i], 3, 1);
    dec_norm_[i] = InstanceNorm2d<T>(dec_out[i]);
  }
}

template <typename T>
FeaturePyramid<T> FeatureNet<T>::operator()(const TensorT<T>& image) const {
  if (image.rank() != 3 || image.dim(0) != 3)
    fail("extract_features: expected [3,H,W], got ", shape_str(image.shape()));
  int64_t h = image.dim(1), w = image.dim(2);
  if (h % 32 || w % 32)
    fail("extract_features: dims must be divisible by 32, got ", h, "x", w,
         " (pad the input first)");

  TensorT<T> s1 = relu(stem_norm_(stem_(image)));  // 1/2
  std::array<TensorT<T>, 4> e;
  TensorT<T> cur = s1;
  for (int i = 0; i < 4; ++i) {
    cur = relu(down_norm_[i](down_[i](cur)));
    cur = relu(refine_norm_[i](refine_[i](cur)));
    e[static_cast<size_t>(i)] = cur;  // 1/4, 1/8, 1/16, 1/32
  }

  FeaturePyramid<T> pyr;
  pyr.f32 = proj32_(e[3]);
  TensorT<T> d16 = relu(dec_norm_[0](dec_[0](concat<T>({upsample_nearest2x(e[3]), e[2]}, 0))));
  pyr.f16 = d16;
  TensorT<T> d8 = relu(dec_norm_[1](dec_[1](concat<T>({upsample_nearest2x(d16), e[1]}, 0))));
  pyr.f8 = d8;
  TensorT<T> d4 = relu(dec_norm_[2](dec_[2](concat<T>({upsample_nearest2x(d8), e[0]}, 0))));
  pyr.f4 = d4;
  pyr.f2 = relu(dec_norm_[3](dec_[3](concat<T>({upsample_nearest2x(d4), s1}, 0))));
  return pyr;
}

template <typename T>
void FeatureNet<T>::params(const std::string& prefix, ParamList<T>& out) const {
  stem_.params(prefix + ".stem", out);
  stem_norm_.params(prefix + ".stem_norm", out);
  for (int i = 0; i < 4; ++i) {
    std::string si = std::to_string(i);
    down_[i].params(prefix + ".down" + si, out);
    down_norm_[i].params(prefix + ".down_norm" + si, out);
    refine_[i].params(prefix + ".refine" + si, out);
    refine_norm_[i].params(prefix + ".refine_norm" + si, out);
  }
  proj32_.params(prefix + ".proj32", out);
  for (int i = 0; i < 4; ++i) {
    std::string si = std::to_string(i);
    dec_[i].params(prefix + ".dec" + si, out);
    dec_norm_[i].params(prefix + ".dec_norm" + si, out);
  }
}

template <typename T>
ContextNet<T>::ContextNet(Rng& rng, const ContextNetConfig& cfg) : cfg_(cfg) {
  if (cfg.levels < 1 || cfg.levels > 3)
    fail("context net: levels must be 1..3, got ", cfg.levels);
  stem1_ = Conv2d<T>(rng, 3, cfg.trunk, 3, 2);
  stem2_ = Conv2d<T>(rng, cfg.trunk, cfg.trunk, 3, 2);
  res_.emplace_back(rng, cfg.trunk);
  for (int l = 1; l < cfg.levels; ++l) {
    down_.emplace_back(rng, cfg.trunk, cfg.trunk, 3, 2);
    res_.emplace_back(rng, cfg.trunk);
  }
  for (int l = 0; l < cfg.levels; ++l)
    heads_.push_back({Conv2d<T>(rng, cfg.trunk, cfg.hidden, 3, 1),
                      Conv2d<T>(rng, cfg.trunk, cfg.hidden, 3, 1),
                      Conv2d<T>(rng, cfg.trunk, cfg.hidden, 3, 1),
                      Conv2d<T>(rng, cfg.trunk, cfg.hidden, 3, 1)});
}

template <typename T>
ContextSet<T> ContextNet<T>::operator()(const TensorT<T>& image) const {
  if (image.rank() != 3 || image.dim(0) != 3)
    fail("extract_context: expected [3,H,W], got ", shape_str(image.shape()));
  if (image.dim(1) % 32 || image.dim(2) % 32)
    fail("extract_context: dims must be divisible by 32, got ", image.dim(1), "x",
         image.dim(2), " (pad the input first)");
  ContextSet<T> ctx;
  TensorT<T> t = res_[0](relu(stem2_(relu(stem1_(image)))));
  for (int l = 0; l < cfg_.levels; ++l) {
    if (l > 0) t = res_[static_cast<size_t>(l)](relu(down_[static_cast<size_t>(l - 1)](t)));
    const auto& hd = heads_[static_cast<size_t>(l)];
    ContextLevel<T> lvl;
    lvl.h0 = vtanh(hd[0](t));
    lvl.cz = hd[1](t);
    lvl.cr = hd[2](t);
    lvl.ch = hd[3](t);
    ctx.levels.push_back(std::move(lvl));
  }
  return ctx;
}

template <typename T>
void ContextNet<T>::params(const std::string& prefix, ParamList<T>& out) const {
  stem1_.params(prefix + ".stem1", out);
  stem2_.params(prefix + ".stem2", out);
  for (size_t l = 0; l < res_.size(); ++l)
    res_[l].params(prefix + ".res" + std::to_string(l), out);
  for (size_t l = 0; l < down_.size(); ++l)
    down_[l].params(prefix + ".down" + std::to_string(l), out);
  static const char* head_names[4] = {"h0", "cz", "cr", "ch"};
  for (size_t l = 0; l < heads_.size(); ++l)
    for (int i = 0; i < 4; ++i)
      heads_[l][static_cast<size_t>(i)].params(
          prefix + ".head" + std::to_string(l) + "." + head_names[i], out);
}

template class FeatureNet<float>;
template class FeatureNet<double>;
template class ContextNet<float>;
template class ContextNet<double>;

}  // namespace mgev
