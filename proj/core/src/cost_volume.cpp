#include "mgev/cost_volume.hpp"

namespace mgev {

void RangeSpec::validate(bool single_range) const {
  if (d_s < 4 || d_s % 4) fail("range spec: D_s must be a positive multiple of 4, got ", d_s);
  if (n_groups < 1) fail("range spec: N_g must be positive, got ", n_groups);
  if (single_range) return;
  if (!(d_s < d_m && d_m < d_l))
    fail("range spec: need D_s < D_m < D_l, got (", d_s, ", ", d_m, ", ", d_l, ")");
  if (d_m % 8) fail("range spec: D_m must be divisible by 8, got ", d_m);
  if (d_l % 16) fail("range spec: D_l must be divisible by 16, got ", d_l);
}

namespace {

template <typename T>
void check_pair(const char* op, const TensorT<T>& f_l, const TensorT<T>& f_r, int groups) {
  if (f_l.rank() != 3 || f_r.rank() != 3 || f_l.shape() != f_r.shape())
    fail(op, ": feature maps must be same-shape [C,H,W], got ", shape_str(f_l.shape()),
         " vs ", shape_str(f_r.shape()));
  if (groups > 0 && f_l.dim(0) % groups)
    fail(op, ": ", f_l.dim(0), " channels not divisible by ", groups, " groups");
}

}  // namespace

template <typename T>
TensorT<T> group_correlation(const TensorT<T>& f_l, const TensorT<T>& f_r, int n_bins,
                             int groups) {
  check_pair("group_correlation", f_l, f_r, groups);
  int64_t c = f_l.dim(0), h = f_l.dim(1), w = f_l.dim(2);
  // bins past the feature width stay all-zero (no x has a match there)
  if (n_bins < 1) fail("group_correlation: bin count must be >= 1, got ", n_bins);
  int64_t cpg = c / groups;
  T coef = static_cast<T>(groups) / static_cast<T>(c);
  int64_t plane = h * w;

  bool rg = tracing_any<T>({&f_l, &f_r});
  TensorT<T> out = make_op_output<T>(Shape{groups, n_bins, h, w}, rg);
  const T* pl = f_l.data();
  const T* pr = f_r.data();
  T* po = out.data();
  for (int64_t g = 0; g < groups; ++g)
    for (int64_t d = 0; d < n_bins; ++d)
      for (int64_t y = 0; y < h; ++y)
        for (int64_t x = d; x < w; ++x) {
          T acc = T(0);
          for (int64_t cc = g * cpg; cc < (g + 1) * cpg; ++cc)
            acc += pl[cc * plane + y * w + x] * pr[cc * plane + y * w + x - d];
          po[((g * n_bins + d) * h + y) * w + x] = coef * acc;
        }
  if (rg) {
    auto ld = f_l.impl();
    auto rd = f_r.impl();
    auto od = out.impl();
    bool need_l = f_l.requires_grad(), need_r = f_r.requires_grad();
    TapeT<T>::current()->record(out, [=](GradMap<T>& gm) {
      const std::vector<T>& gout = *gm.find(od.get());
      std::vector<T>* gl = need_l ? &gm.of(ld) : nullptr;
      std::vector<T>* gr = need_r ? &gm.of(rd) : nullptr;
      for (int64_t g = 0; g < groups; ++g)
        for (int64_t d = 0; d < n_bins; ++d)
          for (int64_t y = 0; y < h; ++y)
            for (int64_t x = d; x < w; ++x) {
              T gv = coef * gout[((g * n_bins + d) * h + y) * w + x];
              if (gv == T(0)) continue;
              for (int64_t cc = g * cpg; cc < (g + 1) * cpg; ++cc) {
                if (gl) (*gl)[cc * plane + y * w + x] += gv * rd->values[cc * plane + y * w + x - d];
                if (gr) (*gr)[cc * plane + y * w + x - d] += gv * ld->values[cc * plane + y * w + x];
              }
            }
    });
  }
  return out;
}

template <typename T>
TensorT<T> adaptive_patch_correlation(const TensorT<T>& f_l, const TensorT<T>& f_r,
                                      int n_bins, int stride, int patch,
                                      const TensorT<T>& patch_weights) {
  check_pair("adaptive_patch_correlation", f_l, f_r, 0);
  if (stride != patch)
    fail("adaptive_patch_correlation: stride ", stride, " must equal patch size ", patch);
  int64_t c = f_l.dim(0), h = f_l.dim(1), w = f_l.dim(2);
  if (patch_weights.rank() != 2 || patch_weights.dim(1) != patch)
    fail("adaptive_patch_correlation: weights must be [groups,", patch, "], got ",
         shape_str(patch_weights.shape()));
  int64_t groups = patch_weights.dim(0);
  if (c % groups)
    fail("adaptive_patch_correlation: ", c, " channels not divisible by ", groups, " groups");
  if (n_bins < 1) fail("adaptive_patch_correlation: bin count must be >= 1, got ", n_bins);
  int64_t cpg = c / groups;
  T coef = static_cast<T>(groups) / static_cast<T>(c);
  int64_t plane = h * w;

  bool rg = tracing_any<T>({&f_l, &f_r, &patch_weights});
  TensorT<T> out = make_op_output<T>(Shape{groups, n_bins, h, w}, rg);
  const T* pl = f_l.data();
  const T* pr = f_r.data();
  const T* pw = patch_weights.data();
  T* po = out.data();
  for (int64_t g = 0; g < groups; ++g)
    for (int64_t k = 0; k < n_bins; ++k)
      for (int64_t i = 0; i < patch; ++i) {
        int64_t shift = k * stride + i;
        if (shift >= w) continue;
        T wv = pw[g * patch + i];
        for (int64_t y = 0; y < h; ++y)
          for (int64_t x = shift; x < w; ++x) {
            T acc = T(0);
            for (int64_t cc = g * cpg; cc < (g + 1) * cpg; ++cc)
              acc += pl[cc * plane + y * w + x] * pr[cc * plane + y * w + x - shift];
            po[((g * n_bins + k) * h + y) * w + x] += coef * wv * acc;
          }
      }
  if (rg) {
    auto ld = f_l.impl();
    auto rd = f_r.impl();
    auto wd = patch_weights.impl();
    auto od = out.impl();
    bool need_l = f_l.requires_grad(), need_r = f_r.requires_grad();
    bool need_w = patch_weights.requires_grad();
    TapeT<T>::current()->record(out, [=](GradMap<T>& gm) {
      const std::vector<T>& gout = *gm.find(od.get());
      std::vector<T>* gl = need_l ? &gm.of(ld) : nullptr;
      std::vector<T>* gr = need_r ? &gm.of(rd) : nullptr;
      std::vector<T>* gw = need_w ? &gm.of(wd) : nullptr;
      for (int64_t g = 0; g < groups; ++g)
        for (int64_t k = 0; k < n_bins; ++k)
          for (int64_t i = 0; i < patch; ++i) {
            int64_t shift = k * stride + i;
            if (shift >= w) continue;
            T wv = wd->values[g * patch + i];
            T gw_acc = T(0);
            for (int64_t y = 0; y < h; ++y)
              for (int64_t x = shift; x < w; ++x) {
                T gv = gout[((g * n_bins + k) * h + y) * w + x];
                if (gv == T(0)) continue;
                T dot = T(0);
                for (int64_t cc = g * cpg; cc < (g + 1) * cpg; ++cc) {
                  T lv = ld->values[cc * plane + y * w + x];
                  T rv = rd->values[cc * plane + y * w + x - shift];
                  dot += lv * rv;
                  if (gl) (*gl)[cc * plane + y * w + x] += coef * gv * wv * rv;
                  if (gr) (*gr)[cc * plane + y * w + x - shift] += coef * gv * wv * lv;
                }
                gw_acc += gv * dot;
              }
            if (gw) (*gw)[g * patch + i] += coef * gw_acc;
          }
    });
  }
  return out;
}

template <typename T>
std::vector<TensorT<T>> all_pairs_correlation(const TensorT<T>& f_l, const TensorT<T>& f_r,
                                              int levels) {
  check_pair("all_pairs_correlation", f_l, f_r, 0);
  int64_t c = f_l.dim(0), h = f_l.dim(1), w = f_l.dim(2);
  T coef = T(1) / static_cast<T>(c);
  int64_t plane = h * w;

  bool rg = tracing_any<T>({&f_l, &f_r});
  TensorT<T> apc = make_op_output<T>(Shape{w, h, w}, rg);
  const T* pl = f_l.data();
  const T* pr = f_r.data();
  T* po = apc.data();
  for (int64_t xr = 0; xr < w; ++xr)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        T acc = T(0);
        for (int64_t cc = 0; cc < c; ++cc)
          acc += pl[cc * plane + y * w + x] * pr[cc * plane + y * w + xr];
        po[(xr * h + y) * w + x] = coef * acc;
      }
  if (rg) {
    auto ld = f_l.impl();
    auto rd = f_r.impl();
    auto od = apc.impl();
    bool need_l = f_l.requires_grad(), need_r = f_r.requires_grad();
    TapeT<T>::current()->record(apc, [=](GradMap<T>& gm) {
      const std::vector<T>& gout = *gm.find(od.get());
      std::vector<T>* gl = need_l ? &gm.of(ld) : nullptr;
      std::vector<T>* gr = need_r ? &gm.of(rd) : nullptr;
      for (int64_t xr = 0; xr < w; ++xr)
        for (int64_t y = 0; y < h; ++y)
          for (int64_t x = 0; x < w; ++x) {
            T gv = coef * gout[(xr * h + y) * w + x];
            if (gv == T(0)) continue;
            for (int64_t cc = 0; cc < c; ++cc) {
              if (gl) (*gl)[cc * plane + y * w + x] += gv * rd->values[cc * plane + y * w + xr];
              if (gr) (*gr)[cc * plane + y * w + xr] += gv * ld->values[cc * plane + y * w + x];
            }
          }
    });
  }
  std::vector<TensorT<T>> pyr{apc};
  for (int l = 1; l < levels; ++l) pyr.push_back(avg_pool_bins2x(pyr.back()));
  return pyr;
}

template <typename T>
CorrelationVolumeSet<T> build_volumes(const FeaturePyramid<T>& pyr_l,
                                      const FeaturePyramid<T>& pyr_r, const RangeSpec& spec,
                                      const TensorT<T>& omega_m, const TensorT<T>& omega_l,
                                      bool single_range) {
  spec.validate(single_range);
  if (!pyr_l.f4.defined() || !pyr_r.f4.defined())
    fail("build_volumes: quarter-resolution features missing");
  CorrelationVolumeSet<T> vols;
  vols.c_s = group_correlation(pyr_l.f4, pyr_r.f4, spec.bins_s(), spec.n_groups);
  if (!single_range) {
    vols.c_m = adaptive_patch_correlation(pyr_l.f4, pyr_r.f4, spec.bins_m(), 2, 2, omega_m);
    vols.c_l = adaptive_patch_correlation(pyr_l.f4, pyr_r.f4, spec.bins_l(), 4, 4, omega_l);
  }
  vols.apc = all_pairs_correlation(pyr_l.f4, pyr_r.f4);
  return vols;
}

#define MGEV_INSTANTIATE(T)                                                                  \
  template TensorT<T> group_correlation(const TensorT<T>&, const TensorT<T>&, int, int);     \
  template TensorT<T> adaptive_patch_correlation(const TensorT<T>&, const TensorT<T>&, int,  \
                                                 int, int, const TensorT<T>&);               \
  template std::vector<TensorT<T>> all_pairs_correlation(const TensorT<T>&,                  \
                                                         const TensorT<T>&, int);            \
  template CorrelationVolumeSet<T> build_volumes(const FeaturePyramid<T>&,                   \
                                                 const FeaturePyramid<T>&, const RangeSpec&, \
                                                 const TensorT<T>&, const TensorT<T>&, bool);

MGEV_INSTANTIATE(float)
MGEV_INSTANTIATE(double)

#undef MGEV_INSTANTIATE

}  // namespace mgev
