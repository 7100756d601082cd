#include "mgev/update.hpp"

namespace mgev {

namespace {

std::vector<int> radius_offsets(int r) {
  std::vector<int> offs;
  for (int o = -r; o <= r; ++o) offs.push_back(o);
  return offs;
}

}  // namespace

template <typename T>
GeometryLookup<T> lookup_geometry(const GeometrySet<T>& geo,
                                  const std::vector<TensorT<T>>& apc, const TensorT<T>& d,
                                  const LookupConfig& cfg) {
  if (d.rank() != 2) fail("lookup_geometry: d must be [H,W], got ", shape_str(d.shape()));
  if (cfg.radius < 0) fail("lookup_geometry: radius must be >= 0, got ", cfg.radius);
  std::vector<int> offs = radius_offsets(cfg.radius);
  GeometryLookup<T> out;
  out.f_s = gather_linear(geo.g_s, d, offs);
  if (geo.g_m.defined()) out.f_m = gather_linear(geo.g_m, mul_scalar(d, T(0.5)), offs);
  if (geo.g_l.defined()) out.f_l = gather_linear(geo.g_l, mul_scalar(d, T(0.25)), offs);

  if (static_cast<int>(apc.size()) < cfg.apc_levels)
    fail("lookup_geometry: ", cfg.apc_levels, " pyramid levels requested, only ", apc.size(),
         " built");
  TensorT<T> ramp = x_ramp<T>(d.dim(0), d.dim(1));
  TensorT<T> right_x = sub(ramp, d);
  std::vector<TensorT<T>> taps;
  for (int l = 0; l < cfg.apc_levels; ++l) {
    TensorT<T> coords = l == 0 ? right_x : mul_scalar(right_x, T(1) / static_cast<T>(1 << l));
    taps.push_back(gather_linear(apc[static_cast<size_t>(l)], coords, offs));
  }
  out.f_apc = concat(taps, 0);
  return out;
}

template <typename T>
GruCell<T>::GruCell(Rng& rng, int hidden, int input_ch)
    : wz(rng, hidden + input_ch, hidden, 3),
      wr(rng, hidden + input_ch, hidden, 3),
      wh(rng, hidden + input_ch, hidden, 3) {}

template <typename T>
TensorT<T> GruCell<T>::operator()(const TensorT<T>& h, const TensorT<T>& x,
                                  const ContextLevel<T>& ctx) const {
  TensorT<T> hx = concat<T>({h, x}, 0);
  TensorT<T> z = sigmoid(add(wz(hx), ctx.cz));
  TensorT<T> r = sigmoid(add(wr(hx), ctx.cr));
  TensorT<T> htilde = vtanh(add(wh(concat<T>({mul(r, h), x}, 0)), ctx.ch));
  // (1-z)h + z*htilde
  return add(h, mul(z, sub(htilde, h)));
}

template <typename T>
void GruCell<T>::params(const std::string& prefix, ParamList<T>& out) const {
  wz.params(prefix + ".wz", out);
  wr.params(prefix + ".wr", out);
  wh.params(prefix + ".wh", out);
}

template <typename T>
SelectiveFusion<T>::SelectiveFusion(Rng& rng, int c4, int mid)
    : conv_d_(rng, 3, mid, 3), conv_s_(rng, c4 + mid, 3, 3) {}

template <typename T>
TensorT<T> SelectiveFusion<T>::weights(const TensorT<T>& d0s, const TensorT<T>& d0m,
                                       const TensorT<T>& d0l, const TensorT<T>& f4) const {
  int64_t h = d0s.dim(0), w = d0s.dim(1);
  TensorT<T> d_cat = concat<T>({reshape(d0s, Shape{1, h, w}), reshape(d0m, Shape{1, h, w}),
                                reshape(d0l, Shape{1, h, w})},
                               0);
  TensorT<T> f_d = relu(conv_d_(d_cat));
  return sigmoid(conv_s_(concat<T>({f4, f_d}, 0)));
}

template <typename T>
TensorT<T> SelectiveFusion<T>::blend(const TensorT<T>& s, const TensorT<T>& f_s,
                                     const TensorT<T>& f_m, const TensorT<T>& f_l) {
  TensorT<T> ws = narrow(s, 0, 0, 1);
  TensorT<T> wm = narrow(s, 0, 1, 1);
  TensorT<T> wl = narrow(s, 0, 2, 1);
  return add(add(mul(ws, f_s), mul(wm, f_m)), mul(wl, f_l));
}

template <typename T>
void SelectiveFusion<T>::params(const std::string& prefix, ParamList<T>& out) const {
  conv_d_.params(prefix + ".conv_d", out);
  conv_s_.params(prefix + ".conv_s", out);
}

template <typename T>
UpdateBlock<T>::UpdateBlock(Rng& rng, const UpdateConfig& cfg) : cfg_(cfg) {
  if (cfg.levels != 1 && cfg.levels != 3)
    fail("update block: levels must be 1 or 3, got ", cfg.levels);
  int taps = 2 * cfg.lookup.radius + 1;
  int geom_ch = taps + cfg.lookup.apc_levels * taps;
  if (!cfg.single_range) sgff_ = SelectiveFusion<T>(rng, cfg.c4, cfg.sgff);
  enc_g1_ = Conv2d<T>(rng, geom_ch, cfg.enc_g, 3);
  enc_g2_ = Conv2d<T>(rng, cfg.enc_g, cfg.enc_g, 3);
  enc_d1_ = Conv2d<T>(rng, 1, cfg.enc_d, 7);
  enc_d2_ = Conv2d<T>(rng, cfg.enc_d, cfg.enc_d, 3);
  int x_ch = cfg.enc_g + cfg.enc_d + 1;
  if (cfg.levels == 1) {
    cells_.emplace_back(rng, cfg.hidden, x_ch);
  } else {
    cells_.emplace_back(rng, cfg.hidden, x_ch + cfg.hidden);
    cells_.emplace_back(rng, cfg.hidden, 2 * cfg.hidden);
    cells_.emplace_back(rng, cfg.hidden, cfg.hidden);
  }
  dd1_ = Conv2d<T>(rng, cfg.hidden, cfg.hidden, 3);
  dd2_ = Conv2d<T>(rng, cfg.hidden, 1, 3, 1, -1, 0.25);
  ups1_ = Conv2d<T>(rng, cfg.hidden, cfg.ups_mid, 3);
  ups2_ = Conv2d<T>(rng, cfg.ups_mid + cfg.c2, cfg.ups_half, 3);
  ups3_ = Conv2d<T>(rng, cfg.ups_half, 36, 3, 1, -1, 0.25);
}

template <typename T>
TensorT<T> UpdateBlock<T>::upsample(const TensorT<T>& d, const TensorT<T>& h4,
                                    const TensorT<T>& f2) const {
  TensorT<T> m = relu(ups1_(h4));
  TensorT<T> u = relu(ups2_(concat<T>({upsample_nearest2x(m), f2}, 0)));
  TensorT<T> w9 = pixel_shuffle2x(ups3_(u));
  return convex_upsample4x(d, softmax(w9, 0));
}

template <typename T>
DisparityField<T> UpdateBlock<T>::iterate(const GeometrySet<T>& geo,
                                          const std::vector<TensorT<T>>& apc,
                                          const ContextSet<T>& ctx,
                                          const FeaturePyramid<T>& pyr_l, int iters,
                                          bool upsample_each) const {
  if (iters < 1) fail("iterate: iteration count must be >= 1, got ", iters);
  if (static_cast<int>(ctx.levels.size()) < cfg_.levels)
    fail("iterate: ", cfg_.levels, " GRU levels need as many context levels, got ",
         ctx.levels.size());

  std::vector<TensorT<T>> h;
  for (int l = 0; l < cfg_.levels; ++l) h.push_back(ctx.levels[static_cast<size_t>(l)].h0);

  int64_t hq = geo.d0_s.dim(0), wq = geo.d0_s.dim(1);
  TensorT<T> d = mul_scalar(geo.d0_s, T(0.25));  // seed in quarter-px

  DisparityField<T> field;
  for (int k = 0; k < iters; ++k) {
    GeometryLookup<T> look = lookup_geometry(geo, apc, d, cfg_.lookup);
    TensorT<T> f_geo;
    if (cfg_.single_range) {
      f_geo = look.f_s;
    } else {
      TensorT<T> s = sgff_.weights(geo.d0_s, geo.d0_m, geo.d0_l, pyr_l.f4);
      f_geo = SelectiveFusion<T>::blend(s, look.f_s, look.f_m, look.f_l);
    }
    TensorT<T> g_feat = relu(enc_g2_(relu(enc_g1_(concat<T>({f_geo, look.f_apc}, 0)))));
    TensorT<T> d_in = reshape(d, Shape{1, hq, wq});
    TensorT<T> d_feat = relu(enc_d2_(relu(enc_d1_(d_in))));
    TensorT<T> x = concat<T>({g_feat, d_feat, d_in}, 0);

    if (cfg_.levels == 1) {
      h[0] = cells_[0](h[0], x, ctx.levels[0]);
    } else {
      h[2] = cells_[2](h[2], avg_pool2d_2x(h[1]), ctx.levels[2]);
      h[1] = cells_[1](h[1], concat<T>({avg_pool2d_2x(h[0]), upsample_nearest2x(h[2])}, 0),
                       ctx.levels[1]);
      h[0] = cells_[0](h[0], concat<T>({upsample_nearest2x(h[1]), x}, 0), ctx.levels[0]);
    }

    TensorT<T> dd = reshape(dd2_(relu(dd1_(h[0]))), Shape{hq, wq});
    d = relu(add(d, dd));  // disparity stays non-negative
    field.history.push_back(d);
    if (upsample_each || k == iters - 1) {
      TensorT<T> up = this->upsample(d, h[0], pyr_l.f2);
      if (upsample_each) field.history_full.push_back(up);
      if (k == iters - 1) field.final_full = up;
    }
  }
  return field;
}

template <typename T>
void UpdateBlock<T>::params(const std::string& prefix, ParamList<T>& out) const {
  if (!cfg_.single_range) sgff_.params(prefix + ".sgff", out);
  enc_g1_.params(prefix + ".enc_g1", out);
  enc_g2_.params(prefix + ".enc_g2", out);
  enc_d1_.params(prefix + ".enc_d1", out);
  enc_d2_.params(prefix + ".enc_d2", out);
  for (size_t l = 0; l < cells_.size(); ++l)
    cells_[l].params(prefix + ".gru" + std::to_string(l), out);
  dd1_.params(prefix + ".dd1", out);
  dd2_.params(prefix + ".dd2", out);
  ups1_.params(prefix + ".ups1", out);
  ups2_.params(prefix + ".ups2", out);
  ups3_.params(prefix + ".ups3", out);
}

#define MGEV_INSTANTIATE(T)                                                            \
  template GeometryLookup<T> lookup_geometry(const GeometrySet<T>&,                    \
                                             const std::vector<TensorT<T>>&,           \
                                             const TensorT<T>&, const LookupConfig&);  \
  template struct GruCell<T>;                                                          \
  template class SelectiveFusion<T>;                                                   \
  template class UpdateBlock<T>;

MGEV_INSTANTIATE(float)
MGEV_INSTANTIATE(double)

#undef MGEV_INSTANTIATE

}  // namespace mgev
