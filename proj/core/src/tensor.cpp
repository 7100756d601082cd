#include "mgev/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <thread>

namespace mgev {

// ---------------------------------------------------------------------------
// globals
// ---------------------------------------------------------------------------

namespace {

std::atomic<int> g_max_threads{0};  // 0 = unset, resolve lazily
std::atomic<bool> g_finite_checks{false};

int resolve_default_threads() {
  if (const char* env = std::getenv("MGEV_THREADS")) {
    int n = std::atoi(env);
    if (n >= 1) return n;
  }
  unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

template <typename T>
thread_local TapeT<T>* tls_tape = nullptr;

}  // namespace

int max_threads() {
  int n = g_max_threads.load();
  if (n == 0) {
    n = resolve_default_threads();
    g_max_threads.store(n);
  }
  return n;
}

void set_max_threads(int n) { g_max_threads.store(n < 1 ? 1 : n); }

bool finite_checks_enabled() { return g_finite_checks.load(std::memory_order_relaxed); }
void set_finite_checks(bool on) { g_finite_checks.store(on); }

// ---------------------------------------------------------------------------
// TensorT
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> TensorT<T>::zeros(Shape shape, bool requires_grad) {
  auto d = std::make_shared<TensorData<T>>();
  d->values.assign(static_cast<size_t>(shape_numel(shape)), T(0));
  d->shape = std::move(shape);
  d->requires_grad = requires_grad;
  return TensorT(std::move(d));
}

template <typename T>
TensorT<T> TensorT<T>::full(Shape shape, T value, bool requires_grad) {
  auto t = zeros(std::move(shape), requires_grad);
  std::fill(t.values().begin(), t.values().end(), value);
  return t;
}

template <typename T>
TensorT<T> TensorT<T>::from(Shape shape, std::vector<T> values, bool requires_grad) {
  if (shape_numel(shape) != static_cast<int64_t>(values.size()))
    fail("tensor from(): shape ", shape_str(shape), " expects ", shape_numel(shape),
         " values, got ", values.size());
  auto d = std::make_shared<TensorData<T>>();
  d->shape = std::move(shape);
  d->values = std::move(values);
  d->requires_grad = requires_grad;
  return TensorT(std::move(d));
}

template <typename T>
TensorT<T> TensorT<T>::scalar(T value, bool requires_grad) {
  return from(Shape{1}, {value}, requires_grad);
}

template <typename T>
TensorT<T> make_op_output(Shape shape, bool requires_grad) {
  auto t = TensorT<T>::zeros(std::move(shape), requires_grad);
  t.impl()->is_leaf = false;
  return t;
}

// ---------------------------------------------------------------------------
// TapeT
// ---------------------------------------------------------------------------

template <typename T>
TapeT<T>::TapeT() {
  prev_ = tls_tape<T>;
  tls_tape<T> = this;
}

template <typename T>
TapeT<T>::~TapeT() {
  tls_tape<T> = prev_;
}

template <typename T>
TapeT<T>* TapeT<T>::current() {
  return tls_tape<T>;
}

template <typename T>
void TapeT<T>::record(const TensorT<T>& out, std::function<void(GradMap<T>&)> pullback) {
  nodes_.push_back(Node{out.impl(), std::move(pullback)});
}

template <typename T>
void TapeT<T>::backward(const TensorT<T>& loss, GradMap<T>& gm) {
  if (loss.numel() != 1)
    fail("backward: loss must be scalar, got shape ", shape_str(loss.shape()));
  gm.of(loss.impl())[0] += T(1);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (!gm.find(it->out.get())) continue;  // branch not reached from loss
    it->pullback(gm);
  }
}

template <typename T>
void TapeT<T>::backward(const TensorT<T>& loss) {
  GradMap<T> gm;
  backward(loss, gm);
  gm.flush_leaves();
}

// ---------------------------------------------------------------------------
// helpers
// ---------------------------------------------------------------------------

namespace {

struct BCast {
  Shape out;
  std::vector<int64_t> sa, sb;  // element strides into a and b, 0 on broadcast dims
  std::vector<int64_t> so;      // contiguous strides of out
  bool same = false;
};

BCast make_bcast(const char* op, const Shape& a, const Shape& b) {
  BCast bc;
  if (a == b) {
    bc.out = a;
    bc.same = true;
    return bc;
  }
  size_t rank = std::max(a.size(), b.size());
  bc.out.resize(rank);
  bc.sa.assign(rank, 0);
  bc.sb.assign(rank, 0);
  // raw strides, right-aligned
  std::vector<int64_t> ra(rank, 1), rb(rank, 1), da(rank, 1), db(rank, 1);
  for (size_t i = 0; i < rank; ++i) {
    da[i] = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    db[i] = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
  }
  for (size_t i = rank; i-- > 0;) {
    ra[i] = (i + 1 < rank) ? ra[i + 1] * da[i + 1] : 1;
    rb[i] = (i + 1 < rank) ? rb[i + 1] * db[i + 1] : 1;
  }
  for (size_t i = 0; i < rank; ++i) {
    if (da[i] == db[i]) bc.out[i] = da[i];
    else if (da[i] == 1) bc.out[i] = db[i];
    else if (db[i] == 1) bc.out[i] = da[i];
    else fail(op, ": shapes not broadcast-compatible: ", shape_str(a), " vs ", shape_str(b));
    bc.sa[i] = da[i] == 1 && bc.out[i] != 1 ? 0 : ra[i];
    bc.sb[i] = db[i] == 1 && bc.out[i] != 1 ? 0 : rb[i];
  }
  bc.so.assign(rank, 1);
  for (size_t i = rank; i-- > 0;)
    bc.so[i] = (i + 1 < rank) ? bc.so[i + 1] * bc.out[i + 1] : 1;
  return bc;
}

// Loop plan: adjacent dims whose strides compose contiguously are merged, so
// the walk degenerates to a few nested loops with pointer steps instead of a
// per-element div/mod odometer.
struct BcastPlan {
  std::vector<int64_t> extent, sa, sb;  // outermost first
};

BcastPlan make_plan(const BCast& bc) {
  BcastPlan p;
  size_t rank = bc.out.size();
  for (size_t i = 0; i < rank; ++i) {
    if (bc.out[i] == 1) continue;
    if (!p.extent.empty()) {
      int64_t e = bc.out[i];
      if (p.sa.back() == bc.sa[i] * e && p.sb.back() == bc.sb[i] * e) {
        p.extent.back() *= e;
        p.sa.back() = bc.sa[i];
        p.sb.back() = bc.sb[i];
        continue;
      }
    }
    p.extent.push_back(bc.out[i]);
    p.sa.push_back(bc.sa[i]);
    p.sb.push_back(bc.sb[i]);
  }
  if (p.extent.empty()) {
    p.extent.push_back(1);
    p.sa.push_back(0);
    p.sb.push_back(0);
  }
  return p;
}

// visit(i_out, off_a, off_b) over the full broadcast index space
template <typename F>
void plan_walk_level(const BcastPlan& p, size_t level, int64_t i, int64_t oa, int64_t ob,
                     F&& visit) {
  int64_t e = p.extent[level], sa = p.sa[level], sb = p.sb[level];
  if (level + 1 == p.extent.size()) {
    for (int64_t k = 0; k < e; ++k) visit(i + k, oa + k * sa, ob + k * sb);
    return;
  }
  int64_t inner = 1;
  for (size_t l = level + 1; l < p.extent.size(); ++l) inner *= p.extent[l];
  for (int64_t k = 0; k < e; ++k)
    plan_walk_level(p, level + 1, i + k * inner, oa + k * sa, ob + k * sb, visit);
}

template <typename F>
void bcast_walk(const BCast& bc, F&& visit) {
  BcastPlan p = make_plan(bc);
  plan_walk_level(p, 0, 0, 0, 0, visit);
}

// Shared skeleton for broadcasting binary ops. dfda/dfdb receive
// (a_i, b_i, out_i, g_i) and return the increment for each input gradient.
template <typename T, typename Fwd, typename Ga, typename Gb>
TensorT<T> binary_op(const char* name, const TensorT<T>& a, const TensorT<T>& b,
                     Fwd fwd, Ga ga_fn, Gb gb_fn) {
  BCast bc = make_bcast(name, a.shape(), b.shape());
  bool rg = tracing_any<T>({&a, &b});
  TensorT<T> out = make_op_output<T>(bc.out, rg);
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  if (bc.same) {
    int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) po[i] = fwd(pa[i], pb[i]);
  } else {
    bcast_walk(bc, [&](int64_t i, int64_t oa, int64_t ob) { po[i] = fwd(pa[oa], pb[ob]); });
  }
  check_op_finite(name, out);
  if (rg) {
    auto ad = a.impl();
    auto bd = b.impl();
    auto od = out.impl();
    bool need_a = a.requires_grad();
    bool need_b = b.requires_grad();
    TapeT<T>::current()->record(out, [=](GradMap<T>& gm) {
      const std::vector<T>& g = *gm.find(od.get());
      std::vector<T>* ga = need_a ? &gm.of(ad) : nullptr;
      std::vector<T>* gb = need_b ? &gm.of(bd) : nullptr;
      if (bc.same) {
        int64_t n = static_cast<int64_t>(g.size());
        for (int64_t i = 0; i < n; ++i) {
          if (ga) (*ga)[i] += ga_fn(ad->values[i], bd->values[i], od->values[i], g[i]);
          if (gb) (*gb)[i] += gb_fn(ad->values[i], bd->values[i], od->values[i], g[i]);
        }
      } else {
        bcast_walk(bc, [&](int64_t i, int64_t oa, int64_t ob) {
          if (ga) (*ga)[oa] += ga_fn(ad->values[oa], bd->values[ob], od->values[i], g[i]);
          if (gb) (*gb)[ob] += gb_fn(ad->values[oa], bd->values[ob], od->values[i], g[i]);
        });
      }
    });
  }
  return out;
}

// dydx receives (x_i, y_i)
template <typename T, typename Fwd, typename Dydx>
TensorT<T> unary_op(const char* name, const TensorT<T>& a, Fwd fwd, Dydx dydx) {
  bool rg = tracing_any<T>({&a});
  TensorT<T> out = make_op_output<T>(a.shape(), rg);
  const T* pa = a.data();
  T* po = out.data();
  int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = fwd(pa[i]);
  check_op_finite(name, out);
  if (rg) {
    auto ad = a.impl();
    auto od = out.impl();
    TapeT<T>::current()->record(out, [=](GradMap<T>& gm) {
      const std::vector<T>& g = *gm.find(od.get());
      std::vector<T>& ga = gm.of(ad);
      for (size_t i = 0; i < g.size(); ++i)
        ga[i] += g[i] * dydx(ad->values[i], od->values[i]);
    });
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
  return binary_op<T>(
      "add", a, b, [](T x, T y) { return x + y; },
      [](T, T, T, T g) { return g; }, [](T, T, T, T g) { return g; });
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
  return binary_op<T>(
      "sub", a, b, [](T x, T y) { return x - y; },
      [](T, T, T, T g) { return g; }, [](T, T, T, T g) { return -g; });
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
  return binary_op<T>(
      "mul", a, b, [](T x, T y) { return x * y; },
      [](T, T y, T, T g) { return g * y; }, [](T x, T, T, T g) { return g * x; });
}

template <typename T>
TensorT<T> div(const TensorT<T>& a, const TensorT<T>& b) {
  return binary_op<T>(
      "div", a, b, [](T x, T y) { return x / y; },
      [](T, T y, T, T g) { return g / y; },
      [](T x, T y, T, T g) { return -g * x / (y * y); });
}

template <typename T>
TensorT<T> add_scalar(const TensorT<T>& a, T s) {
  return unary_op<T>(
      "add_scalar", a, [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <typename T>
TensorT<T> mul_scalar(const TensorT<T>& a, T s) {
  return unary_op<T>(
      "mul_scalar", a, [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <typename T>
TensorT<T> sigmoid(const TensorT<T>& a) {
  return unary_op<T>(
      "sigmoid", a,
      [](T x) {
        if (x >= T(0)) {
          T e = std::exp(-x);
          return T(1) / (T(1) + e);
        }
        T e = std::exp(x);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
TensorT<T> vtanh(const TensorT<T>& a) {
  return unary_op<T>(
      "tanh", a, [](T x) { return std::tanh(x); },
      [](T, T y) { return T(1) - y * y; });
}

template <typename T>
TensorT<T> relu(const TensorT<T>& a) {
  return unary_op<T>(
      "relu", a, [](T x) { return x > T(0) ? x : T(0); },
      [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
TensorT<T> vsqrt(const TensorT<T>& a) {
  return unary_op<T>(
      "sqrt", a, [](T x) { return std::sqrt(x); },
      [](T, T y) { return T(0.5) / y; });
}

template <typename T>
TensorT<T> vabs(const TensorT<T>& a) {
  return unary_op<T>(
      "abs", a, [](T x) { return std::abs(x); },
      [](T x, T) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
}

template <typename T>
TensorT<T> smooth_l1(const TensorT<T>& e) {
  return unary_op<T>(
      "smooth_l1", e,
      [](T x) { return std::abs(x) < T(1) ? T(0.5) * x * x : std::abs(x) - T(0.5); },
      [](T x, T) { return std::abs(x) < T(1) ? x : (x > T(0) ? T(1) : T(-1)); });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> sum(const TensorT<T>& a) {
  bool rg = tracing_any<T>({&a});
  TensorT<T> out = make_op_output<T>(Shape{1}, rg);
  T acc = T(0);
  for (T v : a.values()) acc += v;
  out.data()[0] = acc;
  check_op_finite("sum", out);
  if (rg) {
    auto ad = a.impl();
    auto od = out.impl();
    TapeT<T>::current()->record(out, [=](GradMap<T>& gm) {
      T g = (*gm.find(od.get()))[0];
      std::vector<T>& ga = gm.of(ad);
      for (auto& v : ga) v += g;
    });
  }
  return out;
}

template <typename T>
TensorT<T> mean(const TensorT<T>& a) {
  return mul_scalar(sum(a), T(1) / static_cast<T>(a.numel()));
}

namespace {

// reduced-axes bookkeeping shared by sum_axes/mean_axes
struct AxesPlan {
  Shape out_shape;
  std::vector<int64_t> in_strides, out_strides;
  std::vector<bool> reduced;
  int64_t count = 1;
};

AxesPlan make_axes_plan(const char* op, const Shape& in, const std::vector<int>& axes) {
  AxesPlan p;
  size_t rank = in.size();
  p.reduced.assign(rank, false);
  for (int ax : axes) {
    if (ax < 0 || static_cast<size_t>(ax) >= rank)
      fail(op, ": axis ", ax, " out of range for shape ", shape_str(in));
    if (!p.reduced[static_cast<size_t>(ax)]) p.count *= in[static_cast<size_t>(ax)];
    p.reduced[static_cast<size_t>(ax)] = true;
  }
  p.out_shape = in;
  for (size_t i = 0; i < rank; ++i)
    if (p.reduced[i]) p.out_shape[i] = 1;
  p.in_strides.assign(rank, 1);
  p.out_strides.assign(rank, 1);
  for (size_t i = rank; i-- > 0;) {
    p.in_strides[i] = (i + 1 < rank) ? p.in_strides[i + 1] * in[i + 1] : 1;
    p.out_strides[i] = (i + 1 < rank) ? p.out_strides[i + 1] * p.out_shape[i + 1] : 1;
  }
  return p;
}

}  // namespace

template <typename T>
TensorT<T> sum_axes(const TensorT<T>& a, const std::vector<int>& axes) {
  AxesPlan p = make_axes_plan("sum_axes", a.shape(), axes);
  bool rg = tracing_any<T>({&a});
  TensorT<T> out = make_op_output<T>(p.out_shape, rg);

  // walk the input index space; the "b" side addresses the reduced output
  BCast bc;
  bc.out = a.shape();
  bc.sa = p.in_strides;
  bc.sb = p.out_strides;
  for (size_t d = 0; d < p.reduced.size(); ++d)
    if (p.reduced[d]) bc.sb[d] = 0;

  const T* pa = a.data();
  T* po = out.data();
  bcast_walk(bc, [&](int64_t, int64_t ia, int64_t io) { po[io] += pa[ia]; });
  check_op_finite("sum_axes", out);
  if (rg) {
    auto ad = a.impl();
    auto od = out.impl();
    TapeT<T>::current()->record(out, [=](GradMap<T>& gm) {
      const std::vector<T>& g = *gm.find(od.get());
      std::vector<T>& ga = gm.of(ad);
      bcast_walk(bc, [&](int64_t, int64_t ia, int64_t io) {
        ga[static_cast<size_t>(ia)] += g[static_cast<size_t>(io)];
      });
    });
  }
  return out;
}

template <typename T>
TensorT<T> mean_axes(const TensorT<T>& a, const std::vector<int>& axes) {
  AxesPlan p = make_axes_plan("mean_axes", a.shape(), axes);
  return mul_scalar(sum_axes(a, axes), T(1) / static_cast<T>(p.count));
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> reshape(const TensorT<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    fail("reshape: cannot view ", shape_str(a.shape()), " as ", shape_str(shape));
  bool rg = tracing_any<T>({&a});
  TensorT<T> out = make_op_output<T>(std::move(shape), rg);
  out.values() = a.values();
  if (rg) {
    auto ad = a.impl();
    auto od = out.impl();
    TapeT<T>::current()->record(out, [=](GradMap<T>& gm) {
      const std::vector<T>& g = *gm.find(od.get());
      std::vector<T>& ga = gm.of(ad);
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
  }
  return out;
}

template <typename T>
TensorT<T> concat(const std::vector<TensorT<T>>& parts, int axis) {
  if (parts.empty()) fail("concat: no inputs");
  const Shape& s0 = parts[0].shape();
  size_t rank = s0.size();
  if (axis < 0 || static_cast<size_t>(axis) >= rank)
    fail("concat: axis ", axis, " out of range for rank ", rank);
  Shape out_shape = s0;
  out_shape[static_cast<size_t>(axis)] = 0;
  for (const auto& p : parts) {
    if (p.shape().size() != rank)
      fail("concat: rank mismatch ", shape_str(s0), " vs ", shape_str(p.shape()));
    for (size_t d = 0; d < rank; ++d)
      if (d != static_cast<size_t>(axis) && p.shape()[d] != s0[d])
        fail("concat: shape mismatch ", shape_str(s0), " vs ", shape_str(p.shape()));
    out_shape[static_cast<size_t>(axis)] += p.shape()[static_cast<size_t>(axis)];
  }
  bool rg = false;
  for (const auto& p : parts) rg = rg || tracing_any<T>({&p});

  int64_t outer = 1, inner = 1;
  for (size_t d = 0; d < static_cast<size_t>(axis); ++d) outer *= s0[d];
  for (size_t d = static_cast<size_t>(axis) + 1; d < rank; ++d) inner *= s0[d];
  int64_t out_axis = out_shape[static_cast<size_t>(axis)];

  TensorT<T> out = make_op_output<T>(out_shape, rg);
  T* po = out.data();
  int64_t written = 0;
  std::vector<int64_t> starts;
  for (const auto& p : parts) {
    starts.push_back(written);
    int64_t ax = p.shape()[static_cast<size_t>(axis)];
    const T* pp = p.data();
    for (int64_t o = 0; o < outer; ++o)
      std::copy(pp + o * ax * inner, pp + (o + 1) * ax * inner,
                po + (o * out_axis + written) * inner);
    written += ax;
  }
  if (rg) {
    std::vector<std::shared_ptr<TensorData<T>>> impls;
    std::vector<bool> need;
    for (const auto& p : parts) {
      impls.push_back(p.impl());
      need.push_back(p.requires_grad());
    }
    auto od = out.impl();
    TapeT<T>::current()->record(out, [=](GradMap<T>& gm) {
      const std::vector<T>& g = *gm.find(od.get());
      for (size_t pi = 0; pi < impls.size(); ++pi) {
        if (!need[pi]) continue;
        std::vector<T>& gp = gm.of(impls[pi]);
        int64_t ax = impls[pi]->shape[static_cast<size_t>(axis)];
        for (int64_t o = 0; o < outer; ++o) {
          const T* gsrc = g.data() + (o * out_axis + starts[pi]) * inner;
          T* gdst = gp.data() + o * ax * inner;
          for (int64_t i = 0; i < ax * inner; ++i) gdst[i] += gsrc[i];
        }
      }
    });
  }
  return out;
}

template <typename T>
TensorT<T> narrow(const TensorT<T>& a, int axis, int64_t start, int64_t length) {
  const Shape& s = a.shape();
  if (axis < 0 || static_cast<size_t>(axis) >= s.size())
    fail("narrow: axis ", axis, " out of range for shape ", shape_str(s));
  int64_t ax = s[static_cast<size_t>(axis)];
  if (start < 0 || length < 1 || start + length > ax)
    fail("narrow: window [", start, ", ", start + length, ") out of range for axis size ", ax);
  Shape out_shape = s;
  out_shape[static_cast<size_t>(axis)] = length;
  int64_t outer = 1, inner = 1;
  for (size_t d = 0; d < static_cast<size_t>(axis); ++d) outer *= s[d];
  for (size_t d = static_cast<size_t>(axis) + 1; d < s.size(); ++d) inner *= s[d];

  bool rg = tracing_any<T>({&a});
  TensorT<T> out = make_op_output<T>(out_shape, rg);
  const T* pa = a.data();
  T* po = out.data();
  for (int64_t o = 0; o < outer; ++o)
    std::copy(pa + (o * ax + start) * inner, pa + (o * ax + start + length) * inner,
              po + o * length * inner);
  if (rg) {
    auto ad = a.impl();
    auto od = out.impl();
    TapeT<T>::current()->record(out, [=](GradMap<T>& gm) {
      const std::vector<T>& g = *gm.find(od.get());
      std::vector<T>& ga = gm.of(ad);
      for (int64_t o = 0; o < outer; ++o) {
        const T* gsrc = g.data() + o * length * inner;
        T* gdst = ga.data() + (o * ax + start) * inner;
        for (int64_t i = 0; i < length * inner; ++i) gdst[i] += gsrc[i];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// convolution
// ---------------------------------------------------------------------------

namespace {

// valid output range along one axis: indices o with 0 <= o*stride + off < n
inline void conv_range(int64_t extent, int64_t n, int stride, int64_t off, int64_t& lo,
                       int64_t& hi) {
  if (-off <= 0) {
    lo = 0;
  } else {
    lo = (-off + stride - 1) / stride;
  }
  int64_t hi_num = n - 1 - off;
  hi = hi_num < 0 ? 0 : std::min<int64_t>(extent, hi_num / stride + 1);
  if (lo > hi) lo = hi;
}

// canonical view of [C,H,W] / [N,C,H,W] inputs
struct Conv2dDims {
  int64_t n, c, h, w, o, kh, kw, oh, ow;
  bool batched;
};

Conv2dDims conv2d_dims(const char* op, const Shape& xs, const Shape& ws, int stride, int pad) {
  Conv2dDims d{};
  if (xs.size() == 3) {
    d.batched = false;
    d.n = 1; d.c = xs[0]; d.h = xs[1]; d.w = xs[2];
  } else if (xs.size() == 4) {
    d.batched = true;
    d.n = xs[0]; d.c = xs[1]; d.h = xs[2]; d.w = xs[3];
  } else {
    fail(op, ": input must be [C,H,W] or [N,C,H,W], got ", shape_str(xs));
  }
  if (ws.size() != 4) fail(op, ": kernel must be [O,C,kh,kw], got ", shape_str(ws));
  d.o = ws[0]; d.kh = ws[2]; d.kw = ws[3];
  if (ws[1] != d.c)
    fail(op, ": channel mismatch, input ", shape_str(xs), " vs kernel ", shape_str(ws));
  if (stride < 1) fail(op, ": stride must be >= 1, got ", stride);
  d.oh = (d.h + 2 * pad - d.kh) / stride + 1;
  d.ow = (d.w + 2 * pad - d.kw) / stride + 1;
  if (d.oh < 1 || d.ow < 1)
    fail(op, ": kernel ", shape_str(ws), " too large for input ", shape_str(xs),
         " with pad ", pad);
  return d;
}

}  // namespace

template <typename T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b,
                  int stride, int pad) {
  Conv2dDims m = conv2d_dims("conv2d", x.shape(), w.shape(), stride, pad);
  if (b.defined() && (b.rank() != 1 || b.dim(0) != m.o))
    fail("conv2d: bias must be [", m.o, "], got ", shape_str(b.shape()));
  bool rg = tracing_any<T>({&x, &w, &b});
  Shape out_shape = m.batched ? Shape{m.n, m.o, m.oh, m.ow} : Shape{m.o, m.oh, m.ow};
  TensorT<T> out = make_op_output<T>(out_shape, rg);

  const T* px = x.data();
  const T* pw = w.data();
  T* po = out.data();
  const int64_t in_plane = m.h * m.w, out_plane = m.oh * m.ow;
  const int64_t in_sample = m.c * in_plane, out_sample = m.o * out_plane;

  for (int64_t n = 0; n < m.n; ++n)
    for (int64_t oc = 0; oc < m.o; ++oc) {
      T bias = b.defined() ? b.data()[oc] : T(0);
      T* op_ = po + n * out_sample + oc * out_plane;
      std::fill(op_, op_ + out_plane, bias);
      for (int64_t ic = 0; ic < m.c; ++ic) {
        const T* ip = px + n * in_sample + ic * in_plane;
        const T* wp = pw + (oc * m.c + ic) * m.kh * m.kw;
        for (int64_t ky = 0; ky < m.kh; ++ky) {
          int64_t oy_lo, oy_hi;
          conv_range(m.oh, m.h, stride, ky - pad, oy_lo, oy_hi);
          for (int64_t kx = 0; kx < m.kw; ++kx) {
            T wv = wp[ky * m.kw + kx];
            if (wv == T(0)) continue;
            int64_t ox_lo, ox_hi;
            conv_range(m.ow, m.w, stride, kx - pad, ox_lo, ox_hi);
            int64_t shift = kx - pad;
            for (int64_t oy = oy_lo; oy < oy_hi; ++oy) {
              T* orow = op_ + oy * m.ow;
              const T* irow = ip + (oy * stride + ky - pad) * m.w + shift;
              if (stride == 1) {
                for (int64_t ox = ox_lo; ox < ox_hi; ++ox) orow[ox] += wv * irow[ox];
              } else {
                for (int64_t ox = ox_lo; ox < ox_hi; ++ox) orow[ox] += wv * irow[ox * stride];
              }
            }
          }
        }
      }
    }
  check_op_finite("conv2d", out);
  if (rg) {
    auto xd = x.impl();
    auto wd = w.impl();
    auto bd = b.defined() ? b.impl() : nullptr;
    auto od = out.impl();
    bool need_x = x.requires_grad(), need_w = w.requires_grad();
    bool need_b = b.defined() && b.requires_grad();
    TapeT<T>::current()->record(out, [=](GradMap<T>& gm) {
      const std::vector<T>& g = *gm.find(od.get());
      const T* pg = g.data();
      if (need_x) {
        std::vector<T>& gx = gm.of(xd);
        for (int64_t n = 0; n < m.n; ++n)
          for (int64_t oc = 0; oc < m.o; ++oc)
            for (int64_t ic = 0; ic < m.c; ++ic) {
              T* gxp = gx.data() + n * in_sample + ic * in_plane;
              const T* wp = wd->values.data() + (oc * m.c + ic) * m.kh * m.kw;
              const T* gp = pg + n * out_sample + oc * out_plane;
              for (int64_t ky = 0; ky < m.kh; ++ky) {
                int64_t oy_lo, oy_hi;
                conv_range(m.oh, m.h, stride, ky - pad, oy_lo, oy_hi);
                for (int64_t kx = 0; kx < m.kw; ++kx) {
                  T wv = wp[ky * m.kw + kx];
                  if (wv == T(0)) continue;
                  int64_t ox_lo, ox_hi;
                  conv_range(m.ow, m.w, stride, kx - pad, ox_lo, ox_hi);
                  int64_t shift = kx - pad;
                  for (int64_t oy = oy_lo; oy < oy_hi; ++oy) {
                    T* gxrow = gxp + (oy * stride + ky - pad) * m.w + shift;
                    const T* grow = gp + oy * m.ow;
                    if (stride == 1) {
                      for (int64_t ox = ox_lo; ox < ox_hi; ++ox) gxrow[ox] += wv * grow[ox];
                    } else {
                      for (int64_t ox = ox_lo; ox < ox_hi; ++ox)
                        gxrow[ox * stride] += wv * grow[ox];
                    }
                  }
                }
              }
            }
      }
      if (need_w) {
        std::vector<T>& gw = gm.of(wd);
        for (int64_t n = 0; n < m.n; ++n)
          for (int64_t oc = 0; oc < m.o; ++oc)
            for (int64_t ic = 0; ic < m.c; ++ic) {
              const T* ip = xd->values.data() + n * in_sample + ic * in_plane;
              const T* gp = pg + n * out_sample + oc * out_plane;
              T* gwp = gw.data() + (oc * m.c + ic) * m.kh * m.kw;
              for (int64_t ky = 0; ky < m.kh; ++ky) {
                int64_t oy_lo, oy_hi;
                conv_range(m.oh, m.h, stride, ky - pad, oy_lo, oy_hi);
                for (int64_t kx = 0; kx < m.kw; ++kx) {
                  int64_t ox_lo, ox_hi;
                  conv_range(m.ow, m.w, stride, kx - pad, ox_lo, ox_hi);
                  int64_t shift = kx - pad;
                  T a0 = T(0), a1 = T(0), a2 = T(0), a3 = T(0);
                  for (int64_t oy = oy_lo; oy < oy_hi; ++oy) {
                    const T* irow = ip + (oy * stride + ky - pad) * m.w + shift;
                    const T* grow = gp + oy * m.ow;
                    int64_t ox = ox_lo;
                    if (stride == 1) {
                      for (; ox + 4 <= ox_hi; ox += 4) {
                        a0 += grow[ox] * irow[ox];
                        a1 += grow[ox + 1] * irow[ox + 1];
                        a2 += grow[ox + 2] * irow[ox + 2];
                        a3 += grow[ox + 3] * irow[ox + 3];
                      }
                      for (; ox < ox_hi; ++ox) a0 += grow[ox] * irow[ox];
                    } else {
                      for (; ox < ox_hi; ++ox) a0 += grow[ox] * irow[ox * stride];
                    }
                  }
                  gwp[ky * m.kw + kx] += (a0 + a1) + (a2 + a3);
                }
              }
            }
      }
      if (need_b) {
        std::vector<T>& gb = gm.of(bd);
        for (int64_t n = 0; n < m.n; ++n)
          for (int64_t oc = 0; oc < m.o; ++oc) {
            const T* gp = pg + n * out_sample + oc * out_plane;
            T acc = T(0);
            for (int64_t i = 0; i < out_plane; ++i) acc += gp[i];
            gb[static_cast<size_t>(oc)] += acc;
          }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// conv3d and transposed conv3d
// ---------------------------------------------------------------------------

namespace {

struct Conv3dDims {
  int64_t n, c, d, h, w, o, kd, kh, kw, od, oh, ow;
  bool batched;
};

Conv3dDims conv3d_dims(const char* op, const Shape& xs, const Shape& ws, int stride, int pad,
                       bool transposed) {
  Conv3dDims m{};
  if (xs.size() == 4) {
    m.batched = false;
    m.n = 1; m.c = xs[0]; m.d = xs[1]; m.h = xs[2]; m.w = xs[3];
  } else if (xs.size() == 5) {
    m.batched = true;
    m.n = xs[0]; m.c = xs[1]; m.d = xs[2]; m.h = xs[3]; m.w = xs[4];
  } else {
    fail(op, ": input must be [C,D,H,W] or [N,C,D,H,W], got ", shape_str(xs));
  }
  if (ws.size() != 5) fail(op, ": kernel must be rank 5, got ", shape_str(ws));
  int64_t wc = transposed ? ws[0] : ws[1];
  m.o = transposed ? ws[1] : ws[0];
  m.kd = ws[2]; m.kh = ws[3]; m.kw = ws[4];
  if (wc != m.c)
    fail(op, ": channel mismatch, input ", shape_str(xs), " vs kernel ", shape_str(ws));
  if (stride < 1) fail(op, ": stride must be >= 1, got ", stride);
  if (transposed) {
    m.od = (m.d - 1) * stride - 2 * pad + m.kd;
    m.oh = (m.h - 1) * stride - 2 * pad + m.kh;
    m.ow = (m.w - 1) * stride - 2 * pad + m.kw;
  } else {
    m.od = (m.d + 2 * pad - m.kd) / stride + 1;
    m.oh = (m.h + 2 * pad - m.kh) / stride + 1;
    m.ow = (m.w + 2 * pad - m.kw) / stride + 1;
  }
  if (m.od < 1 || m.oh < 1 || m.ow < 1)
    fail(op, ": kernel ", shape_str(ws), " too large for input ", shape_str(xs),
         " with pad ", pad);
  return m;
}

}  // namespace

template <typename T>
TensorT<T> conv3d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b,
                  int stride, int pad) {
  Conv3dDims m = conv3d_dims("conv3d", x.shape(), w.shape(), stride, pad, false);
  if (b.defined() && (b.rank() != 1 || b.dim(0) != m.o))
    fail("conv3d: bias must be [", m.o, "], got ", shape_str(b.shape()));
  bool rg = tracing_any<T>({&x, &w, &b});
  Shape out_shape = m.batched ? Shape{m.n, m.o, m.od, m.oh, m.ow}
                              : Shape{m.o, m.od, m.oh, m.ow};
  TensorT<T> out = make_op_output<T>(out_shape, rg);

  const T* px = x.data();
  const T* pw = w.data();
  T* po = out.data();
  const int64_t in_vol = m.d * m.h * m.w, out_vol = m.od * m.oh * m.ow;
  const int64_t kvol = m.kd * m.kh * m.kw;
  const int64_t in_sample = m.c * in_vol, out_sample = m.o * out_vol;

  for (int64_t n = 0; n < m.n; ++n)
    for (int64_t oc = 0; oc < m.o; ++oc) {
      T bias = b.defined() ? b.data()[oc] : T(0);
      T* op_ = po + n * out_sample + oc * out_vol;
      std::fill(op_, op_ + out_vol, bias);
      for (int64_t ic = 0; ic < m.c; ++ic) {
        const T* ip = px + n * in_sample + ic * in_vol;
        const T* wp = pw + (oc * m.c + ic) * kvol;
        for (int64_t kd = 0; kd < m.kd; ++kd) {
          int64_t od_lo, od_hi;
          conv_range(m.od, m.d, stride, kd - pad, od_lo, od_hi);
          for (int64_t ky = 0; ky < m.kh; ++ky) {
            int64_t oy_lo, oy_hi;
            conv_range(m.oh, m.h, stride, ky - pad, oy_lo, oy_hi);
            for (int64_t kx = 0; kx < m.kw; ++kx) {
              T wv = wp[(kd * m.kh + ky) * m.kw + kx];
              if (wv == T(0)) continue;
              int64_t ox_lo, ox_hi;
              conv_range(m.ow, m.w, stride, kx - pad, ox_lo, ox_hi);
              int64_t shift = kx - pad;
              for (int64_t od = od_lo; od < od_hi; ++od) {
                int64_t id = od * stride + kd - pad;
                for (int64_t oy = oy_lo; oy < oy_hi; ++oy) {
                  T* orow = op_ + (od * m.oh + oy) * m.ow;
                  const T* irow = ip + (id * m.h + oy * stride + ky - pad) * m.w + shift;
                  if (stride == 1) {
                    for (int64_t ox = ox_lo; ox < ox_hi; ++ox) orow[ox] += wv * irow[ox];
                  } else {
                    for (int64_t ox = ox_lo; ox < ox_hi; ++ox)
                      orow[ox] += wv * irow[ox * stride];
                  }
                }
              }
            }
          }
        }
      }
    }
  check_op_finite("conv3d", out);
  if (rg) {
    auto xd = x.impl();
    auto wd = w.impl();
    auto bd = b.defined() ? b.impl() : nullptr;
    auto od_ = out.impl();
    bool need_x = x.requires_grad(), need_w = w.requires_grad();
    bool need_b = b.defined() && b.requires_grad();
    TapeT<T>::current()->record(out, [=](GradMap<T>& gm) {
      const std::vector<T>& g = *gm.find(od_.get());
      const T* pg = g.data();
      for (int64_t n = 0; n < m.n; ++n)
        for (int64_t oc = 0; oc < m.o; ++oc) {
          const T* gp = pg + n * out_sample + oc * out_vol;
          for (int64_t ic = 0; ic < m.c; ++ic) {
            const T* ip = xd->values.data() + n * in_sample + ic * in_vol;
            T* gxp = need_x ? gm.of(xd).data() + n * in_sample + ic * in_vol : nullptr;
            T* gwp = need_w ? gm.of(wd).data() + (oc * m.c + ic) * kvol : nullptr;
            const T* wp = wd->values.data() + (oc * m.c + ic) * kvol;
            for (int64_t kd = 0; kd < m.kd; ++kd) {
              int64_t od_lo, od_hi;
              conv_range(m.od, m.d, stride, kd - pad, od_lo, od_hi);
              for (int64_t ky = 0; ky < m.kh; ++ky) {
                int64_t oy_lo, oy_hi;
                conv_range(m.oh, m.h, stride, ky - pad, oy_lo, oy_hi);
                for (int64_t kx = 0; kx < m.kw; ++kx) {
                  T wv = wp[(kd * m.kh + ky) * m.kw + kx];
                  int64_t ox_lo, ox_hi;
                  conv_range(m.ow, m.w, stride, kx - pad, ox_lo, ox_hi);
                  int64_t shift = kx - pad;
                  if (need_x && wv != T(0)) {
                    for (int64_t od = od_lo; od < od_hi; ++od) {
                      int64_t id = od * stride + kd - pad;
                      for (int64_t oy = oy_lo; oy < oy_hi; ++oy) {
                        int64_t iy = oy * stride + ky - pad;
                        const T* grow = gp + (od * m.oh + oy) * m.ow;
                        T* gxrow = gxp + (id * m.h + iy) * m.w + shift;
                        if (stride == 1) {
                          for (int64_t ox = ox_lo; ox < ox_hi; ++ox) gxrow[ox] += wv * grow[ox];
                        } else {
                          for (int64_t ox = ox_lo; ox < ox_hi; ++ox)
                            gxrow[ox * stride] += wv * grow[ox];
                        }
                      }
                    }
                  }
                  if (need_w) {
                    T a0 = T(0), a1 = T(0), a2 = T(0), a3 = T(0);
                    for (int64_t od = od_lo; od < od_hi; ++od) {
                      int64_t id = od * stride + kd - pad;
                      for (int64_t oy = oy_lo; oy < oy_hi; ++oy) {
                        int64_t iy = oy * stride + ky - pad;
                        const T* grow = gp + (od * m.oh + oy) * m.ow;
                        const T* irow = ip + (id * m.h + iy) * m.w + shift;
                        int64_t ox = ox_lo;
                        if (stride == 1) {
                          for (; ox + 4 <= ox_hi; ox += 4) {
                            a0 += grow[ox] * irow[ox];
                            a1 += grow[ox + 1] * irow[ox + 1];
                            a2 += grow[ox + 2] * irow[ox + 2];
                            a3 += grow[ox + 3] * irow[ox + 3];
                          }
                          for (; ox < ox_hi; ++ox) a0 += grow[ox] * irow[ox];
                        } else {
                          for (; ox < ox_hi; ++ox) a0 += grow[ox] * irow[ox * stride];
                        }
                      }
                    }
                    gwp[(kd * m.kh + ky) * m.kw + kx] += (a0 + a1) + (a2 + a3);
                  }
                }
              }
            }
          }
          if (need_b) {
            T acc = T(0);
            for (int64_t i = 0; i < out_vol; ++i) acc += gp[i];
            gm.of(bd)[static_cast<size_t>(oc)] += acc;
          }
        }
    });
  }
  return out;
}

template <typename T>
TensorT<T> conv3d_transposed(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b,
                             int stride, int pad) {
  Conv3dDims m = conv3d_dims("conv3d_transposed", x.shape(), w.shape(), stride, pad, true);
  if (b.defined() && (b.rank() != 1 || b.dim(0) != m.o))
    fail("conv3d_transposed: bias must be [", m.o, "], got ", shape_str(b.shape()));
  bool rg = tracing_any<T>({&x, &w, &b});
  Shape out_shape = m.batched ? Shape{m.n, m.o, m.od, m.oh, m.ow}
                              : Shape{m.o, m.od, m.oh, m.ow};
  TensorT<T> out = make_op_output<T>(out_shape, rg);

  const T* px = x.data();
  const T* pw = w.data();
  T* po = out.data();
  const int64_t in_vol = m.d * m.h * m.w, out_vol = m.od * m.oh * m.ow;
  const int64_t kvol = m.kd * m.kh * m.kw;
  const int64_t in_sample = m.c * in_vol, out_sample = m.o * out_vol;

  // kernel taps that land inside the output for a given input index
  auto tap_range = [](int64_t i, int stride_, int pad_, int64_t k, int64_t extent,
                      int64_t& lo, int64_t& hi) {
    int64_t base = i * stride_ - pad_;
    lo = std::max<int64_t>(0, -base);
    hi = std::min<int64_t>(k, extent - base);
    if (lo > hi) lo = hi;
  };

  for (int64_t n = 0; n < m.n; ++n) {
    if (b.defined())
      for (int64_t oc = 0; oc < m.o; ++oc)
        std::fill(po + n * out_sample + oc * out_vol,
                  po + n * out_sample + (oc + 1) * out_vol, b.data()[oc]);
    for (int64_t ic = 0; ic < m.c; ++ic) {
      const T* ip = px + n * in_sample + ic * in_vol;
      for (int64_t oc = 0; oc < m.o; ++oc) {
        const T* wp = pw + (ic * m.o + oc) * kvol;
        T* op_ = po + n * out_sample + oc * out_vol;
        for (int64_t id = 0; id < m.d; ++id) {
          int64_t kd_lo, kd_hi;
          tap_range(id, stride, pad, m.kd, m.od, kd_lo, kd_hi);
          for (int64_t iy = 0; iy < m.h; ++iy) {
            int64_t ky_lo, ky_hi;
            tap_range(iy, stride, pad, m.kh, m.oh, ky_lo, ky_hi);
            const T* irow = ip + (id * m.h + iy) * m.w;
            for (int64_t ix = 0; ix < m.w; ++ix) {
              T xv = irow[ix];
              if (xv == T(0)) continue;
              int64_t kx_lo, kx_hi;
              tap_range(ix, stride, pad, m.kw, m.ow, kx_lo, kx_hi);
              int64_t ox_base = ix * stride - pad;
              for (int64_t kd = kd_lo; kd < kd_hi; ++kd) {
                int64_t od = id * stride + kd - pad;
                for (int64_t ky = ky_lo; ky < ky_hi; ++ky) {
                  int64_t oy = iy * stride + ky - pad;
                  T* orow = op_ + (od * m.oh + oy) * m.ow + ox_base;
                  const T* wrow = wp + (kd * m.kh + ky) * m.kw;
                  for (int64_t kx = kx_lo; kx < kx_hi; ++kx) orow[kx] += xv * wrow[kx];
                }
              }
            }
          }
        }
      }
    }
  }
  check_op_finite("conv3d_transposed", out);
  if (rg) {
    auto xd = x.impl();
    auto wd = w.impl();
    auto bd = b.defined() ? b.impl() : nullptr;
    auto od_ = out.impl();
    bool need_x = x.requires_grad(), need_w = w.requires_grad();
    bool need_b = b.defined() && b.requires_grad();
    TapeT<T>::current()->record(out, [=](GradMap<T>& gm) {
      const std::vector<T>& g = *gm.find(od_.get());
      const T* pg = g.data();
      auto tap_range2 = [](int64_t i, int stride_, int pad_, int64_t k, int64_t extent,
                           int64_t& lo, int64_t& hi) {
        int64_t base = i * stride_ - pad_;
        lo = std::max<int64_t>(0, -base);
        hi = std::min<int64_t>(k, extent - base);
        if (lo > hi) lo = hi;
      };
      for (int64_t n = 0; n < m.n; ++n) {
        for (int64_t ic = 0; ic < m.c; ++ic) {
          const T* ip = xd->values.data() + n * in_sample + ic * in_vol;
          T* gxp = need_x ? gm.of(xd).data() + n * in_sample + ic * in_vol : nullptr;
          for (int64_t oc = 0; oc < m.o; ++oc) {
            const T* wp = wd->values.data() + (ic * m.o + oc) * kvol;
            T* gwp = need_w ? gm.of(wd).data() + (ic * m.o + oc) * kvol : nullptr;
            const T* gp = pg + n * out_sample + oc * out_vol;
            for (int64_t id = 0; id < m.d; ++id) {
              int64_t kd_lo, kd_hi;
              tap_range2(id, stride, pad, m.kd, m.od, kd_lo, kd_hi);
              for (int64_t iy = 0; iy < m.h; ++iy) {
                int64_t ky_lo, ky_hi;
                tap_range2(iy, stride, pad, m.kh, m.oh, ky_lo, ky_hi);
                for (int64_t ix = 0; ix < m.w; ++ix) {
                  int64_t kx_lo, kx_hi;
                  tap_range2(ix, stride, pad, m.kw, m.ow, kx_lo, kx_hi);
                  int64_t ox_base = ix * stride - pad;
                  T xv = ip[(id * m.h + iy) * m.w + ix];
                  T gacc = T(0);
                  for (int64_t kd = kd_lo; kd < kd_hi; ++kd) {
                    int64_t od = id * stride + kd - pad;
                    for (int64_t ky = ky_lo; ky < ky_hi; ++ky) {
                      int64_t oy = iy * stride + ky - pad;
                      const T* grow = gp + (od * m.oh + oy) * m.ow + ox_base;
                      const T* wrow = wp + (kd * m.kh + ky) * m.kw;
                      T* gwrow = need_w ? gwp + (kd * m.kh + ky) * m.kw : nullptr;
                      for (int64_t kx = kx_lo; kx < kx_hi; ++kx) {
                        if (need_x) gacc += wrow[kx] * grow[kx];
                        if (need_w) gwrow[kx] += xv * grow[kx];
                      }
                    }
                  }
                  if (need_x) gxp[(id * m.h + iy) * m.w + ix] += gacc;
                }
              }
            }
          }
        }
        if (need_b)
          for (int64_t oc = 0; oc < m.o; ++oc) {
            const T* gp = pg + n * out_sample + oc * out_vol;
            T acc = T(0);
            for (int64_t i = 0; i < out_vol; ++i) acc += gp[i];
            gm.of(bd)[static_cast<size_t>(oc)] += acc;
          }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// resampling
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> avg_pool2d_2x(const TensorT<T>& x) {
  if (x.rank() != 3) fail("avg_pool2d_2x: expected [C,H,W], got ", shape_str(x.shape()));
  int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h % 2 || w % 2)
    fail("avg_pool2d_2x: dims must be even, got ", shape_str(x.shape()));
  int64_t oh = h / 2, ow = w / 2;
  bool rg = tracing_any<T>({&x});
  TensorT<T> out = make_op_output<T>(Shape{c, oh, ow}, rg);
  const T* px = x.data();
  T* po = out.data();
  for (int64_t ci = 0; ci < c; ++ci)
    for (int64_t y = 0; y < oh; ++y)
      for (int64_t xx = 0; xx < ow; ++xx) {
        const T* p = px + (ci * h + 2 * y) * w + 2 * xx;
        po[(ci * oh + y) * ow + xx] = T(0.25) * (p[0] + p[1] + p[w] + p[w + 1]);
      }
  if (rg) {
    auto xd = x.impl();
    auto od = out.impl();
    TapeT<T>::current()->record(out, [=](GradMap<T>& gm) {
      const std::vector<T>& g = *gm.find(od.get());
      std::vector<T>& gx = gm.of(xd);
      for (int64_t ci = 0; ci < c; ++ci)
        for (int64_t y = 0; y < oh; ++y)
          for (int64_t xx = 0; xx < ow; ++xx) {
            T gv = T(0.25) * g[(ci * oh + y) * ow + xx];
            T* p = gx.data() + (ci * h + 2 * y) * w + 2 * xx;
            p[0] += gv; p[1] += gv; p[w] += gv; p[w + 1] += gv;
          }
    });
  }
  return out;
}

template <typename T>
TensorT<T> upsample_nearest2x(const TensorT<T>& x) {
  if (x.rank() != 3) fail("upsample_nearest2x: expected [C,H,W], got ", shape_str(x.shape()));
  int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  bool rg = tracing_any<T>({&x});
  TensorT<T> out = make_op_output<T>(Shape{c, 2 * h, 2 * w}, rg);
  const T* px = x.data();
  T* po = out.data();
  for (int64_t ci = 0; ci < c; ++ci)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t xx = 0; xx < w; ++xx) {
        T v = px[(ci * h + y) * w + xx];
        T* p = po + (ci * 2 * h + 2 * y) * 2 * w + 2 * xx;
        p[0] = v; p[1] = v; p[2 * w] = v; p[2 * w + 1] = v;
      }
  if (rg) {
    auto xd = x.impl();
    auto od = out.impl();
    TapeT<T>::current()->record(out, [=](GradMap<T>& gm) {
      const std::vector<T>& g = *gm.find(od.get());
      std::vector<T>& gx = gm.of(xd);
      for (int64_t ci = 0; ci < c; ++ci)
        for (int64_t y = 0; y < h; ++y)
          for (int64_t xx = 0; xx < w; ++xx) {
            const T* p = g.data() + (ci * 2 * h + 2 * y) * 2 * w + 2 * xx;
            gx[(ci * h + y) * w + xx] += p[0] + p[1] + p[2 * w] + p[2 * w + 1];
          }
    });
  }
  return out;
}

template <typename T>
TensorT<T> avg_pool_bins2x(const TensorT<T>& x) {
  if (x.rank() != 3) fail("avg_pool_bins2x: expected [D,H,W], got ", shape_str(x.shape()));
  int64_t d = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (d % 2) fail("avg_pool_bins2x: bin count must be even, got ", d);
  int64_t od = d / 2, plane = h * w;
  bool rg = tracing_any<T>({&x});
  TensorT<T> out = make_op_output<T>(Shape{od, h, w}, rg);
  const T* px = x.data();
  T* po = out.data();
  for (int64_t di = 0; di < od; ++di)
    for (int64_t i = 0; i < plane; ++i)
      po[di * plane + i] = T(0.5) * (px[2 * di * plane + i] + px[(2 * di + 1) * plane + i]);
  if (rg) {
    auto xd = x.impl();
    auto odp = out.impl();
    TapeT<T>::current()->record(out, [=](GradMap<T>& gm) {
      const std::vector<T>& g = *gm.find(odp.get());
      std::vector<T>& gx = gm.of(xd);
      for (int64_t di = 0; di < od; ++di)
        for (int64_t i = 0; i < plane; ++i) {
          T gv = T(0.5) * g[di * plane + i];
          gx[2 * di * plane + i] += gv;
          gx[(2 * di + 1) * plane + i] += gv;
        }
    });
  }
  return out;
}

template <typename T>
TensorT<T> pixel_shuffle2x(const TensorT<T>& x) {
  if (x.rank() != 3 || x.dim(0) % 4)
    fail("pixel_shuffle2x: expected [4C,H,W], got ", shape_str(x.shape()));
  int64_t c = x.dim(0) / 4, h = x.dim(1), w = x.dim(2);
  bool rg = tracing_any<T>({&x});
  TensorT<T> out = make_op_output<T>(Shape{c, 2 * h, 2 * w}, rg);
  const T* px = x.data();
  T* po = out.data();
  for (int64_t ci = 0; ci < c; ++ci)
    for (int64_t dy = 0; dy < 2; ++dy)
      for (int64_t dx = 0; dx < 2; ++dx) {
        const T* ip = px + ((ci * 4 + dy * 2 + dx) * h) * w;
        for (int64_t y = 0; y < h; ++y)
          for (int64_t xx = 0; xx < w; ++xx)
            po[(ci * 2 * h + 2 * y + dy) * 2 * w + 2 * xx + dx] = ip[y * w + xx];
      }
  if (rg) {
    auto xd = x.impl();
    auto od = out.impl();
    TapeT<T>::current()->record(out, [=](GradMap<T>& gm) {
      const std::vector<T>& g = *gm.find(od.get());
      std::vector<T>& gx = gm.of(xd);
      for (int64_t ci = 0; ci < c; ++ci)
        for (int64_t dy = 0; dy < 2; ++dy)
          for (int64_t dx = 0; dx < 2; ++dx) {
            T* gp = gx.data() + ((ci * 4 + dy * 2 + dx) * h) * w;
            for (int64_t y = 0; y < h; ++y)
              for (int64_t xx = 0; xx < w; ++xx)
                gp[y * w + xx] += g[(ci * 2 * h + 2 * y + dy) * 2 * w + 2 * xx + dx];
          }
    });
  }
  return out;
}

template <typename T>
TensorT<T> pad_edge2d(const TensorT<T>& x, int top, int bottom, int left, int right) {
  if (x.rank() != 3) fail("pad_edge2d: expected [C,H,W], got ", shape_str(x.shape()));
  if (top < 0 || bottom < 0 || left < 0 || right < 0) fail("pad_edge2d: negative padding");
  int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  int64_t oh = h + top + bottom, ow = w + left + right;
  bool rg = tracing_any<T>({&x});
  TensorT<T> out = make_op_output<T>(Shape{c, oh, ow}, rg);
  const T* px = x.data();
  T* po = out.data();
  auto clampi = [](int64_t v, int64_t lo, int64_t hi) { return std::min(std::max(v, lo), hi); };
  for (int64_t ci = 0; ci < c; ++ci)
    for (int64_t y = 0; y < oh; ++y) {
      int64_t sy = clampi(y - top, 0, h - 1);
      for (int64_t xx = 0; xx < ow; ++xx) {
        int64_t sx = clampi(xx - left, 0, w - 1);
        po[(ci * oh + y) * ow + xx] = px[(ci * h + sy) * w + sx];
      }
    }
  if (rg) {
    auto xd = x.impl();
    auto od = out.impl();
    TapeT<T>::current()->record(out, [=](GradMap<T>& gm) {
      const std::vector<T>& g = *gm.find(od.get());
      std::vector<T>& gx = gm.of(xd);
      auto clampi2 = [](int64_t v, int64_t lo, int64_t hi) {
        return std::min(std::max(v, lo), hi);
      };
      for (int64_t ci = 0; ci < c; ++ci)
        for (int64_t y = 0; y < oh; ++y) {
          int64_t sy = clampi2(y - top, 0, h - 1);
          for (int64_t xx = 0; xx < ow; ++xx) {
            int64_t sx = clampi2(xx - left, 0, w - 1);
            gx[(ci * h + sy) * w + sx] += g[(ci * oh + y) * ow + xx];
          }
        }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// softmax
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> softmax(const TensorT<T>& x, int axis) {
  const Shape& s = x.shape();
  if (axis < 0 || static_cast<size_t>(axis) >= s.size())
    fail("softmax: axis ", axis, " out of range for shape ", shape_str(s));
  int64_t k = s[static_cast<size_t>(axis)];
  int64_t outer = 1, inner = 1;
  for (size_t d = 0; d < static_cast<size_t>(axis); ++d) outer *= s[d];
  for (size_t d = static_cast<size_t>(axis) + 1; d < s.size(); ++d) inner *= s[d];

  bool rg = tracing_any<T>({&x});
  TensorT<T> out = make_op_output<T>(s, rg);
  const T* px = x.data();
  T* po = out.data();
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t i = 0; i < inner; ++i) {
      const T* base = px + o * k * inner + i;
      T* obase = po + o * k * inner + i;
      T m = base[0];
      for (int64_t j = 1; j < k; ++j) m = std::max(m, base[j * inner]);
      T z = T(0);
      for (int64_t j = 0; j < k; ++j) {
        T e = std::exp(base[j * inner] - m);
        obase[j * inner] = e;
        z += e;
      }
      T inv = T(1) / z;
      for (int64_t j = 0; j < k; ++j) obase[j * inner] *= inv;
    }
  check_op_finite("softmax", out);
  if (rg) {
    auto xd = x.impl();
    auto od = out.impl();
    TapeT<T>::current()->record(out, [=](GradMap<T>& gm) {
      const std::vector<T>& g = *gm.find(od.get());
      std::vector<T>& gx = gm.of(xd);
      for (int64_t o = 0; o < outer; ++o)
        for (int64_t i = 0; i < inner; ++i) {
          const T* y = od->values.data() + o * k * inner + i;
          const T* gy = g.data() + o * k * inner + i;
          T dot = T(0);
          for (int64_t j = 0; j < k; ++j) dot += gy[j * inner] * y[j * inner];
          T* gxp = gx.data() + o * k * inner + i;
          for (int64_t j = 0; j < k; ++j)
            gxp[j * inner] += y[j * inner] * (gy[j * inner] - dot);
        }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// gather_linear
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> gather_linear(const TensorT<T>& vol, const TensorT<T>& coords,
                         const std::vector<int>& offsets) {
  if (vol.rank() != 3) fail("gather_linear: volume must be [D,H,W], got ", shape_str(vol.shape()));
  if (coords.rank() != 2 || coords.dim(0) != vol.dim(1) || coords.dim(1) != vol.dim(2))
    fail("gather_linear: coords ", shape_str(coords.shape()), " must match volume plane of ",
         shape_str(vol.shape()));
  int64_t d = vol.dim(0), h = vol.dim(1), w = vol.dim(2);
  int64_t kk = static_cast<int64_t>(offsets.size());
  int64_t plane = h * w;
  bool rg = tracing_any<T>({&vol, &coords});
  TensorT<T> out = make_op_output<T>(Shape{kk, h, w}, rg);
  const T* pv = vol.data();
  const T* pc = coords.data();
  T* po = out.data();
  for (int64_t k = 0; k < kk; ++k) {
    T off = static_cast<T>(offsets[static_cast<size_t>(k)]);
    for (int64_t i = 0; i < plane; ++i) {
      T c = pc[i] + off;
      if (!(c >= T(0))) c = T(0);
      if (c > static_cast<T>(d - 1)) c = static_cast<T>(d - 1);
      int64_t i0 = static_cast<int64_t>(std::floor(c));
      if (i0 > d - 1) i0 = d - 1;
      int64_t i1 = std::min<int64_t>(i0 + 1, d - 1);
      T t = c - static_cast<T>(i0);
      po[k * plane + i] = (T(1) - t) * pv[i0 * plane + i] + t * pv[i1 * plane + i];
    }
  }
  check_op_finite("gather_linear", out);
  if (rg) {
    auto vd = vol.impl();
    auto cd = coords.impl();
    auto od = out.impl();
    bool need_v = vol.requires_grad();
    bool need_c = coords.requires_grad();
    auto offs = offsets;
    TapeT<T>::current()->record(out, [=](GradMap<T>& gm) {
      const std::vector<T>& g = *gm.find(od.get());
      std::vector<T>* gv = need_v ? &gm.of(vd) : nullptr;
      std::vector<T>* gc = need_c ? &gm.of(cd) : nullptr;
      for (int64_t k = 0; k < kk; ++k) {
        T off = static_cast<T>(offs[static_cast<size_t>(k)]);
        for (int64_t i = 0; i < plane; ++i) {
          T craw = cd->values[static_cast<size_t>(i)] + off;
          bool clamped = craw < T(0) || craw > static_cast<T>(d - 1);
          T c = std::min(std::max(craw, T(0)), static_cast<T>(d - 1));
          int64_t i0 = static_cast<int64_t>(std::floor(c));
          if (i0 > d - 1) i0 = d - 1;
          int64_t i1 = std::min<int64_t>(i0 + 1, d - 1);
          T t = c - static_cast<T>(i0);
          T gval = g[k * plane + i];
          if (gv) {
            (*gv)[i0 * plane + i] += gval * (T(1) - t);
            (*gv)[i1 * plane + i] += gval * t;
          }
          if (gc && !clamped)
            (*gc)[i] += gval * (vd->values[i1 * plane + i] - vd->values[i0 * plane + i]);
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// convex_upsample4x
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> convex_upsample4x(const TensorT<T>& d, const TensorT<T>& weights) {
  if (d.rank() != 2) fail("convex_upsample4x: d must be [h,w], got ", shape_str(d.shape()));
  int64_t h = d.dim(0), w = d.dim(1);
  int64_t hh = 4 * h, ww = 4 * w;
  if (weights.rank() != 3 || weights.dim(0) != 9 || weights.dim(1) != hh || weights.dim(2) != ww)
    fail("convex_upsample4x: weights must be [9,", hh, ",", ww, "], got ",
         shape_str(weights.shape()));
  bool rg = tracing_any<T>({&d, &weights});
  TensorT<T> out = make_op_output<T>(Shape{hh, ww}, rg);
  const T* pd = d.data();
  const T* pw = weights.data();
  T* po = out.data();
  int64_t plane = hh * ww;
  for (int64_t yy = 0; yy < hh; ++yy) {
    int64_t cy = yy / 4;
    for (int64_t xx = 0; xx < ww; ++xx) {
      int64_t cx = xx / 4;
      T acc = T(0);
      for (int64_t j = 0; j < 9; ++j) {
        int64_t ny = std::min(std::max<int64_t>(cy + j / 3 - 1, 0), h - 1);
        int64_t nx = std::min(std::max<int64_t>(cx + j % 3 - 1, 0), w - 1);
        acc += pw[j * plane + yy * ww + xx] * pd[ny * w + nx];
      }
      po[yy * ww + xx] = T(4) * acc;
    }
  }
  check_op_finite("convex_upsample4x", out);
  if (rg) {
    auto dd = d.impl();
    auto wd = weights.impl();
    auto od = out.impl();
    bool need_d = d.requires_grad();
    bool need_w = weights.requires_grad();
    TapeT<T>::current()->record(out, [=](GradMap<T>& gm) {
      const std::vector<T>& g = *gm.find(od.get());
      std::vector<T>* gd = need_d ? &gm.of(dd) : nullptr;
      std::vector<T>* gw = need_w ? &gm.of(wd) : nullptr;
      for (int64_t yy = 0; yy < hh; ++yy) {
        int64_t cy = yy / 4;
        for (int64_t xx = 0; xx < ww; ++xx) {
          int64_t cx = xx / 4;
          T gv = T(4) * g[yy * ww + xx];
          for (int64_t j = 0; j < 9; ++j) {
            int64_t ny = std::min(std::max<int64_t>(cy + j / 3 - 1, 0), h - 1);
            int64_t nx = std::min(std::max<int64_t>(cx + j % 3 - 1, 0), w - 1);
            if (gd) (*gd)[ny * w + nx] += gv * wd->values[j * plane + yy * ww + xx];
            if (gw) (*gw)[j * plane + yy * ww + xx] += gv * dd->values[ny * w + nx];
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
TensorT<T> x_ramp(int64_t h, int64_t w) {
  TensorT<T> t = TensorT<T>::zeros(Shape{h, w});
  T* p = t.data();
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) p[y * w + x] = static_cast<T>(x);
  return t;
}

template <typename T>
void check_op_finite(const char* op, const TensorT<T>& t) {
  if (!finite_checks_enabled()) return;
  for (T v : t.values())
    if (!std::isfinite(static_cast<double>(v)))
      fail(op, ": non-finite value in output of shape ", shape_str(t.shape()));
}

// ---------------------------------------------------------------------------
// explicit instantiation
// ---------------------------------------------------------------------------

#define MGEV_INSTANTIATE(T)                                                              \
  template class TensorT<T>;                                                             \
  template class TapeT<T>;                                                               \
  template TensorT<T> make_op_output<T>(Shape, bool);                                    \
  template TensorT<T> add(const TensorT<T>&, const TensorT<T>&);                         \
  template TensorT<T> sub(const TensorT<T>&, const TensorT<T>&);                         \
  template TensorT<T> mul(const TensorT<T>&, const TensorT<T>&);                         \
  template TensorT<T> div(const TensorT<T>&, const TensorT<T>&);                         \
  template TensorT<T> add_scalar(const TensorT<T>&, T);                                  \
  template TensorT<T> mul_scalar(const TensorT<T>&, T);                                  \
  template TensorT<T> sigmoid(const TensorT<T>&);                                        \
  template TensorT<T> vtanh(const TensorT<T>&);                                          \
  template TensorT<T> relu(const TensorT<T>&);                                           \
  template TensorT<T> vsqrt(const TensorT<T>&);                                          \
  template TensorT<T> vabs(const TensorT<T>&);                                           \
  template TensorT<T> smooth_l1(const TensorT<T>&);                                      \
  template TensorT<T> sum(const TensorT<T>&);                                            \
  template TensorT<T> mean(const TensorT<T>&);                                           \
  template TensorT<T> sum_axes(const TensorT<T>&, const std::vector<int>&);              \
  template TensorT<T> mean_axes(const TensorT<T>&, const std::vector<int>&);             \
  template TensorT<T> reshape(const TensorT<T>&, Shape);                                 \
  template TensorT<T> concat(const std::vector<TensorT<T>>&, int);                       \
  template TensorT<T> narrow(const TensorT<T>&, int, int64_t, int64_t);                  \
  template TensorT<T> conv2d(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&,    \
                             int, int);                                                  \
  template TensorT<T> conv3d(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&,    \
                             int, int);                                                  \
  template TensorT<T> conv3d_transposed(const TensorT<T>&, const TensorT<T>&,            \
                                        const TensorT<T>&, int, int);                    \
  template TensorT<T> avg_pool2d_2x(const TensorT<T>&);                                  \
  template TensorT<T> upsample_nearest2x(const TensorT<T>&);                             \
  template TensorT<T> avg_pool_bins2x(const TensorT<T>&);                                \
  template TensorT<T> pixel_shuffle2x(const TensorT<T>&);                                \
  template TensorT<T> pad_edge2d(const TensorT<T>&, int, int, int, int);                 \
  template TensorT<T> softmax(const TensorT<T>&, int);                                   \
  template TensorT<T> gather_linear(const TensorT<T>&, const TensorT<T>&,                \
                                    const std::vector<int>&);                            \
  template TensorT<T> convex_upsample4x(const TensorT<T>&, const TensorT<T>&);           \
  template TensorT<T> x_ramp(int64_t, int64_t);\
  template void check_op_finite(const char*, const TensorT<T>&);

MGEV_INSTANTIATE(float)
MGEV_INSTANTIATE(double)

#undef MGEV_INSTANTIATE

}  // namespace mgev
