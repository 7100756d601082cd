// Dense row-major tensors with reverse-mode differentiation.
//
// Ops record pull-back closures on the thread's active Tape. backward()
// replays them in reverse execution order and deposits gradients either into
// leaf .grad buffers or into a caller-supplied GradMap (used for sample-level
// parallel training, where parameter tensors are shared between workers).
#pragma once

#include <functional>
#include <memory>
#include <unordered_map>
#include <vector>

#include "mgev/common.hpp"

namespace mgev {

template <typename T>
struct TensorData {
  Shape shape;
  std::vector<T> values;
  std::vector<T> grad;  // leaves only; empty until backward touches it
  bool requires_grad = false;
  bool is_leaf = true;
};

template <typename T>
class GradMap;

template <typename T>
class TensorT {
 public:
  TensorT() = default;

  static TensorT zeros(Shape shape, bool requires_grad = false);
  static TensorT full(Shape shape, T value, bool requires_grad = false);
  static TensorT from(Shape shape, std::vector<T> values, bool requires_grad = false);
  static TensorT scalar(T value, bool requires_grad = false);

  bool defined() const { return d_ != nullptr; }
  const Shape& shape() const { return d_->shape; }
  int64_t dim(int i) const { return d_->shape[static_cast<size_t>(i)]; }
  int rank() const { return static_cast<int>(d_->shape.size()); }
  int64_t numel() const { return static_cast<int64_t>(d_->values.size()); }

  const T* data() const { return d_->values.data(); }
  T* data() { return d_->values.data(); }
  const std::vector<T>& values() const { return d_->values; }
  std::vector<T>& values() { return d_->values; }

  T item() const {
    if (numel() != 1) fail("item() on tensor of shape ", shape_str(shape()));
    return d_->values[0];
  }

  bool requires_grad() const { return d_->requires_grad; }
  void set_requires_grad(bool rg) {
    d_->requires_grad = rg;
    d_->is_leaf = true;
  }
  bool is_leaf() const { return d_->is_leaf; }

  bool has_grad() const { return !d_->grad.empty(); }
  const std::vector<T>& grad() const { return d_->grad; }
  std::vector<T>& grad_storage() { return d_->grad; }
  void zero_grad() {
    d_->grad.assign(d_->values.size(), T(0));
  }
  void clear_grad() { d_->grad.clear(); }

  std::shared_ptr<TensorData<T>> impl() const { return d_; }
  const TensorData<T>* key() const { return d_.get(); }

  // value copy with no graph history
  TensorT detached_copy() const {
    return TensorT::from(d_->shape, d_->values, false);
  }

 private:
  explicit TensorT(std::shared_ptr<TensorData<T>> d) : d_(std::move(d)) {}
  std::shared_ptr<TensorData<T>> d_;

  template <typename U>
  friend class TapeT;
  template <typename U>
  friend TensorT<U> make_op_output(Shape shape, bool requires_grad);
};

template <typename T>
TensorT<T> make_op_output(Shape shape, bool requires_grad);

// Gradient buffers keyed by tensor identity.
template <typename T>
class GradMap {
 public:
  std::vector<T>& of(const std::shared_ptr<TensorData<T>>& td) {
    auto& e = map_[td.get()];
    if (!e.td) {
      e.td = td;
      e.g.assign(td->values.size(), T(0));
    }
    return e.g;
  }
  const std::vector<T>* find(const TensorData<T>* key) const {
    auto it = map_.find(key);
    return it == map_.end() ? nullptr : &it->second.g;
  }
  // += into .grad of every requires_grad leaf seen during backward
  void flush_leaves() {
    for (auto& [key, e] : map_) {
      (void)key;
      if (!e.td->is_leaf || !e.td->requires_grad) continue;
      auto& g = e.td->grad;
      if (g.empty()) g.assign(e.td->values.size(), T(0));
      for (size_t i = 0; i < g.size(); ++i) g[i] += e.g[i];
    }
  }
  size_t size() const { return map_.size(); }

 private:
  struct Entry {
    std::shared_ptr<TensorData<T>> td;
    std::vector<T> g;
  };
  std::unordered_map<const TensorData<T>*, Entry> map_;
};

template <typename T>
class TapeT {
 public:
  TapeT();
  ~TapeT();
  TapeT(const TapeT&) = delete;
  TapeT& operator=(const TapeT&) = delete;

  static TapeT* current();

  void record(const TensorT<T>& out, std::function<void(GradMap<T>&)> pullback);

  // Replays adjoints into `gm`; leaf .grad buffers are untouched.
  void backward(const TensorT<T>& loss, GradMap<T>& gm);
  // Convenience: accumulates leaf gradients into their .grad buffers.
  void backward(const TensorT<T>& loss);

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    std::shared_ptr<TensorData<T>> out;
    std::function<void(GradMap<T>&)> pullback;
  };
  std::vector<Node> nodes_;
  std::vector<std::shared_ptr<TensorData<T>>> leaves_;
  TapeT* prev_ = nullptr;
};

using Tensor = TensorT<float>;
using Tape = TapeT<float>;

// true when a tape is active and any input participates in differentiation;
// custom ops outside the core use it to decide whether to record pullbacks
template <typename T>
bool tracing_any(std::initializer_list<const TensorT<T>*> ins) {
  if (!TapeT<T>::current()) return false;
  for (const auto* t : ins)
    if (t->defined() && t->requires_grad()) return true;
  return false;
}

template <typename T>
void check_op_finite(const char* op, const TensorT<T>& t);

// ---- elementwise / broadcasting ----
template <typename T> TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b);
template <typename T> TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b);
template <typename T> TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b);
template <typename T> TensorT<T> div(const TensorT<T>& a, const TensorT<T>& b);
// hadamard == elementwise product; alias kept for call sites that mean "mask"
template <typename T> TensorT<T> hadamard(const TensorT<T>& a, const TensorT<T>& b) { return mul(a, b); }
template <typename T> TensorT<T> add_scalar(const TensorT<T>& a, T s);
template <typename T> TensorT<T> mul_scalar(const TensorT<T>& a, T s);
template <typename T> TensorT<T> neg(const TensorT<T>& a) { return mul_scalar(a, T(-1)); }

template <typename T> TensorT<T> sigmoid(const TensorT<T>& a);
template <typename T> TensorT<T> vtanh(const TensorT<T>& a);
template <typename T> TensorT<T> relu(const TensorT<T>& a);
template <typename T> TensorT<T> vsqrt(const TensorT<T>& a);
template <typename T> TensorT<T> vabs(const TensorT<T>& a);
// 0.5 e^2 for |e|<1 else |e|-0.5, elementwise
template <typename T> TensorT<T> smooth_l1(const TensorT<T>& e);

// ---- reductions ----
template <typename T> TensorT<T> sum(const TensorT<T>& a);
template <typename T> TensorT<T> mean(const TensorT<T>& a);
// keepdim reduction over the given axes
template <typename T> TensorT<T> sum_axes(const TensorT<T>& a, const std::vector<int>& axes);
template <typename T> TensorT<T> mean_axes(const TensorT<T>& a, const std::vector<int>& axes);

// ---- shape ----
template <typename T> TensorT<T> reshape(const TensorT<T>& a, Shape shape);
template <typename T> TensorT<T> concat(const std::vector<TensorT<T>>& parts, int axis);
template <typename T> TensorT<T> narrow(const TensorT<T>& a, int axis, int64_t start, int64_t length);

// ---- convolution ----
// x: [C,H,W] or [N,C,H,W]; w: [O,C,kh,kw]; b: optional [O]
template <typename T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b,
                  int stride, int pad);
// x: [C,D,H,W] or [N,C,D,H,W]; w: [O,C,kd,kh,kw]
template <typename T>
TensorT<T> conv3d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b,
                  int stride, int pad);
// out spatial = (in-1)*stride - 2*pad + k; w: [C,O,kd,kh,kw]
template <typename T>
TensorT<T> conv3d_transposed(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b,
                             int stride, int pad);

// ---- resampling ----
template <typename T> TensorT<T> avg_pool2d_2x(const TensorT<T>& x);          // [C,H,W], H,W even
template <typename T> TensorT<T> upsample_nearest2x(const TensorT<T>& x);     // [C,H,W]
template <typename T> TensorT<T> avg_pool_bins2x(const TensorT<T>& x);        // [D,H,W] -> [D/2,H,W]
template <typename T> TensorT<T> pixel_shuffle2x(const TensorT<T>& x);        // [4C,H,W] -> [C,2H,2W]
template <typename T> TensorT<T> pad_edge2d(const TensorT<T>& x, int top, int bottom, int left, int right);

// ---- structured ----
template <typename T> TensorT<T> softmax(const TensorT<T>& x, int axis);

// vol: [D,H,W]; coords: [H,W]; out[k,y,x] = vol interpolated at bin
// coords[y,x]+offsets[k], clamped to [0, D-1].
template <typename T>
TensorT<T> gather_linear(const TensorT<T>& vol, const TensorT<T>& coords,
                         const std::vector<int>& offsets);

// d: [h,w]; weights: [9, 4h, 4w] (convex per pixel); out[Y,X] =
// 4 * sum_j weights[j,Y,X] * d[clamped 3x3 neighborhood of (Y/4, X/4)].
template <typename T>
TensorT<T> convex_upsample4x(const TensorT<T>& d, const TensorT<T>& weights);

// non-differentiable constant: out[y,x] = x
template <typename T> TensorT<T> x_ramp(int64_t h, int64_t w);

}  // namespace mgev
