#include "mgev/optimizer.hpp"

#include <cmath>

namespace mgev {

double OneCycleSchedule::lr_at(int64_t step) const {
  if (total_steps <= 1) return peak_lr / start_div;
  int64_t warm = static_cast<int64_t>(warmup_frac * static_cast<double>(total_steps));
  if (warm < 1) warm = 1;
  double start = peak_lr / start_div;
  double final_lr = peak_lr / final_div;
  if (step < warm)
    return start + (peak_lr - start) * static_cast<double>(step) / static_cast<double>(warm);
  double t = static_cast<double>(step - warm) / static_cast<double>(total_steps - 1 - warm);
  if (t > 1.0) t = 1.0;
  return peak_lr + (final_lr - peak_lr) * t;
}

template <typename T>
AdamW<T>::AdamW(ParamList<T> params, OneCycleSchedule schedule, double beta1, double beta2,
                double eps, double weight_decay, double clip)
    : params_(std::move(params)),
      schedule_(schedule),
      beta1_(beta1),
      beta2_(beta2),
      eps_(eps),
      weight_decay_(weight_decay),
      clip_(clip) {
  for (auto& [name, p] : params_) {
    (void)name;
    m_.emplace_back(p.numel(), T(0));
    v_.emplace_back(p.numel(), T(0));
  }
}

template <typename T>
double AdamW<T>::step() {
  double lr = schedule_.lr_at(step_count_);
  int64_t t = step_count_ + 1;
  double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t));
  double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t));
  for (size_t i = 0; i < params_.size(); ++i) {
    auto& [name, p] = params_[i];
    const std::vector<T>& g = p.grad();
    if (!g.empty())
      for (T gv : g)
        if (!std::isfinite(static_cast<double>(gv)))
          fail("optimizer_step: non-finite gradient in parameter '", name, "'");
    std::vector<T>& m = m_[i];
    std::vector<T>& v = v_[i];
    T* pv = p.data();
    for (int64_t j = 0; j < p.numel(); ++j) {
      double gv = g.empty() ? 0.0 : static_cast<double>(g[static_cast<size_t>(j)]);
      if (gv > clip_) gv = clip_;
      if (gv < -clip_) gv = -clip_;
      double mj = beta1_ * static_cast<double>(m[static_cast<size_t>(j)]) + (1.0 - beta1_) * gv;
      double vj = beta2_ * static_cast<double>(v[static_cast<size_t>(j)]) +
                  (1.0 - beta2_) * gv * gv;
      m[static_cast<size_t>(j)] = static_cast<T>(mj);
      v[static_cast<size_t>(j)] = static_cast<T>(vj);
      double mhat = mj / bc1;
      double vhat = vj / bc2;
      double update = mhat / (std::sqrt(vhat) + eps_) +
                      weight_decay_ * static_cast<double>(pv[j]);
      pv[j] = static_cast<T>(static_cast<double>(pv[j]) - lr * update);
    }
    p.clear_grad();
  }
  ++step_count_;
  return lr;
}

template <typename T>
ParamList<T> AdamW<T>::state_entries() const {
  ParamList<T> out;
  out.emplace_back("__opt__/step",
                   TensorT<T>::scalar(static_cast<T>(step_count_)));
  for (size_t i = 0; i < params_.size(); ++i) {
    out.emplace_back("__opt__/m/" + params_[i].first,
                     TensorT<T>::from(params_[i].second.shape(), m_[i]));
    out.emplace_back("__opt__/v/" + params_[i].first,
                     TensorT<T>::from(params_[i].second.shape(), v_[i]));
  }
  return out;
}

template <typename T>
void AdamW<T>::load_state(const ParamList<T>& entries) {
  for (const auto& [name, t] : entries) {
    if (name == "__opt__/step") {
      step_count_ = static_cast<int64_t>(t.item());
      continue;
    }
    for (size_t i = 0; i < params_.size(); ++i) {
      if (name == "__opt__/m/" + params_[i].first) {
        if (t.numel() != params_[i].second.numel())
          fail("optimizer resume: moment shape mismatch for '", params_[i].first, "'");
        m_[i] = t.values();
      } else if (name == "__opt__/v/" + params_[i].first) {
        if (t.numel() != params_[i].second.numel())
          fail("optimizer resume: moment shape mismatch for '", params_[i].first, "'");
        v_[i] = t.values();
      }
    }
  }
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace mgev
