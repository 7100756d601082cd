// Moment-based adaptive update with decoupled weight decay, elementwise
// gradient clipping to [-1, 1], and a one-cycle learning-rate schedule.
#pragma once

#include "mgev/nn.hpp"

namespace mgev {

struct OneCycleSchedule {
  double peak_lr = 2e-4;
  int64_t total_steps = 1;
  double warmup_frac = 0.05;
  double start_div = 25.0;   // lr at step 0 = peak / start_div
  double final_div = 100.0;  // lr at the last step = peak / final_div

  // linear warmup to the peak, then linear decay
  double lr_at(int64_t step) const;
};

template <typename T>
class AdamW {
 public:
  AdamW() = default;
  AdamW(ParamList<T> params, OneCycleSchedule schedule, double beta1 = 0.9,
        double beta2 = 0.999, double eps = 1e-8, double weight_decay = 1e-5,
        double clip = 1.0);

  // consumes and clears the .grad buffers; returns the learning rate used.
  // NaN gradients reject the step, naming the offending parameter.
  double step();

  int64_t step_count() const { return step_count_; }

  // moment buffers as named tensors for checkpointing
  ParamList<T> state_entries() const;
  void load_state(const ParamList<T>& entries);

 private:
  ParamList<T> params_;
  OneCycleSchedule schedule_;
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8, weight_decay_ = 1e-5, clip_ = 1.0;
  int64_t step_count_ = 0;
  std::vector<std::vector<T>> m_, v_;
};

}  // namespace mgev
