// Training loop: batched forward/backward with sample-level parallelism,
// gradient merge in fixed sample order (bitwise reproducible at any thread
// count), optimizer stepping, CSV logging, checkpointing and resume.
#pragma once

#include <functional>

#include "mgev/data.hpp"
#include "mgev/model.hpp"
#include "mgev/optimizer.hpp"

namespace mgev {

struct StepStats {
  int64_t step = 0;
  double lr = 0.0, l_reg = 0.0, l_iter = 0.0, l_total = 0.0;
  double ms = 0.0;
};

struct TrainOptions {
  std::string out_checkpoint;   // written every ckpt_every steps and at the end
  std::string log_csv;          // "step,lr,l_reg,l_iter,l_total,ms"; empty = no log
  bool resume = false;
  int threads = 0;              // 0 = max_threads()
  // return false to stop early (the checkpoint is still written)
  std::function<bool(const StepStats&)> on_step;
};

class Trainer {
 public:
  using Loader = std::function<StereoSample(int64_t)>;

  Trainer(Model<float>& model, Loader loader, int64_t dataset_size);

  // runs until cfg.steps (or early stop); returns the last step executed + 1
  int64_t run(const TrainOptions& opts);

  AdamW<float>& optimizer() { return opt_; }

 private:
  StepStats train_step(int64_t step, int threads);

  Model<float>& model_;
  Loader loader_;
  int64_t dataset_size_;
  AdamW<float> opt_;
};

}  // namespace mgev
