#include "mgev/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <thread>

namespace mgev {

namespace {

struct SampleResult {
  GradMap<float> grads;
  double l_reg = 0.0, l_iter = 0.0;
};

Tensor crop2(const Tensor& t, int64_t y0, int64_t x0, int64_t h, int64_t w) {
  Tensor out = Tensor::zeros(Shape{h, w});
  for (int64_t y = 0; y < h; ++y)
    std::copy(t.data() + (y0 + y) * t.dim(1) + x0, t.data() + (y0 + y) * t.dim(1) + x0 + w,
              out.data() + y * w);
  return out;
}

Tensor crop3(const Tensor& t, int64_t y0, int64_t x0, int64_t h, int64_t w) {
  int64_t c = t.dim(0), th = t.dim(1), tw = t.dim(2);
  (void)th;
  Tensor out = Tensor::zeros(Shape{c, h, w});
  for (int64_t ci = 0; ci < c; ++ci)
    for (int64_t y = 0; y < h; ++y)
      std::copy(t.data() + (ci * th + y0 + y) * tw + x0,
                t.data() + (ci * th + y0 + y) * tw + x0 + w, out.data() + (ci * h + y) * w);
  return out;
}

}  // namespace

Trainer::Trainer(Model<float>& model, Loader loader, int64_t dataset_size)
    : model_(model), loader_(std::move(loader)), dataset_size_(dataset_size) {
  const ModelConfig& cfg = model.config();
  OneCycleSchedule sched;
  sched.peak_lr = cfg.lr;
  sched.total_steps = cfg.steps;
  opt_ = AdamW<float>(model.named_params(), sched, 0.9, 0.999, 1e-8, cfg.weight_decay, 1.0);
}

StepStats Trainer::train_step(int64_t step, int threads) {
  const ModelConfig& cfg = model_.config();
  const int batch = cfg.batch;
  Rng step_rng(Rng::mix(cfg.seed, 0x53544550ull + static_cast<uint64_t>(step)));

  struct Job {
    StereoSample sample;
    double jitter = 1.0;
  };
  std::vector<Job> jobs(static_cast<size_t>(batch));
  for (int b = 0; b < batch; ++b) {
    int64_t idx = step_rng.uniform_int(dataset_size_);
    StereoSample s = loader_(idx);
    int64_t h = s.left.dim(1), w = s.left.dim(2);
    int64_t ch = std::min<int64_t>(cfg.crop_h, h), cw = std::min<int64_t>(cfg.crop_w, w);
    if (ch != h || cw != w) {
      int64_t y0 = step_rng.uniform_int(h - ch + 1);
      int64_t x0 = step_rng.uniform_int(w - cw + 1);
      s.left = crop3(s.left, y0, x0, ch, cw);
      s.right = crop3(s.right, y0, x0, ch, cw);
      s.gt_disparity = crop2(s.gt_disparity, y0, x0, ch, cw);
    }
    double jit = cfg.brightness_jitter > 0.0
                     ? step_rng.uniform(1.0 - cfg.brightness_jitter, 1.0 + cfg.brightness_jitter)
                     : 1.0;
    jobs[static_cast<size_t>(b)] = Job{std::move(s), jit};
  }

  const LossConfig loss_cfg = cfg.loss_config();
  std::vector<SampleResult> results(static_cast<size_t>(batch));
  auto run_sample = [&](int b) {
    const Job& job = jobs[static_cast<size_t>(b)];
    Tensor left = job.sample.left, right = job.sample.right;
    if (job.jitter != 1.0) {
      left = left.detached_copy();
      right = right.detached_copy();
      for (auto& v : left.values()) v = std::min(1.0f, std::max(0.0f, v * static_cast<float>(job.jitter)));
      for (auto& v : right.values()) v = std::min(1.0f, std::max(0.0f, v * static_cast<float>(job.jitter)));
    }
    Tape tape;
    auto fwd = model_.forward(left, right, cfg.iters_train, true);
    Tensor gt = job.sample.gt_disparity;
    Tensor mask = valid_mask(gt, loss_cfg.max_disp);
    Tensor gt_q = downsample_quarter(gt);
    Tensor mask_q = downsample_quarter(mask);
    Tensor l_reg = reg_loss(fwd.geo, gt_q, mask_q, loss_cfg);
    Tensor l_iter = iter_loss(fwd.field.history_full, gt, mask, loss_cfg.gamma);
    Tensor l_total = total_loss(l_reg, l_iter);
    SampleResult& res = results[static_cast<size_t>(b)];
    res.l_reg = l_reg.item();
    res.l_iter = l_iter.item();
    tape.backward(l_total, res.grads);
  };

  if (threads <= 1 || batch == 1) {
    for (int b = 0; b < batch; ++b) run_sample(b);
  } else {
    std::vector<std::thread> pool;
    std::atomic<int> next{0};
    int nt = std::min(threads, batch);
    for (int t = 0; t < nt; ++t)
      pool.emplace_back([&]() {
        for (int b = next.fetch_add(1); b < batch; b = next.fetch_add(1)) run_sample(b);
      });
    for (auto& th : pool) th.join();
  }

  // fixed merge order: parameter major, then sample
  float inv_batch = 1.0f / static_cast<float>(batch);
  for (auto& [name, p] : model_.named_params()) {
    (void)name;
    bool touched = false;
    for (auto& res : results)
      if (res.grads.find(p.key())) touched = true;
    if (!touched) continue;
    if (!p.has_grad()) p.zero_grad();
    auto& g = p.grad_storage();
    for (auto& res : results) {
      const std::vector<float>* sg = res.grads.find(p.key());
      if (!sg) continue;
      for (size_t i = 0; i < g.size(); ++i) g[i] += (*sg)[i] * inv_batch;
    }
  }

  StepStats stats;
  stats.step = step;
  for (auto& res : results) {
    stats.l_reg += res.l_reg / batch;
    stats.l_iter += res.l_iter / batch;
  }
  stats.l_total = stats.l_reg + stats.l_iter;
  return stats;
}

int64_t Trainer::run(const TrainOptions& opts) {
  const ModelConfig& cfg = model_.config();
  int64_t start_step = 0;
  if (opts.resume && !opts.out_checkpoint.empty()) {
    std::ifstream probe(opts.out_checkpoint, std::ios::binary);
    if (probe.good()) {
      auto extra = model_.load(opts.out_checkpoint);
      opt_.load_state(extra);
      start_step = opt_.step_count();
    }
  }

  std::ofstream log;
  if (!opts.log_csv.empty()) {
    log.open(opts.log_csv, start_step > 0 ? std::ios::app : std::ios::out);
    if (!log) fail("train: cannot open log ", opts.log_csv);
    if (start_step == 0) log << "step,lr,l_reg,l_iter,l_total,ms\n";
  }

  int threads = opts.threads > 0 ? opts.threads : max_threads();
  int64_t step = start_step;
  for (; step < cfg.steps; ++step) {
    auto t0 = std::chrono::steady_clock::now();
    StepStats stats = train_step(step, threads);
    if (!std::isfinite(stats.l_total)) {
      if (log) log.flush();
      fail("train: non-finite loss at step ", step, " (last checkpoint retained)");
    }
    stats.lr = opt_.step();
    auto t1 = std::chrono::steady_clock::now();
    stats.ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    if (log) {
      char line[160];
      std::snprintf(line, sizeof(line), "%lld,%.8g,%.8g,%.8g,%.8g,%.3f\n",
                    static_cast<long long>(stats.step), stats.lr, stats.l_reg, stats.l_iter,
                    stats.l_total, stats.ms);
      log << line;
    }
    bool keep_going = true;
    if (opts.on_step) keep_going = opts.on_step(stats);
    bool last = !keep_going || step + 1 >= cfg.steps;
    if (!opts.out_checkpoint.empty() &&
        (last || (cfg.ckpt_every > 0 && (step + 1) % cfg.ckpt_every == 0))) {
      ParamList<float> extra = opt_.state_entries();
      extra.emplace_back("__config__", encode_text<float>(cfg.to_json_text()));
      model_.save(opts.out_checkpoint, extra);
    }
    if (!keep_going) {
      ++step;
      break;
    }
  }
  return step;
}

}  // namespace mgev
