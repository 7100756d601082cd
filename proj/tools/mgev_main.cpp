// mgev command line: dataset generation, training, inference, evaluation, and
// the analytic memory/FLOP accountant.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <unordered_map>

#include "CLI11.hpp"
#include "mgev/accounting.hpp"
#include "mgev/data.hpp"
#include "mgev/image_io.hpp"
#include "mgev/trainer.hpp"

namespace fs = std::filesystem;
using namespace mgev;

namespace {

std::string sample_id(int64_t index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06lld", static_cast<long long>(index));
  return buf;
}

int cmd_gen(const std::string& out_dir, int64_t count, int height, int width, int d_max,
            uint64_t seed, int layers, bool force) {
  fs::path dir(out_dir);
  if (fs::exists(dir) && !fs::is_empty(dir) && !force)
    fail("gen: output directory ", out_dir, " is not empty (use --force)");
  fs::create_directories(dir);
  std::vector<ManifestEntry> manifest;
  for (int64_t i = 0; i < count; ++i) {
    uint64_t sample_seed = seed + static_cast<uint64_t>(i);
    StereoSample s = generate_rds(sample_seed, height, width, d_max, layers);
    std::string id = sample_id(i);
    ManifestEntry e;
    e.left = id + "_left.ppm";
    e.right = id + "_right.ppm";
    e.gt = id + "_gt.pfm";
    e.mask = id + "_mask.pgm";
    e.d_max = d_max;
    e.seed = sample_seed;
    write_ppm((dir / e.left).string(), s.left);
    write_ppm((dir / e.right).string(), s.right);
    write_pfm((dir / e.gt).string(), s.gt_disparity);
    write_pgm((dir / e.mask).string(), s.occlusion_mask);
    manifest.push_back(std::move(e));
  }
  write_manifest((dir / "manifest.jsonl").string(), manifest);
  std::cout << "wrote " << count << " samples to " << out_dir << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_ckpt, const std::string& log_csv, bool resume,
              bool deterministic) {
  if (deterministic) set_max_threads(1);
  ModelConfig cfg = ModelConfig::from_json_file(config_path);
  auto manifest = read_manifest((fs::path(data_dir) / "manifest.jsonl").string());
  if (manifest.empty()) fail("train: empty manifest in ", data_dir);

  Model<float> model(cfg);
  auto cache = std::make_shared<std::unordered_map<int64_t, StereoSample>>();
  auto loader = [cache, data_dir, manifest](int64_t idx) -> StereoSample {
    auto it = cache->find(idx);
    if (it != cache->end()) return it->second;
    StereoSample s = load_sample(data_dir, manifest[static_cast<size_t>(idx)]);
    (*cache)[idx] = s;
    return s;
  };
  Trainer trainer(model, loader, static_cast<int64_t>(manifest.size()));
  TrainOptions opts;
  opts.out_checkpoint = out_ckpt;
  opts.log_csv = log_csv.empty() ? out_ckpt + ".log.csv" : log_csv;
  opts.resume = resume;
  if (deterministic) opts.threads = 1;
  int64_t end_step = trainer.run(opts);
  std::cout << "trained to step " << end_step << ", checkpoint " << out_ckpt << "\n";
  return 0;
}

Model<float> load_model_from_checkpoint(const std::string& ckpt,
                                        const std::string& config_override) {
  ModelConfig cfg;
  if (!config_override.empty()) {
    cfg = ModelConfig::from_json_file(config_override);
  } else {
    auto entries = load_checkpoint<float>(ckpt);
    bool found = false;
    for (auto& [name, t] : entries)
      if (name == "__config__") {
        cfg = ModelConfig::from_json_text(decode_text(t));
        found = true;
        break;
      }
    if (!found)
      fail("infer: checkpoint ", ckpt, " carries no config; pass --config");
  }
  Model<float> model(cfg);
  model.load(ckpt);
  return model;
}

Tensor pad_to_32(const Tensor& img) {
  int pad_h = static_cast<int>((32 - img.dim(1) % 32) % 32);
  int pad_w = static_cast<int>((32 - img.dim(2) % 32) % 32);
  return pad_h || pad_w ? pad_edge2d(img, 0, pad_h, 0, pad_w) : img;
}

int cmd_infer(const std::string& ckpt, const std::string& left_path,
              const std::string& right_path, int iters, const std::string& out_pfm,
              const std::string& dump_dir, const std::string& volume_dir,
              const std::string& config_override, bool deterministic) {
  if (deterministic) set_max_threads(1);
  Model<float> model = load_model_from_checkpoint(ckpt, config_override);
  Tensor left = read_image(left_path);
  Tensor right = read_image(right_path);
  if (left.shape() != right.shape())
    fail("infer: image sizes differ, ", shape_str(left.shape()), " vs ",
         shape_str(right.shape()));
  if (iters < 1) iters = model.config().iters_infer;

  std::vector<Tensor> per_iter;
  auto t0 = std::chrono::steady_clock::now();
  Tensor disp = infer_disparity(model, left, right, iters,
                                dump_dir.empty() ? nullptr : &per_iter);
  auto t1 = std::chrono::steady_clock::now();
  write_pfm(out_pfm, disp);
  if (!dump_dir.empty()) {
    fs::create_directories(dump_dir);
    for (size_t k = 0; k < per_iter.size(); ++k) {
      char name[32];
      std::snprintf(name, sizeof(name), "iter_%02zu.pfm", k + 1);
      write_pfm((fs::path(dump_dir) / name).string(), per_iter[k]);
    }
  }
  if (!volume_dir.empty()) {
    fs::create_directories(volume_dir);
    auto fwd = model.forward(pad_to_32(left), pad_to_32(right), 1, false);
    write_pfm_stack(volume_dir, "c_s", fwd.vols.c_s);
    if (fwd.vols.c_m.defined()) write_pfm_stack(volume_dir, "c_m", fwd.vols.c_m);
    if (fwd.vols.c_l.defined()) write_pfm_stack(volume_dir, "c_l", fwd.vols.c_l);
    write_pfm_stack(volume_dir, "g_s", fwd.geo.g_s);
    if (fwd.geo.g_m.defined()) write_pfm_stack(volume_dir, "g_m", fwd.geo.g_m);
    if (fwd.geo.g_l.defined()) write_pfm_stack(volume_dir, "g_l", fwd.geo.g_l);
  }
  double ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
  std::cout << "inference " << iters << " iterations, " << ms << " ms, wrote " << out_pfm
            << "\n";
  return 0;
}

int cmd_eval(const std::string& pred_dir, const std::string& data_dir,
             const std::string& ranges_csv, bool use_noc_mask) {
  auto manifest = read_manifest((fs::path(data_dir) / "manifest.jsonl").string());
  if (manifest.empty()) fail("eval: empty manifest in ", data_dir);
  std::vector<double> ranges;
  {
    std::stringstream ss(ranges_csv);
    std::string tok;
    while (std::getline(ss, tok, ','))
      if (!tok.empty()) ranges.push_back(std::stod(tok));
  }

  // predictions are <pred_dir>/<id>.pfm with <id> from the left image stem
  std::vector<std::string> missing;
  std::vector<std::pair<std::string, fs::path>> preds;
  for (const auto& e : manifest) {
    std::string stem = fs::path(e.left).stem().string();
    size_t pos = stem.rfind("_left");
    if (pos != std::string::npos) stem = stem.substr(0, pos);
    fs::path p = fs::path(pred_dir) / (stem + ".pfm");
    if (!fs::exists(p)) missing.push_back(p.string());
    preds.emplace_back(stem, p);
  }
  if (!missing.empty()) {
    for (const auto& m : missing) std::cerr << "missing prediction: " << m << "\n";
    fail("eval: ", missing.size(), " of ", manifest.size(), " predictions missing");
  }

  MetricsReport avg;
  avg.buckets.resize(ranges.size());
  for (size_t b = 0; b < ranges.size(); ++b) avg.buckets[b].max_gt = ranges[b];
  std::vector<int64_t> bucket_samples(ranges.size(), 0);
  int64_t n = 0;
  for (size_t i = 0; i < manifest.size(); ++i) {
    StereoSample s = load_sample(data_dir, manifest[i]);
    Tensor pred = read_pfm(preds[i].second.string());
    Tensor mask = use_noc_mask ? s.occlusion_mask : valid_mask(s.gt_disparity, 1e30);
    MetricsReport r = evaluate(pred, s.gt_disparity, mask, ranges);
    avg.epe += r.epe;
    for (int k = 0; k < 4; ++k) avg.bad[k] += r.bad[k];
    avg.d1 += r.d1;
    avg.count += r.count;
    for (size_t b = 0; b < ranges.size(); ++b)
      if (r.buckets[b].count > 0) {
        avg.buckets[b].epe += r.buckets[b].epe;
        avg.buckets[b].bad3 += r.buckets[b].bad3;
        avg.buckets[b].count += r.buckets[b].count;
        ++bucket_samples[b];
      }
    ++n;
  }
  avg.epe /= n;
  for (int k = 0; k < 4; ++k) avg.bad[k] /= n;
  avg.d1 /= n;
  for (size_t b = 0; b < ranges.size(); ++b)
    if (bucket_samples[b] > 0) {
      avg.buckets[b].epe /= static_cast<double>(bucket_samples[b]);
      avg.buckets[b].bad3 /= static_cast<double>(bucket_samples[b]);
    }

  // machine-readable line, then the aligned table
  std::cout << "csv,samples,epe,bad1,bad2,bad3,bad4,d1\n";
  std::printf("csv,%lld,%.6f,%.4f,%.4f,%.4f,%.4f,%.4f\n", static_cast<long long>(n), avg.epe,
              avg.bad[0], avg.bad[1], avg.bad[2], avg.bad[3], avg.d1);
  std::printf("%-14s %10s %10s %10s\n", "bucket", "epe", "bad3", "pixels");
  std::printf("%-14s %10.4f %10.4f %10lld\n", "all", avg.epe, avg.bad[2],
              static_cast<long long>(avg.count));
  for (size_t b = 0; b < ranges.size(); ++b) {
    char label[32];
    std::snprintf(label, sizeof(label), "gt<%g", ranges[b]);
    if (bucket_samples[b] == 0)
      std::printf("%-14s %10s %10s %10s\n", label, "n/a", "n/a", "0");
    else
      std::printf("%-14s %10.4f %10.4f %10lld\n", label, avg.buckets[b].epe,
                  avg.buckets[b].bad3, static_cast<long long>(avg.buckets[b].count));
  }
  return 0;
}

int cmd_account(const std::string& config_path, int height, int width, bool as_json) {
  ModelConfig cfg = ModelConfig::from_json_file(config_path);
  if (height <= 0) height = cfg.crop_h;
  if (width <= 0) width = cfg.crop_w;
  std::cout << (as_json ? account_json(cfg, height, width) : account_text(cfg, height, width))
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-range geometry-encoding-volume stereo matcher"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen", "generate a synthetic stereo dataset");
  std::string gen_out;
  int64_t gen_count = 16;
  int gen_h = 64, gen_w = 128, gen_dmax = 24, gen_layers = 6;
  uint64_t gen_seed = 1;
  bool gen_force = false;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--count", gen_count, "number of stereo pairs");
  gen->add_option("--height", gen_h, "image height");
  gen->add_option("--width", gen_w, "image width");
  gen->add_option("--dmax", gen_dmax, "maximum disparity in px");
  gen->add_option("--seed", gen_seed, "base seed");
  gen->add_option("--layers", gen_layers, "textured layers per sample");
  gen->add_flag("--force", gen_force, "write into a non-empty directory");

  auto* train = app.add_subcommand("train", "train a model");
  std::string tr_config, tr_data, tr_out, tr_log;
  bool tr_resume = false, tr_det = false;
  train->add_option("--config", tr_config, "model config JSON")->required();
  train->add_option("--data", tr_data, "dataset directory with manifest.jsonl")->required();
  train->add_option("--out", tr_out, "checkpoint path")->required();
  train->add_option("--log", tr_log, "CSV log path (default <out>.log.csv)");
  train->add_flag("--resume", tr_resume, "resume from the checkpoint if present");
  train->add_flag("--deterministic", tr_det, "single-threaded bitwise-reproducible run");

  auto* infer = app.add_subcommand("infer", "predict a disparity map");
  std::string in_ckpt, in_left, in_right, in_out, in_dump, in_vols, in_config;
  int in_iters = 0;
  bool in_det = false;
  infer->add_option("--ckpt", in_ckpt, "checkpoint")->required();
  infer->add_option("--left", in_left, "left image (PPM/PGM)")->required();
  infer->add_option("--right", in_right, "right image (PPM/PGM)")->required();
  infer->add_option("--iters", in_iters, "update iterations (default from config)");
  infer->add_option("--out", in_out, "output PFM")->required();
  infer->add_option("--dump-iters", in_dump, "directory for per-iteration PFM dumps");
  infer->add_option("--dump-volumes", in_vols,
                    "directory for cost/geometry volume PFM stacks (one file per bin)");
  infer->add_option("--config", in_config, "config override JSON");
  infer->add_flag("--deterministic", in_det, "single-threaded run");

  auto* eval = app.add_subcommand("eval", "evaluate predictions against a dataset");
  std::string ev_pred, ev_data, ev_ranges = "192,384,512,768";
  bool ev_noc = false;
  eval->add_option("--pred", ev_pred, "directory of predicted PFMs")->required();
  eval->add_option("--data", ev_data, "dataset directory")->required();
  eval->add_option("--ranges", ev_ranges, "comma-separated gt bucket thresholds");
  eval->add_flag("--noc", ev_noc, "evaluate non-occluded pixels only");

  auto* account = app.add_subcommand("account", "analytic memory and FLOP report");
  std::string ac_config;
  int ac_h = 0, ac_w = 0;
  bool ac_json = false;
  account->add_option("--config", ac_config, "model config JSON")->required();
  account->add_option("--height", ac_h, "input height (default crop_h)");
  account->add_option("--width", ac_w, "input width (default crop_w)");
  account->add_flag("--json", ac_json, "emit JSON");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed())
      return cmd_gen(gen_out, gen_count, gen_h, gen_w, gen_dmax, gen_seed, gen_layers,
                     gen_force);
    if (train->parsed()) return cmd_train(tr_config, tr_data, tr_out, tr_log, tr_resume, tr_det);
    if (infer->parsed())
      return cmd_infer(in_ckpt, in_left, in_right, in_iters, in_out, in_dump, in_vols,
                       in_config, in_det);
    if (eval->parsed()) return cmd_eval(ev_pred, ev_data, ev_ranges, ev_noc);
    if (account->parsed()) return cmd_account(ac_config, ac_h, ac_w, ac_json);
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
  return 0;
}
