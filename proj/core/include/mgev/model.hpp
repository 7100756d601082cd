// Whole-network assembly and its configuration.
#pragma once

#include "mgev/checkpoint.hpp"
#include "mgev/loss.hpp"
#include "mgev/update.hpp"

namespace mgev {

struct ModelConfig {
  std::string variant = "full";  // "full" | "rt" (single range, single-level GRU)
  int d_s = 192, d_m = 384, d_l = 768;
  int n_groups = 8;
  FeatureNetConfig features;
  int context_trunk = 128;
  int hidden = 128;  // 96 under rt
  int gru_levels = 3;
  int iters_train = 22;
  int iters_infer = 16;
  int radius = 4;
  int apc_levels = 3;
  int enc_g = 96, enc_d = 64, sgff = 64, ups_mid = 32, ups_half = 64;
  uint64_t seed = 0;
  double lr = 2e-4;
  int64_t steps = 200000;
  int batch = 8;
  int crop_h = 256, crop_w = 768;
  double lambda_s = 1.0, lambda_m = 0.5, lambda_l = 0.2;
  double gamma = 0.9;
  double weight_decay = 1e-5;
  double brightness_jitter = 0.0;
  int64_t ckpt_every = 1000;

  bool single_range() const { return variant == "rt"; }
  int max_active_disp() const { return single_range() ? d_s : d_l; }
  void validate() const;
  LossConfig loss_config() const;

  // strict parse: unknown keys are rejected
  static ModelConfig from_json_text(const std::string& text);
  static ModelConfig from_json_file(const std::string& path);
  std::string to_json_text() const;
};

template <typename T>
class Model {
 public:
  Model() = default;
  explicit Model(const ModelConfig& cfg);

  struct Forward {
    CorrelationVolumeSet<T> vols;
    GeometrySet<T> geo;
    DisparityField<T> field;
  };

  // images [3,H,W] with H,W divisible by 32
  Forward forward(const TensorT<T>& left, const TensorT<T>& right, int iters,
                  bool upsample_each) const;

  ParamList<T> named_params() const;
  const ModelConfig& config() const { return cfg_; }

  void save(const std::string& path, const ParamList<T>& extra = {}) const;
  // loads matching names; "__"-prefixed entries are returned for the caller
  ParamList<T> load(const std::string& path);

 private:
  ModelConfig cfg_;
  FeatureNet<T> fnet_;
  ContextNet<T> cnet_;
  TensorT<T> omega_m_, omega_l_;
  Regularizer<T> reg_;
  UpdateBlock<T> update_;
};

// Pads to /32 by edge replication, runs the model without gradient tracking,
// crops back. per_iter, when given, receives every upsampled iterate.
template <typename T>
TensorT<T> infer_disparity(const Model<T>& model, const TensorT<T>& left,
                           const TensorT<T>& right, int iters,
                           std::vector<TensorT<T>>* per_iter = nullptr);

}  // namespace mgev
