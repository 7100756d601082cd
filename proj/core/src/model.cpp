#include "mgev/model.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace mgev {

void ModelConfig::validate() const {
  if (variant != "full" && variant != "rt")
    fail("config: variant must be 'full' or 'rt', got '", variant, "'");
  RangeSpec spec{d_s, d_m, d_l, n_groups};
  spec.validate(single_range());
  if (variant == "rt" && gru_levels != 1)
    fail("config: rt variant requires gru_levels 1, got ", gru_levels);
  if (gru_levels != 1 && gru_levels != 3)
    fail("config: gru_levels must be 1 or 3, got ", gru_levels);
  if (hidden < 1) fail("config: hidden channels must be positive, got ", hidden);
  if (features.out4 % n_groups)
    fail("config: quarter-scale feature channels ", features.out4,
         " must be divisible by N_g = ", n_groups);
  if (iters_train < 1 || iters_infer < 1)
    fail("config: iteration counts must be >= 1, got train ", iters_train, " / infer ",
         iters_infer);
  if (crop_h % 32 || crop_w % 32)
    fail("config: crop dims must be divisible by 32, got ", crop_h, "x", crop_w);
  if (batch < 1) fail("config: batch must be >= 1, got ", batch);
  if (steps < 1) fail("config: steps must be >= 1, got ", steps);
  if (lr <= 0) fail("config: lr must be positive, got ", lr);
  if (radius < 0) fail("config: radius must be >= 0, got ", radius);
  if (apc_levels < 1 || apc_levels > 3)
    fail("config: apc_levels must be 1..3, got ", apc_levels);
  if (gamma <= 0 || gamma > 1) fail("config: gamma must be in (0,1], got ", gamma);
}

LossConfig ModelConfig::loss_config() const {
  LossConfig lc;
  lc.lambda_s = lambda_s;
  lc.lambda_m = lambda_m;
  lc.lambda_l = lambda_l;
  lc.gamma = gamma;
  lc.max_disp = static_cast<double>(max_active_disp());
  return lc;
}

namespace {

using nlohmann::json;

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key()))
      fail("config: unknown key '", where, it.key(), "'");
}

}  // namespace

ModelConfig ModelConfig::from_json_text(const std::string& text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) fail("config: invalid JSON");
  if (!j.is_object()) fail("config: top level must be an object");

  ModelConfig cfg;
  if (j.contains("variant")) cfg.variant = j["variant"].get<std::string>();
  if (cfg.variant == "rt") {  // variant defaults, overridable by explicit keys
    cfg.hidden = 96;
    cfg.gru_levels = 1;
    cfg.iters_infer = 6;
  }

  const std::set<std::string> known = {
      "variant",   "d_s",        "d_m",         "d_l",         "n_groups",
      "features",  "context_trunk", "hidden",   "gru_levels",  "iters_train",
      "iters_infer", "radius",   "apc_levels",  "enc_g",       "enc_d",
      "sgff",      "ups_mid",    "ups_half",    "seed",        "lr",
      "steps",     "batch",      "crop_h",      "crop_w",      "lambda_s",
      "lambda_m",  "lambda_l",   "gamma",       "weight_decay", "brightness_jitter",
      "ckpt_every"};
  reject_unknown(j, known, "");

  auto get_int = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j[key].template get<std::decay_t<decltype(field)>>();
  };
  get_int("d_s", cfg.d_s);
  get_int("d_m", cfg.d_m);
  get_int("d_l", cfg.d_l);
  get_int("n_groups", cfg.n_groups);
  get_int("context_trunk", cfg.context_trunk);
  get_int("hidden", cfg.hidden);
  get_int("gru_levels", cfg.gru_levels);
  get_int("iters_train", cfg.iters_train);
  get_int("iters_infer", cfg.iters_infer);
  get_int("radius", cfg.radius);
  get_int("apc_levels", cfg.apc_levels);
  get_int("enc_g", cfg.enc_g);
  get_int("enc_d", cfg.enc_d);
  get_int("sgff", cfg.sgff);
  get_int("ups_mid", cfg.ups_mid);
  get_int("ups_half", cfg.ups_half);
  get_int("seed", cfg.seed);
  get_int("lr", cfg.lr);
  get_int("steps", cfg.steps);
  get_int("batch", cfg.batch);
  get_int("crop_h", cfg.crop_h);
  get_int("crop_w", cfg.crop_w);
  get_int("lambda_s", cfg.lambda_s);
  get_int("lambda_m", cfg.lambda_m);
  get_int("lambda_l", cfg.lambda_l);
  get_int("gamma", cfg.gamma);
  get_int("weight_decay", cfg.weight_decay);
  get_int("brightness_jitter", cfg.brightness_jitter);
  get_int("ckpt_every", cfg.ckpt_every);

  if (j.contains("features")) {
    const json& f = j["features"];
    reject_unknown(f, {"enc", "out2", "out4", "out8", "out16", "out32"}, "features.");
    if (f.contains("enc")) {
      auto enc = f["enc"].get<std::vector<int>>();
      if (enc.size() != 5) fail("config: features.enc must have 5 stages, got ", enc.size());
      for (size_t i = 0; i < 5; ++i) cfg.features.enc[i] = enc[i];
    }
    if (f.contains("out2")) cfg.features.out2 = f["out2"].get<int>();
    if (f.contains("out4")) cfg.features.out4 = f["out4"].get<int>();
    if (f.contains("out8")) cfg.features.out8 = f["out8"].get<int>();
    if (f.contains("out16")) cfg.features.out16 = f["out16"].get<int>();
    if (f.contains("out32")) cfg.features.out32 = f["out32"].get<int>();
  }
  cfg.validate();
  return cfg;
}

ModelConfig ModelConfig::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("config: cannot open ", path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_json_text(buf.str());
}

std::string ModelConfig::to_json_text() const {
  json j;
  j["variant"] = variant;
  j["d_s"] = d_s;
  j["d_m"] = d_m;
  j["d_l"] = d_l;
  j["n_groups"] = n_groups;
  j["features"] = {{"enc", std::vector<int>(features.enc.begin(), features.enc.end())},
                   {"out2", features.out2},
                   {"out4", features.out4},
                   {"out8", features.out8},
                   {"out16", features.out16},
                   {"out32", features.out32}};
  j["context_trunk"] = context_trunk;
  j["hidden"] = hidden;
  j["gru_levels"] = gru_levels;
  j["iters_train"] = iters_train;
  j["iters_infer"] = iters_infer;
  j["radius"] = radius;
  j["apc_levels"] = apc_levels;
  j["enc_g"] = enc_g;
  j["enc_d"] = enc_d;
  j["sgff"] = sgff;
  j["ups_mid"] = ups_mid;
  j["ups_half"] = ups_half;
  j["seed"] = seed;
  j["lr"] = lr;
  j["steps"] = steps;
  j["batch"] = batch;
  j["crop_h"] = crop_h;
  j["crop_w"] = crop_w;
  j["lambda_s"] = lambda_s;
  j["lambda_m"] = lambda_m;
  j["lambda_l"] = lambda_l;
  j["gamma"] = gamma;
  j["weight_decay"] = weight_decay;
  j["brightness_jitter"] = brightness_jitter;
  j["ckpt_every"] = ckpt_every;
  return j.dump(2);
}

template <typename T>
Model<T>::Model(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(Rng::mix(cfg.seed, 0x4D4F44454Cull));  // "MODEL"
  fnet_ = FeatureNet<T>(rng, cfg.features);
  ContextNetConfig ctx_cfg{cfg.context_trunk, cfg.hidden, cfg.gru_levels};
  cnet_ = ContextNet<T>(rng, ctx_cfg);
  if (!cfg.single_range()) {
    omega_m_ = TensorT<T>::full(Shape{cfg.n_groups, 2}, T(0.5), true);
    omega_l_ = TensorT<T>::full(Shape{cfg.n_groups, 4}, T(0.25), true);
  }
  GuideChannels guide{cfg.features.out4, cfg.features.out8, cfg.features.out16,
                      cfg.features.out32};
  RangeSpec spec{cfg.d_s, cfg.d_m, cfg.d_l, cfg.n_groups};
  reg_ = Regularizer<T>(rng, spec, guide, cfg.single_range());
  UpdateConfig ucfg;
  ucfg.hidden = cfg.hidden;
  ucfg.levels = cfg.gru_levels;
  ucfg.lookup = LookupConfig{cfg.radius, cfg.apc_levels};
  ucfg.enc_g = cfg.enc_g;
  ucfg.enc_d = cfg.enc_d;
  ucfg.sgff = cfg.sgff;
  ucfg.ups_mid = cfg.ups_mid;
  ucfg.ups_half = cfg.ups_half;
  ucfg.single_range = cfg.single_range();
  ucfg.c4 = cfg.features.out4;
  ucfg.c2 = cfg.features.out2;
  update_ = UpdateBlock<T>(rng, ucfg);
}

template <typename T>
typename Model<T>::Forward Model<T>::forward(const TensorT<T>& left, const TensorT<T>& right,
                                             int iters, bool upsample_each) const {
  FeaturePyramid<T> pyr_l = fnet_(left);
  FeaturePyramid<T> pyr_r = fnet_(right);
  ContextSet<T> ctx = cnet_(left);
  RangeSpec spec{cfg_.d_s, cfg_.d_m, cfg_.d_l, cfg_.n_groups};
  Forward fwd;
  fwd.vols = build_volumes(pyr_l, pyr_r, spec, omega_m_, omega_l_, cfg_.single_range());
  fwd.geo = reg_(fwd.vols, pyr_l);
  fwd.field = update_.iterate(fwd.geo, fwd.vols.apc, ctx, pyr_l, iters, upsample_each);
  return fwd;
}

template <typename T>
ParamList<T> Model<T>::named_params() const {
  ParamList<T> out;
  fnet_.params("fnet", out);
  cnet_.params("cnet", out);
  if (!cfg_.single_range()) {
    out.emplace_back("omega_m", omega_m_);
    out.emplace_back("omega_l", omega_l_);
  }
  reg_.params("reg", out);
  update_.params("update", out);
  return out;
}

template <typename T>
void Model<T>::save(const std::string& path, const ParamList<T>& extra) const {
  ParamList<T> entries = named_params();
  for (const auto& e : extra) entries.push_back(e);
  save_checkpoint(path, entries);
}

template <typename T>
ParamList<T> Model<T>::load(const std::string& path) {
  auto entries = load_checkpoint<T>(path);
  ParamList<T> params = named_params();
  ParamList<T> extra;
  size_t matched = 0;
  for (auto& [name, tensor] : entries) {
    if (name.rfind("__", 0) == 0) {
      extra.emplace_back(name, tensor);
      continue;
    }
    bool found = false;
    for (auto& [pname, p] : params) {
      if (pname != name) continue;
      if (p.shape() != tensor.shape())
        fail("load: shape mismatch for '", name, "': checkpoint ", shape_str(tensor.shape()),
             " vs model ", shape_str(p.shape()));
      p.values() = tensor.values();
      found = true;
      ++matched;
      break;
    }
    if (!found) fail("load: checkpoint parameter '", name, "' not present in this model");
  }
  if (matched != params.size())
    fail("load: checkpoint provides ", matched, " of ", params.size(), " parameters");
  return extra;
}

template <typename T>
TensorT<T> infer_disparity(const Model<T>& model, const TensorT<T>& left,
                           const TensorT<T>& right, int iters,
                           std::vector<TensorT<T>>* per_iter) {
  if (left.rank() != 3 || right.rank() != 3 || left.shape() != right.shape())
    fail("infer: left/right must be same-shape [3,H,W], got ", shape_str(left.shape()),
         " vs ", shape_str(right.shape()));
  int64_t h = left.dim(1), w = left.dim(2);
  int pad_h = static_cast<int>((32 - h % 32) % 32);
  int pad_w = static_cast<int>((32 - w % 32) % 32);
  TensorT<T> l = left, r = right;
  if (pad_h || pad_w) {
    l = pad_edge2d(left, 0, pad_h, 0, pad_w);
    r = pad_edge2d(right, 0, pad_h, 0, pad_w);
  }
  auto fwd = model.forward(l, r, iters, per_iter != nullptr);
  if (per_iter) {
    per_iter->clear();
    for (auto& up : fwd.field.history_full)
      per_iter->push_back(pad_h || pad_w ? narrow(narrow(up, 0, 0, h), 1, 0, w) : up);
  }
  TensorT<T> out = fwd.field.final_full;
  if (pad_h || pad_w) out = narrow(narrow(out, 0, 0, h), 1, 0, w);
  return out.detached_copy();
}

template class Model<float>;
template class Model<double>;
template TensorT<float> infer_disparity(const Model<float>&, const TensorT<float>&,
                                        const TensorT<float>&, int, std::vector<TensorT<float>>*);
template TensorT<double> infer_disparity(const Model<double>&, const TensorT<double>&,
                                         const TensorT<double>&, int,
                                         std::vector<TensorT<double>>*);

}  // namespace mgev
