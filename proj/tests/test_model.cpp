#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "mgev/model.hpp"
#include "test_support.hpp"

using namespace mgev;
using testutil::rand_tensor;
namespace fs = std::filesystem;

TEST_SUITE_BEGIN("model");

namespace {

ModelConfig toy_config(bool single_range) {
  ModelConfig cfg;
  cfg.variant = single_range ? "rt" : "full";
  cfg.d_s = 32;
  cfg.d_m = 64;
  cfg.d_l = 128;
  cfg.n_groups = 8;
  cfg.features.enc = {8, 12, 16, 24, 32};
  cfg.features.out2 = 8;
  cfg.features.out4 = 16;
  cfg.features.out8 = 16;
  cfg.features.out16 = 24;
  cfg.features.out32 = 32;
  cfg.context_trunk = 16;
  cfg.hidden = 16;
  cfg.gru_levels = single_range ? 1 : 3;
  cfg.iters_train = 2;
  cfg.iters_infer = 2;
  cfg.radius = 2;
  cfg.enc_g = 16;
  cfg.enc_d = 8;
  cfg.sgff = 8;
  cfg.ups_mid = 8;
  cfg.ups_half = 8;
  cfg.crop_h = 32;
  cfg.crop_w = 64;
  cfg.batch = 1;
  cfg.steps = 10;
  return cfg;
}

}  // namespace

TEST_CASE("config defaults follow the training regime") {
  ModelConfig cfg;
  CHECK(cfg.iters_train == 22);
  CHECK(cfg.iters_infer == 16);
  CHECK(cfg.radius == 4);
  CHECK(cfg.lr == doctest::Approx(2e-4));
  CHECK(cfg.batch == 8);
  CHECK(cfg.crop_h == 256);
  CHECK(cfg.crop_w == 768);
  CHECK(cfg.d_s == 192);
  CHECK(cfg.d_m == 384);
  CHECK(cfg.d_l == 768);
  CHECK(cfg.gamma == doctest::Approx(0.9));
  CHECK(cfg.lambda_s == doctest::Approx(1.0));
  CHECK(cfg.lambda_m == doctest::Approx(0.5));
  CHECK(cfg.lambda_l == doctest::Approx(0.2));
}

TEST_CASE("rt variant defaults and invariants") {
  auto cfg = ModelConfig::from_json_text("{\"variant\":\"rt\",\"d_s\":192}");
  CHECK(cfg.hidden == 96);
  CHECK(cfg.gru_levels == 1);
  CHECK(cfg.single_range());
  CHECK_THROWS_AS(ModelConfig::from_json_text("{\"variant\":\"rt\",\"gru_levels\":3}"), Error);
}

TEST_CASE("unknown config keys rejected") {
  CHECK_THROWS_AS(ModelConfig::from_json_text("{\"variannt\":\"full\"}"), Error);
  CHECK_THROWS_AS(ModelConfig::from_json_text("{\"features\":{\"out5\":3}}"), Error);
}

TEST_CASE("crop must stay divisible by 32") {
  CHECK_THROWS_AS(ModelConfig::from_json_text("{\"crop_h\":100}"), Error);
}

TEST_CASE("config json round-trips") {
  ModelConfig cfg = toy_config(false);
  auto back = ModelConfig::from_json_text(cfg.to_json_text());
  CHECK(back.to_json_text() == cfg.to_json_text());
}

TEST_CASE("full-variant forward produces coherent shapes") {
  ModelConfig cfg = toy_config(false);
  Model<float> model(cfg);
  Rng rng(1001);
  auto left = rand_tensor<float>(rng, Shape{3, 32, 64}, 0, 1);
  auto right = rand_tensor<float>(rng, Shape{3, 32, 64}, 0, 1);
  auto fwd = model.forward(left, right, 2, true);
  CHECK(fwd.geo.g_s.shape() == Shape{8, 8, 16});
  CHECK(fwd.geo.g_m.shape() == Shape{8, 8, 16});
  CHECK(fwd.geo.g_l.shape() == Shape{8, 8, 16});
  CHECK(fwd.geo.d0_s.shape() == Shape{8, 16});
  CHECK(fwd.field.history.size() == 2);
  CHECK(fwd.field.history_full.size() == 2);
  CHECK(fwd.field.final_full.shape() == Shape{32, 64});
  for (float v : fwd.field.final_full.values()) CHECK(std::isfinite(v));
}

TEST_CASE("rt-variant forward produces coherent shapes") {
  ModelConfig cfg = toy_config(true);
  Model<float> model(cfg);
  Rng rng(1003);
  auto left = rand_tensor<float>(rng, Shape{3, 32, 64}, 0, 1);
  auto right = rand_tensor<float>(rng, Shape{3, 32, 64}, 0, 1);
  auto fwd = model.forward(left, right, 2, false);
  CHECK(!fwd.geo.g_m.defined());
  CHECK(fwd.field.final_full.shape() == Shape{32, 64});
}

TEST_CASE("save/load reproduces the forward pass bitwise") {
  ModelConfig cfg = toy_config(false);
  Model<float> model(cfg);
  Rng rng(1007);
  auto left = rand_tensor<float>(rng, Shape{3, 32, 64}, 0, 1);
  auto right = rand_tensor<float>(rng, Shape{3, 32, 64}, 0, 1);
  auto before = model.forward(left, right, 2, false).field.final_full;

  fs::path p = fs::temp_directory_path() / "mgev_model_test.ckpt";
  model.save(p.string());

  ModelConfig cfg2 = cfg;
  cfg2.seed = 999;  // different init, then overwritten by load
  Model<float> reloaded(cfg2);
  reloaded.load(p.string());
  auto after = reloaded.forward(left, right, 2, false).field.final_full;
  for (int64_t i = 0; i < before.numel(); ++i) CHECK(before.data()[i] == after.data()[i]);
  fs::remove(p);
}

TEST_CASE("infer pads odd sizes and crops back") {
  ModelConfig cfg = toy_config(true);
  Model<float> model(cfg);
  Rng rng(1009);
  auto left = rand_tensor<float>(rng, Shape{3, 40, 70}, 0, 1);
  auto right = rand_tensor<float>(rng, Shape{3, 40, 70}, 0, 1);
  auto disp = infer_disparity(model, left, right, 2);
  CHECK(disp.shape() == Shape{40, 70});
  std::vector<Tensor> per_iter;
  auto disp2 = infer_disparity(model, left, right, 2, &per_iter);
  CHECK(per_iter.size() == 2);
  CHECK(per_iter.back().shape() == Shape{40, 70});
  for (int64_t i = 0; i < disp.numel(); ++i) CHECK(disp.data()[i] == disp2.data()[i]);
}

TEST_CASE("identical images run through both variants without error") {
  for (bool single : {true, false}) {
    ModelConfig cfg = toy_config(single);
    Model<float> model(cfg);
    Rng rng(1013);
    auto img = rand_tensor<float>(rng, Shape{3, 32, 64}, 0, 1);
    auto disp = infer_disparity(model, img, img, 1);
    CHECK(disp.shape() == Shape{32, 64});
  }
}

TEST_SUITE_END();
