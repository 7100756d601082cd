#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "mgev/checkpoint.hpp"
#include "test_support.hpp"

using namespace mgev;
using testutil::rand_tensor;
namespace fs = std::filesystem;

TEST_SUITE_BEGIN("checkpoint");

TEST_CASE("roundtrip preserves names, shapes and bits") {
  Rng rng(901);
  fs::path p = fs::temp_directory_path() / "mgev_ckpt_test.bin";
  std::vector<std::pair<std::string, Tensor>> entries = {
      {"a.w", rand_tensor<float>(rng, Shape{3, 2, 3, 3})},
      {"a.b", rand_tensor<float>(rng, Shape{3})},
      {"nested.block.gamma", rand_tensor<float>(rng, Shape{4, 1, 1})},
  };
  save_checkpoint(p.string(), entries);
  auto back = load_checkpoint<float>(p.string());
  REQUIRE(back.size() == entries.size());
  for (size_t i = 0; i < entries.size(); ++i) {
    CHECK(back[i].first == entries[i].first);
    REQUIRE(back[i].second.shape() == entries[i].second.shape());
    for (int64_t j = 0; j < back[i].second.numel(); ++j)
      CHECK(back[i].second.data()[j] == entries[i].second.data()[j]);
  }
  fs::remove(p);
}

TEST_CASE("magic string guards the format") {
  fs::path p = fs::temp_directory_path() / "mgev_ckpt_badmagic.bin";
  {
    std::ofstream out(p, std::ios::binary);
    out << "NOTACKPT1" << std::string(32, '\0');
  }
  CHECK_THROWS_AS(load_checkpoint<float>(p.string()), Error);
  fs::remove(p);
}

TEST_CASE("f32 checkpoints load into f64 tensors") {
  Rng rng(907);
  fs::path p = fs::temp_directory_path() / "mgev_ckpt_f32.bin";
  std::vector<std::pair<std::string, Tensor>> entries = {
      {"p", rand_tensor<float>(rng, Shape{5})}};
  save_checkpoint(p.string(), entries);
  auto wide = load_checkpoint<double>(p.string());
  REQUIRE(wide.size() == 1);
  for (int64_t i = 0; i < 5; ++i)
    CHECK(wide[0].second.data()[i] == doctest::Approx(entries[0].second.data()[i]));
  fs::remove(p);
}

TEST_CASE("text entries round-trip through float payloads") {
  std::string text = "{\"variant\":\"rt\",\"hidden\":96}";
  auto t = encode_text<float>(text);
  CHECK(decode_text(t) == text);
}

TEST_SUITE_END();
