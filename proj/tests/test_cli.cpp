// End-to-end checks of the command-line surface. Driven through the installed
// binary (path from MGEV_CLI) as a user would run it.
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "mgev/data.hpp"
#include "mgev/image_io.hpp"
#include "mgev/model.hpp"

using namespace mgev;
namespace fs = std::filesystem;

TEST_SUITE_BEGIN("cli");

namespace {

struct RunResult {
  int code = -1;
  std::string out, err;
};

std::string cli_path() {
  const char* p = std::getenv("MGEV_CLI");
  REQUIRE_MESSAGE(p != nullptr, "MGEV_CLI must point at the mgev binary");
  return p;
}

fs::path scratch() {
  fs::path dir = fs::temp_directory_path() / "mgev_cli_test";
  fs::create_directories(dir);
  return dir;
}

RunResult run(const std::string& args) {
  fs::path dir = scratch();
  fs::path out = dir / "stdout.txt", err = dir / "stderr.txt";
  std::string cmd = cli_path() + " " + args + " > " + out.string() + " 2> " + err.string();
  int rc = std::system(cmd.c_str());
  RunResult r;
  r.code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  std::ifstream fo(out), fe(err);
  r.out.assign(std::istreambuf_iterator<char>(fo), std::istreambuf_iterator<char>());
  r.err.assign(std::istreambuf_iterator<char>(fe), std::istreambuf_iterator<char>());
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

int count_lines(const std::string& text) {
  int n = 0;
  for (char c : text)
    if (c == '\n') ++n;
  return n;
}

const char* kToyConfig = R"({
  "variant": "rt",
  "d_s": 32,
  "n_groups": 8,
  "features": {"enc": [8, 8, 12, 16, 16], "out2": 8, "out4": 16, "out8": 8,
               "out16": 16, "out32": 16},
  "context_trunk": 12,
  "hidden": 16,
  "iters_train": 2,
  "iters_infer": 2,
  "radius": 2,
  "enc_g": 12,
  "enc_d": 8,
  "ups_mid": 8,
  "ups_half": 8,
  "seed": 3,
  "lr": 1e-4,
  "steps": 10,
  "batch": 2,
  "crop_h": 32,
  "crop_w": 64,
  "ckpt_every": 5
})";

fs::path write_toy_config(const std::string& name, const std::string& text = kToyConfig) {
  fs::path p = scratch() / name;
  std::ofstream out(p);
  out << text;
  return p;
}

}  // namespace

TEST_CASE("gen writes the manifest and all sample files deterministically") {
  fs::path d1 = scratch() / "gen1", d2 = scratch() / "gen2";
  fs::remove_all(d1);
  fs::remove_all(d2);
  auto r1 = run("gen --out " + d1.string() + " --count 4 --height 32 --width 64 --dmax 12 --seed 5");
  REQUIRE(r1.code == 0);
  auto manifest = slurp(d1 / "manifest.jsonl");
  CHECK(count_lines(manifest) == 4);
  int files = 0;
  for ([[maybe_unused]] auto& e : fs::directory_iterator(d1)) ++files;
  CHECK(files == 17);  // 4 files per sample + manifest

  auto r2 = run("gen --out " + d2.string() + " --count 4 --height 32 --width 64 --dmax 12 --seed 5");
  REQUIRE(r2.code == 0);
  CHECK(slurp(d2 / "manifest.jsonl") == manifest);
  CHECK(slurp(d2 / "000000_left.ppm") == slurp(d1 / "000000_left.ppm"));
}

TEST_CASE("gen refuses a non-empty directory without --force") {
  fs::path d = scratch() / "gen_busy";
  fs::create_directories(d);
  std::ofstream(d / "existing.txt") << "x";
  auto r = run("gen --out " + d.string() + " --count 1");
  CHECK(r.code != 0);
  CHECK(r.err.rfind("error: ", 0) == 0);
  auto rf = run("gen --out " + d.string() + " --count 1 --force");
  CHECK(rf.code == 0);
}

TEST_CASE("gen rejects dmax beyond half the width") {
  auto r = run("gen --out " + (scratch() / "gen_bad").string() +
               " --count 1 --height 32 --width 64 --dmax 40");
  CHECK(r.code != 0);
  CHECK(r.err.rfind("error: ", 0) == 0);
  CHECK(count_lines(r.err) == 1);
}

TEST_CASE("train logs one row per step and resume continues the counter") {
  fs::path data = scratch() / "train_data";
  fs::remove_all(data);
  REQUIRE(run("gen --out " + data.string() +
              " --count 6 --height 32 --width 64 --dmax 10 --seed 11")
              .code == 0);

  fs::path cfg6 = write_toy_config("cfg6.json");
  {
    std::ofstream out(cfg6);
    std::string text = kToyConfig;
    text.replace(text.find("\"steps\": 10"), 11, "\"steps\": 6");
    out << text;
  }
  fs::path ckpt = scratch() / "toy.ckpt";
  fs::path log = scratch() / "toy.log.csv";
  fs::remove(ckpt);
  fs::remove(log);
  auto r = run("train --config " + cfg6.string() + " --data " + data.string() + " --out " +
               ckpt.string() + " --log " + log.string());
  REQUIRE_MESSAGE(r.code == 0, r.err);
  auto rows = slurp(log);
  CHECK(count_lines(rows) == 7);  // header + 6 steps
  CHECK(rows.rfind("step,lr,l_reg,l_iter,l_total,ms", 0) == 0);

  // resume with a larger budget continues from step 6
  fs::path cfg10 = write_toy_config("cfg10.json");
  auto r2 = run("train --config " + cfg10.string() + " --data " + data.string() + " --out " +
                ckpt.string() + " --log " + log.string() + " --resume");
  REQUIRE_MESSAGE(r2.code == 0, r2.err);
  auto rows2 = slurp(log);
  CHECK(count_lines(rows2) == 11);  // header + 10 steps
  CHECK(rows2.find("\n6,") != std::string::npos);
  CHECK(rows2.find("\n9,") != std::string::npos);
}

TEST_CASE("infer writes a full-resolution pfm and leaves the checkpoint untouched") {
  fs::path data = scratch() / "train_data";  // reuse from the training test
  fs::path ckpt = scratch() / "toy.ckpt";
  REQUIRE(fs::exists(ckpt));
  fs::path left = data / "000000_left.ppm", right = data / "000000_right.ppm";
  fs::path out1 = scratch() / "disp1.pfm";
  std::string ckpt_before = slurp(ckpt);

  auto r1 = run("infer --ckpt " + ckpt.string() + " --left " + left.string() + " --right " +
                right.string() + " --iters 1 --out " + out1.string());
  REQUIRE_MESSAGE(r1.code == 0, r1.err);
  CHECK(r1.out.find("ms") != std::string::npos);
  auto disp = read_pfm(out1.string());
  CHECK(disp.shape() == Shape{32, 64});

  fs::path out16 = scratch() / "disp16.pfm";
  fs::path dump = scratch() / "iters";
  auto r2 = run("infer --ckpt " + ckpt.string() + " --left " + left.string() + " --right " +
                right.string() + " --iters 16 --out " + out16.string() + " --dump-iters " +
                dump.string());
  REQUIRE_MESSAGE(r2.code == 0, r2.err);
  int dumped = 0;
  for ([[maybe_unused]] auto& e : fs::directory_iterator(dump)) ++dumped;
  CHECK(dumped == 16);
  CHECK(slurp(ckpt) == ckpt_before);

  // volume debug dump: one pfm per (group, bin) of C^s plus the G^s stack
  fs::path vols = scratch() / "vols";
  auto r3 = run("infer --ckpt " + ckpt.string() + " --left " + left.string() + " --right " +
                right.string() + " --iters 1 --out " + (scratch() / "d3.pfm").string() +
                " --dump-volumes " + vols.string());
  REQUIRE_MESSAGE(r3.code == 0, r3.err);
  int cs_files = 0, gs_files = 0;
  for (auto& e : fs::directory_iterator(vols)) {
    std::string name = e.path().filename().string();
    if (name.rfind("c_s_", 0) == 0) ++cs_files;
    if (name.rfind("g_s_", 0) == 0) ++gs_files;
  }
  CHECK(cs_files == 8 * 8);  // 8 groups x 8 bins at D_s = 32
  CHECK(gs_files == 8);
}

TEST_CASE("infer rejects mismatched image sizes") {
  fs::path data = scratch() / "train_data";
  fs::path ckpt = scratch() / "toy.ckpt";
  fs::path small = scratch() / "small.ppm";
  write_ppm(small.string(), Tensor::zeros(Shape{3, 16, 32}));
  auto r = run("infer --ckpt " + ckpt.string() + " --left " + (data / "000000_left.ppm").string() +
               " --right " + small.string() + " --out " + (scratch() / "x.pfm").string());
  CHECK(r.code != 0);
  CHECK(r.err.rfind("error: ", 0) == 0);
}

TEST_CASE("eval: perfect predictions give all-zero metrics and n/a empty buckets") {
  fs::path data = scratch() / "eval_data";
  fs::remove_all(data);
  REQUIRE(run("gen --out " + data.string() +
              " --count 3 --height 32 --width 64 --dmax 10 --seed 21")
              .code == 0);
  fs::path pred = scratch() / "eval_pred";
  fs::remove_all(pred);
  fs::create_directories(pred);
  auto manifest = read_manifest((data / "manifest.jsonl").string());
  for (const auto& e : manifest) {
    auto gt = read_pfm((data / e.gt).string());
    std::string stem = fs::path(e.left).stem().string();
    stem = stem.substr(0, stem.rfind("_left"));
    write_pfm((pred / (stem + ".pfm")).string(), gt);
  }
  auto r = run("eval --pred " + pred.string() + " --data " + data.string() +
               " --ranges -1,16,64");
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(r.out.find("csv,3,0.000000,0.0000,0.0000,0.0000,0.0000,0.0000") != std::string::npos);
  CHECK(r.out.find("n/a") != std::string::npos);  // the gt<-1 bucket is empty

  // composition: the eval table equals direct per-sample metric averages
  double epe_sum = 0;
  for (const auto& e : manifest) {
    StereoSample s = load_sample(data.string(), e);
    auto rep = evaluate(read_pfm((pred / (fs::path(e.left).stem().string().substr(0, 6) + ".pfm"))
                                     .string()),
                        s.gt_disparity, valid_mask(s.gt_disparity, 1e30), {});
    epe_sum += rep.epe;
  }
  CHECK(epe_sum == doctest::Approx(0.0));
}

TEST_CASE("eval lists missing predictions before rejecting") {
  fs::path data = scratch() / "eval_data";
  fs::path empty = scratch() / "eval_nopred";
  fs::create_directories(empty);
  auto r = run("eval --pred " + empty.string() + " --data " + data.string());
  CHECK(r.code != 0);
  CHECK(r.err.find("missing prediction") != std::string::npos);
  CHECK(r.err.find("error: ") != std::string::npos);
}

TEST_CASE("account reports the multi-range vs full-range bin counts") {
  fs::path cfg = scratch() / "full.json";
  std::ofstream(cfg) << "{\"variant\":\"full\"}";
  auto r = run("account --config " + cfg.string() + " --height 256 --width 768 --json");
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(r.out.find("\"mgev_bins_per_group\": 144") != std::string::npos);
  CHECK(r.out.find("\"full_range_bins_per_group\": 192") != std::string::npos);
  CHECK(r.out.find("\"rt\"") != std::string::npos);
}

TEST_CASE("unknown config keys fail fast with a one-line reason") {
  fs::path cfg = scratch() / "bad.json";
  std::ofstream(cfg) << "{\"variant\":\"full\",\"hideden\":128}";
  auto r = run("account --config " + cfg.string());
  CHECK(r.code != 0);
  CHECK(r.err.rfind("error: ", 0) == 0);
  CHECK(count_lines(r.err) == 1);
}

TEST_SUITE_END();
