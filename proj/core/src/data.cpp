#include "mgev/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "mgev/image_io.hpp"

namespace mgev {

namespace {

float quantize255(double v) {
  double q = std::round(std::min(std::max(v, 0.0), 1.0) * 255.0) / 255.0;
  return static_cast<float>(q);
}

// One textured rectangle at a (possibly y-slanted) disparity plane. The
// texture is piecewise linear in x with knots offset by frac(disparity), so a
// bilinear warp of the rendered right view reproduces the left view exactly.
struct Layer {
  int x0 = 0, y0 = 0, w = 0, h = 0;
  double base = 0.0;    // disparity at y0
  double slope = 0.0;   // d(disparity)/dy, 0 for fronto-parallel
  std::vector<float> knots;  // [h][knot_w][3], values on the 1/255 grid
  int knot_w = 0;

  double disp_at(int y) const { return base + slope * (y - y0); }
};

}  // namespace

StereoSample generate_rds(uint64_t seed, int height, int width, int d_max, int layers) {
  if (height < 1 || width < 1) fail("generate_rds: bad dims ", height, "x", width);
  if (d_max < 0 || d_max > width / 2)
    fail("generate_rds: d_max ", d_max, " exceeds width/2 = ", width / 2);
  if (layers < 1) fail("generate_rds: need at least 1 layer, got ", layers);

  Rng rng(Rng::mix(seed, 0x5244531ull));  // "RDS"

  std::vector<Layer> stack;
  for (int k = 0; k < layers; ++k) {
    Layer l;
    if (k == 0) {
      l.x0 = 0; l.y0 = 0; l.w = width; l.h = height;
      l.base = d_max == 0 ? 0.0 : std::floor(rng.uniform(0.0, d_max / 8.0 + 1.0));
    } else {
      l.w = std::max(4, static_cast<int>(rng.uniform(width / 6.0, width / 2.0)));
      l.h = std::max(4, static_cast<int>(rng.uniform(height / 5.0, height / 1.5)));
      l.w = std::min(l.w, width);
      l.h = std::min(l.h, height);
      l.x0 = static_cast<int>(rng.uniform_int(width - l.w + 1));
      l.y0 = static_cast<int>(rng.uniform_int(height - l.h + 1));
      double lo = stack[0].base + 1.0;
      l.base = lo >= d_max ? d_max : rng.uniform(lo, static_cast<double>(d_max));
    }
    bool fractional = k > 0 && rng.bernoulli(0.5);
    if (!fractional) l.base = std::floor(l.base);
    bool slanted = k > 0 && rng.bernoulli(0.4);
    if (slanted && l.h > 1) {
      double max_slope = std::min(0.05, (d_max - l.base) / static_cast<double>(l.h));
      l.slope = rng.uniform(0.0, max_slope);
    }
    // knots sit at x0 + j - 1 + frac(d); they must cover x up to
    // x0 + w - 1 + d_max (background right-view extension)
    l.knot_w = l.w + d_max + 3;
    l.knots.resize(static_cast<size_t>(l.h) * l.knot_w * 3);
    // white noise low-passed along x so the texture stays matchable at the
    // quarter-resolution correlation grid; quantized to the 1/255 grid the
    // images are stored on
    {
      std::vector<double> raw(l.knots.size());
      for (auto& v : raw) v = rng.uniform(0.0, 1.0);
      const double k[5] = {1, 2, 3, 2, 1};
      for (int row = 0; row < l.h; ++row)
        for (int c = 0; c < 3; ++c)
          for (int j = 0; j < l.knot_w; ++j) {
            double acc = 0;
            for (int t = -2; t <= 2; ++t) {
              int jj = std::min(std::max(j + t, 0), l.knot_w - 1);
              acc += k[t + 2] * raw[(static_cast<size_t>(row) * l.knot_w + jj) * 3 + c];
            }
            // stretch the smoothed noise back toward full contrast
            double v = 0.5 + (acc / 9.0 - 0.5) * 2.2;
            l.knots[(static_cast<size_t>(row) * l.knot_w + j) * 3 + c] =
                quantize255(0.06 + 0.88 * std::min(std::max(v, 0.0), 1.0));
          }
    }
    stack.push_back(std::move(l));
  }
  // nearer layers (larger disparity) drawn later so they occlude
  std::stable_sort(stack.begin() + 1, stack.end(),
                   [](const Layer& a, const Layer& b) { return a.base < b.base; });

  StereoSample s;
  s.d_max = d_max;
  s.seed = seed;
  s.left = Tensor::zeros(Shape{3, height, width});
  s.right = Tensor::zeros(Shape{3, height, width});
  s.gt_disparity = Tensor::zeros(Shape{height, width});
  s.occlusion_mask = Tensor::zeros(Shape{height, width});

  std::vector<int> left_id(static_cast<size_t>(height) * width, -1);
  std::vector<int> right_id(static_cast<size_t>(height) * width, -1);
  const int64_t plane = static_cast<int64_t>(height) * width;

  // texture value at continuous x coordinate; knot j sits at x0 + j - 1 + frac(d)
  auto sample_knots = [](const Layer& l, int y, double x, int c) -> double {
    double d = l.disp_at(y);
    double f = d - std::floor(d);
    double u = x - l.x0 - f + 1.0;
    int row = y - l.y0;
    int j = static_cast<int>(std::floor(u));
    double t = u - j;
    j = std::min(std::max(j, 0), l.knot_w - 1);
    int j1 = std::min(j + 1, l.knot_w - 1);
    const float* kr = l.knots.data() + (static_cast<size_t>(row) * l.knot_w) * 3;
    return (1.0 - t) * kr[j * 3 + c] + t * kr[j1 * 3 + c];
  };

  for (size_t k = 0; k < stack.size(); ++k) {
    const Layer& l = stack[k];
    bool background = l.w == width && l.h == height && l.x0 == 0 && l.y0 == 0;
    for (int y = l.y0; y < l.y0 + l.h; ++y) {
      double d = l.disp_at(y);
      // left view: the rectangle itself
      for (int x = l.x0; x < l.x0 + l.w; ++x) {
        for (int c = 0; c < 3; ++c)
          s.left.data()[c * plane + static_cast<int64_t>(y) * width + x] =
              quantize255(sample_knots(l, y, x, c));
        s.gt_disparity.data()[static_cast<int64_t>(y) * width + x] = static_cast<float>(d);
        left_id[static_cast<size_t>(y) * width + x] = static_cast<int>(k);
      }
      // right view: shifted left by d; the background extends to the image edge
      int xr_lo = std::max(0, static_cast<int>(std::ceil(l.x0 - d)));
      int xr_hi = background ? width - 1
                             : std::min(width - 1, static_cast<int>(std::floor(l.x0 + l.w - 1 - d)));
      for (int xr = xr_lo; xr <= xr_hi; ++xr) {
        for (int c = 0; c < 3; ++c)
          s.right.data()[c * plane + static_cast<int64_t>(y) * width + xr] =
              quantize255(sample_knots(l, y, xr + d, c));
        right_id[static_cast<size_t>(y) * width + xr] = static_cast<int>(k);
      }
    }
  }

  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      int lid = left_id[static_cast<size_t>(y) * width + x];
      double d = s.gt_disparity.data()[static_cast<int64_t>(y) * width + x];
      double xr = x - d;
      bool visible = xr >= 0.0;
      if (visible) {
        int lo = static_cast<int>(std::floor(xr));
        int hi = static_cast<int>(std::ceil(xr));
        visible = right_id[static_cast<size_t>(y) * width + lo] == lid &&
                  right_id[static_cast<size_t>(y) * width + hi] == lid;
      }
      s.occlusion_mask.data()[static_cast<int64_t>(y) * width + x] = visible ? 1.0f : 0.0f;
    }
  return s;
}

MetricsReport evaluate(const Tensor& pred, const Tensor& gt, const Tensor& mask,
                       const std::vector<double>& ranges) {
  if (pred.shape() != gt.shape() || pred.shape() != mask.shape())
    fail("evaluate: shape mismatch ", shape_str(pred.shape()), " vs ", shape_str(gt.shape()),
         " vs ", shape_str(mask.shape()));
  MetricsReport rep;
  for (double a : ranges) rep.buckets.push_back({a, 0.0, 0.0, 0});

  double err_sum = 0.0;
  int64_t bad_counts[4] = {0, 0, 0, 0};
  int64_t d1_count = 0;
  std::vector<double> bucket_err(ranges.size(), 0.0);
  std::vector<int64_t> bucket_bad3(ranges.size(), 0);

  for (int64_t i = 0; i < pred.numel(); ++i) {
    if (mask.data()[i] < 0.5f) continue;
    double g = gt.data()[i];
    double e = std::abs(static_cast<double>(pred.data()[i]) - g);
    ++rep.count;
    err_sum += e;
    for (int k = 0; k < 4; ++k)
      if (e > k + 1.0) ++bad_counts[k];
    if (e > 3.0 && e > 0.05 * g) ++d1_count;
    for (size_t b = 0; b < ranges.size(); ++b) {
      if (g < ranges[b]) {
        ++rep.buckets[b].count;
        bucket_err[b] += e;
        if (e > 3.0) ++bucket_bad3[b];
      }
    }
  }
  if (rep.count == 0) fail("evaluate: empty valid-pixel mask");
  rep.epe = err_sum / static_cast<double>(rep.count);
  for (int k = 0; k < 4; ++k)
    rep.bad[k] = 100.0 * static_cast<double>(bad_counts[k]) / static_cast<double>(rep.count);
  rep.d1 = 100.0 * static_cast<double>(d1_count) / static_cast<double>(rep.count);
  for (size_t b = 0; b < ranges.size(); ++b) {
    if (rep.buckets[b].count > 0) {
      rep.buckets[b].epe = bucket_err[b] / static_cast<double>(rep.buckets[b].count);
      rep.buckets[b].bad3 =
          100.0 * static_cast<double>(bucket_bad3[b]) / static_cast<double>(rep.buckets[b].count);
    }
  }
  return rep;
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("read_manifest: cannot open ", path);
  std::vector<ManifestEntry> entries;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) fail("read_manifest: bad JSON at ", path, ":", lineno);
    ManifestEntry e;
    e.left = j.at("left").get<std::string>();
    e.right = j.at("right").get<std::string>();
    e.gt = j.at("gt").get<std::string>();
    e.mask = j.at("mask").get<std::string>();
    e.d_max = j.at("d_max").get<int>();
    e.seed = j.at("seed").get<uint64_t>();
    entries.push_back(std::move(e));
  }
  return entries;
}

void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path);
  if (!out) fail("write_manifest: cannot open ", path);
  for (const auto& e : entries) {
    nlohmann::json j;
    j["left"] = e.left;
    j["right"] = e.right;
    j["gt"] = e.gt;
    j["mask"] = e.mask;
    j["d_max"] = e.d_max;
    j["seed"] = e.seed;
    out << j.dump() << "\n";
  }
  if (!out) fail("write_manifest: write failed for ", path);
}

StereoSample load_sample(const std::string& dir, const ManifestEntry& entry) {
  namespace fs = std::filesystem;
  StereoSample s;
  s.left = read_image((fs::path(dir) / entry.left).string());
  s.right = read_image((fs::path(dir) / entry.right).string());
  s.gt_disparity = read_pfm((fs::path(dir) / entry.gt).string());
  Tensor m = read_pgm((fs::path(dir) / entry.mask).string());
  s.occlusion_mask = Tensor::zeros(m.shape());
  for (int64_t i = 0; i < m.numel(); ++i)
    s.occlusion_mask.data()[i] = m.data()[i] > 0.5f ? 1.0f : 0.0f;
  s.d_max = entry.d_max;
  s.seed = entry.seed;
  return s;
}

}  // namespace mgev
