// Synthetic stereo pairs with dense ground truth, the dataset manifest, and
// the evaluation metrics.
#pragma once

#include <string>
#include <vector>

#include "mgev/random.hpp"
#include "mgev/tensor.hpp"

namespace mgev {

struct StereoSample {
  Tensor left, right;     // [3,H,W] in [0,1], values on the 1/255 grid
  Tensor gt_disparity;    // [H,W] full-resolution px
  Tensor occlusion_mask;  // [H,W], 1 = visible in both views
  int d_max = 0;
  uint64_t seed = 0;
};

// Layered random-texture stereogram: `layers` fronto-parallel or slanted
// rectangles, nearer layers carry larger disparity and occlude farther ones.
// Half the layers get fractional disparities. Deterministic per seed.
StereoSample generate_rds(uint64_t seed, int height, int width, int d_max, int layers);

struct MetricsReport {
  double epe = 0.0;
  double bad[4] = {0, 0, 0, 0};  // Bad 1.0 .. Bad 4.0, percent
  double d1 = 0.0;               // KITTI rule: err > 3px and > 5% of GT
  int64_t count = 0;
  struct Bucket {
    double max_gt = 0.0;  // pixels with gt < max_gt
    double epe = 0.0;
    double bad3 = 0.0;
    int64_t count = 0;
  };
  std::vector<Bucket> buckets;
};

// mask: 0/1 valid-pixel map; ranges: cumulative gt-threshold buckets
MetricsReport evaluate(const Tensor& pred, const Tensor& gt, const Tensor& mask,
                       const std::vector<double>& ranges);

struct ManifestEntry {
  std::string left, right, gt, mask;
  int d_max = 0;
  uint64_t seed = 0;
};

// JSON lines, one record per sample
std::vector<ManifestEntry> read_manifest(const std::string& path);
void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries);

StereoSample load_sample(const std::string& dir, const ManifestEntry& entry);

}  // namespace mgev
