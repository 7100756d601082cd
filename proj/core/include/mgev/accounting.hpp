// Analytic memory and FLOP accounting for a configuration: multi-range volume
// sizes versus a hypothetical single full-range volume, and the per-iteration
// cost of the update operator.
#pragma once

#include "mgev/model.hpp"

namespace mgev {

struct AccountReport {
  // per group, at quarter resolution
  int64_t mgev_bins = 0;        // D_s/4 [+ D_m/8 + D_l/16]
  int64_t full_range_bins = 0;  // D_l/4 (D_s/4 for single-range configs)
  // for the given input size
  int64_t mgev_elements = 0;
  int64_t full_range_elements = 0;
  int64_t apc_elements = 0;
  int64_t mgev_bytes_f32 = 0;
  int64_t full_range_bytes_f32 = 0;
  // one update iteration (training mode, including upsampling), in FLOPs
  // (multiply-accumulate counted as 2)
  int64_t flops_per_iteration = 0;
  std::vector<std::pair<std::string, int64_t>> flop_breakdown;
};

AccountReport compute_account(const ModelConfig& cfg, int height, int width);

// two-column comparison of the config against its rt counterpart
std::string account_text(const ModelConfig& cfg, int height, int width);
std::string account_json(const ModelConfig& cfg, int height, int width);

}  // namespace mgev
