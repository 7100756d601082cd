#include "mgev/accounting.hpp"

#include <sstream>

#include "json.hpp"

namespace mgev {

namespace {

int64_t conv2d_flops(int64_t in_ch, int64_t out_ch, int64_t k, int64_t h, int64_t w) {
  return 2 * in_ch * out_ch * k * k * h * w;
}

ModelConfig rt_counterpart(const ModelConfig& cfg) {
  ModelConfig rt = cfg;
  rt.variant = "rt";
  rt.gru_levels = 1;
  rt.hidden = std::min(cfg.hidden, 96);
  return rt;
}

}  // namespace

AccountReport compute_account(const ModelConfig& cfg, int height, int width) {
  cfg.validate();
  if (height % 32 || width % 32)
    fail("account: dims must be divisible by 32, got ", height, "x", width);
  AccountReport rep;
  const int64_t hq = height / 4, wq = width / 4;
  const int64_t plane = hq * wq;
  const bool single = cfg.single_range();

  rep.mgev_bins = cfg.d_s / 4 + (single ? 0 : cfg.d_m / 8 + cfg.d_l / 16);
  rep.full_range_bins = cfg.max_active_disp() / 4;
  rep.mgev_elements = rep.mgev_bins * cfg.n_groups * plane;
  rep.full_range_elements = rep.full_range_bins * cfg.n_groups * plane;
  rep.apc_elements = (wq + wq / 2 + wq / 4) * hq * wq;
  rep.mgev_bytes_f32 = rep.mgev_elements * 4;
  rep.full_range_bytes_f32 = rep.full_range_elements * 4;

  // one update iteration
  auto add = [&](const std::string& name, int64_t flops) {
    rep.flop_breakdown.emplace_back(name, flops);
    rep.flops_per_iteration += flops;
  };
  const int64_t taps = 2 * cfg.radius + 1;
  const int64_t ranges = single ? 1 : 3;
  // linear interpolation: ~4 FLOPs per tap
  add("lookup", (ranges + cfg.apc_levels) * taps * 4 * plane);
  const int64_t geom_ch = taps + cfg.apc_levels * taps;
  if (!single) {
    int64_t f = conv2d_flops(3, cfg.sgff, 3, hq, wq) +
                conv2d_flops(cfg.features.out4 + cfg.sgff, 3, 3, hq, wq) +
                2 * 3 * taps * plane;  // blend
    add("sgff", f);
  }
  add("enc_g", conv2d_flops(geom_ch, cfg.enc_g, 3, hq, wq) +
                   conv2d_flops(cfg.enc_g, cfg.enc_g, 3, hq, wq));
  add("enc_d", conv2d_flops(1, cfg.enc_d, 7, hq, wq) +
                   conv2d_flops(cfg.enc_d, cfg.enc_d, 3, hq, wq));
  const int64_t x_ch = cfg.enc_g + cfg.enc_d + 1;
  if (cfg.gru_levels == 1) {
    add("gru_1_4", 3 * conv2d_flops(cfg.hidden + x_ch, cfg.hidden, 3, hq, wq));
  } else {
    add("gru_1_4", 3 * conv2d_flops(2 * cfg.hidden + x_ch, cfg.hidden, 3, hq, wq));
    add("gru_1_8", 3 * conv2d_flops(3 * cfg.hidden, cfg.hidden, 3, hq / 2, wq / 2));
    add("gru_1_16", 3 * conv2d_flops(2 * cfg.hidden, cfg.hidden, 3, hq / 4, wq / 4));
  }
  add("delta_d", conv2d_flops(cfg.hidden, cfg.hidden, 3, hq, wq) +
                     conv2d_flops(cfg.hidden, 1, 3, hq, wq));
  add("upsample", conv2d_flops(cfg.hidden, cfg.ups_mid, 3, hq, wq) +
                      conv2d_flops(cfg.ups_mid + cfg.features.out2, cfg.ups_half, 3, 2 * hq,
                                   2 * wq) +
                      conv2d_flops(cfg.ups_half, 36, 3, 2 * hq, 2 * wq) +
                      2 * 9 * 2 * (4 * plane * 4));  // softmax + convex combination
  return rep;
}

namespace {

nlohmann::json report_json(const AccountReport& rep) {
  nlohmann::json j;
  j["mgev_bins_per_group"] = rep.mgev_bins;
  j["full_range_bins_per_group"] = rep.full_range_bins;
  j["mgev_elements"] = rep.mgev_elements;
  j["full_range_elements"] = rep.full_range_elements;
  j["apc_elements"] = rep.apc_elements;
  j["mgev_bytes_f32"] = rep.mgev_bytes_f32;
  j["full_range_bytes_f32"] = rep.full_range_bytes_f32;
  j["flops_per_iteration"] = rep.flops_per_iteration;
  nlohmann::json breakdown;
  for (const auto& [name, flops] : rep.flop_breakdown) breakdown[name] = flops;
  j["flop_breakdown"] = breakdown;
  return j;
}

}  // namespace

std::string account_json(const ModelConfig& cfg, int height, int width) {
  nlohmann::json j;
  j["height"] = height;
  j["width"] = width;
  j["config"] = report_json(compute_account(cfg, height, width));
  if (!cfg.single_range()) j["rt"] = report_json(compute_account(rt_counterpart(cfg), height, width));
  return j.dump(2);
}

std::string account_text(const ModelConfig& cfg, int height, int width) {
  AccountReport rep = compute_account(cfg, height, width);
  std::ostringstream os;
  os << "input " << height << "x" << width << ", ranges (" << cfg.d_s;
  if (!cfg.single_range()) os << ", " << cfg.d_m << ", " << cfg.d_l;
  os << "), " << cfg.n_groups << " groups\n";
  os << "volume bins/group     : " << rep.mgev_bins << " (multi-range) vs "
     << rep.full_range_bins << " (single full-range)\n";
  os << "volume elements       : " << rep.mgev_elements << " vs " << rep.full_range_elements
     << "\n";
  os << "volume bytes (f32)    : " << rep.mgev_bytes_f32 << " vs " << rep.full_range_bytes_f32
     << "\n";
  os << "apc elements          : " << rep.apc_elements << "\n";
  os << "flops per iteration   : " << rep.flops_per_iteration << "\n";
  for (const auto& [name, flops] : rep.flop_breakdown)
    os << "  " << name << ": " << flops << "\n";
  if (!cfg.single_range()) {
    AccountReport rt = compute_account(rt_counterpart(cfg), height, width);
    os << "rt variant            : " << rt.flops_per_iteration << " flops/iteration ("
       << (rep.flops_per_iteration > 0
               ? 100.0 * static_cast<double>(rt.flops_per_iteration) /
                     static_cast<double>(rep.flops_per_iteration)
               : 0.0)
       << "% of full)\n";
  }
  return os.str();
}

}  // namespace mgev
