#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace recontour::model {

// All run settings, overridable from a key=value text file and CLI flags.
// Loading echoes every effective value back so runs are attributable.
struct RunConfig {
  // geometry of the task
  int canvas = 64;        // square canvas H = W, divisible by 8
  int classes = 4;        // one per shape kind
  int nv = 128;           // contour vertex count
  int stride = 4;         // feature-map downsampling R
  int feat_dim = 64;      // channel dim D of the 1/R feature map

  // iterative deformation
  int iters = 6;          // K
  double lambda = 0.8;    // temporal loss weighting
  double alpha = 1.0;     // shape-loss weight

  // architecture widths
  int bb_c1 = 32, bb_c2 = 64, bb_c3 = 128;  // encoder stage channels
  int f1_dim = 16;        // 1/2-scale low-level map channels
  int agg_width = 64;     // circle-conv stack width
  int agg_layers = 8;
  int agg_ks = 9;
  int fuse1 = 128, fuse2 = 64, fuse3 = 64;  // 1x1 fusion widths
  int head_width = 64;    // offset-head hidden width
  int mcr_dim = 8;        // fused full-scale map channels D2
  int mcr_agg_width = 16;
  int mcr_fuse1 = 32, mcr_fuse2 = 16, mcr_fuse3 = 16;

  // detection decoding
  double peak_threshold = 0.3;
  int top_k = 32;

  // data generation
  std::string kinds = "ellipse,rounded-rect,star,blob";
  int min_instances = 1;
  int max_instances = 3;
  std::string train_seeds = "0..1999";
  std::string val_seeds = "2000..2199";
  std::string test_seeds = "2200..2399";

  // optimization
  int batch = 8;
  int threads = 2;
  double lr = 1e-4;
  double lr_decay = 0.5;
  std::string lr_milestones = "3500,4600";
  int stage1_steps = 5200;
  int stage2_steps = 1200;
  int checkpoint_every = 1000;
  uint64_t seed = 1;

  // paths
  std::string data_dir = "data";
  std::string out_dir = "runs/default";

  // contour feature channels: aggregated features plus 2 coordinates
  int dv() const { return fuse3 + 2; }

  std::string echo() const;                 // canonical key=value dump
  uint64_t hash() const;                    // FNV-1a of the echo
  static RunConfig load(const std::string& path);
  void set(const std::string& key, const std::string& value);  // throws on unknown key
};

std::vector<int> parse_int_list(const std::string& csv);
std::pair<uint64_t, uint64_t> parse_seed_range(const std::string& s);  // "a..b" inclusive
std::vector<std::string> split_csv(const std::string& csv);

}  // namespace recontour::model
