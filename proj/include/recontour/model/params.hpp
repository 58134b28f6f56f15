#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "recontour/ad/array.hpp"
#include "recontour/data/rng.hpp"
#include "recontour/model/config.hpp"

namespace recontour::model {

// Ordered collection of named weight tensors. Registration order is fixed by
// init_params, which makes optimizer traversal and serialization
// deterministic.
template <typename T>
struct ParamStoreT {
  std::vector<std::string> names;
  std::vector<ad::ArrayT<T>> arrays;
  std::unordered_map<std::string, int> index;

  ad::ArrayT<T>& add(const std::string& name, std::vector<int> shape) {
    ad::check(index.find(name) == index.end(), "duplicate parameter: " + name);
    index[name] = static_cast<int>(names.size());
    names.push_back(name);
    arrays.emplace_back(std::move(shape));
    return arrays.back();
  }

  bool has(const std::string& name) const { return index.find(name) != index.end(); }

  ad::ArrayT<T>& get(const std::string& name) {
    auto it = index.find(name);
    ad::check(it != index.end(), "unknown parameter: " + name);
    return arrays[static_cast<size_t>(it->second)];
  }
  const ad::ArrayT<T>& get(const std::string& name) const {
    auto it = index.find(name);
    ad::check(it != index.end(), "unknown parameter: " + name);
    return arrays[static_cast<size_t>(it->second)];
  }

  long long total_count() const {
    long long n = 0;
    for (const auto& a : arrays) n += a.numel();
    return n;
  }

  // A store whose arrays are leaves on the given tape (values shared).
  ParamStoreT watched_on(ad::TapeT<T>& tape) const {
    ParamStoreT out;
    out.names = names;
    out.index = index;
    out.arrays.reserve(arrays.size());
    for (const auto& a : arrays) out.arrays.push_back(tape.leaf(a));
    return out;
  }
};

namespace detail {

template <typename T>
void fill_normal(ad::ArrayT<T>& a, data::Rng& rng, double stddev) {
  for (int i = 0; i < a.numel(); ++i) a[i] = static_cast<T>(rng.normal() * stddev);
}

// conv2d weight [Cout, Cin, kh, kw], He initialization for relu layers.
template <typename T>
void add_conv(ParamStoreT<T>& p, data::Rng& rng, const std::string& name, int cout, int cin,
              int k, bool zero = false) {
  auto& w = p.add(name + ".w", {cout, cin, k, k});
  auto& b = p.add(name + ".b", {cout});
  (void)b;
  if (!zero) fill_normal(w, rng, std::sqrt(2.0 / (cin * k * k)));
}

// circular conv weight [Cout, Cin, ks]
template <typename T>
void add_cconv(ParamStoreT<T>& p, data::Rng& rng, const std::string& name, int cout, int cin,
               int ks) {
  auto& w = p.add(name + ".w", {cout, cin, ks});
  p.add(name + ".b", {cout});
  fill_normal(w, rng, std::sqrt(2.0 / (cin * ks)));
}

// fully connected / 1x1 vertex conv weight [Out, In]
template <typename T>
void add_fc(ParamStoreT<T>& p, data::Rng& rng, const std::string& name, int out, int in,
            double gain = 2.0, bool zero = false) {
  auto& w = p.add(name + ".w", {out, in});
  p.add(name + ".b", {out});
  if (!zero) fill_normal(w, rng, std::sqrt(gain / in));
}

}  // namespace detail

// Builds every learnable tensor of the pipeline. Deterministic in the seed;
// the tensor set does not depend on the iteration count (weights are shared
// across all deformation iterations).
template <typename T>
ParamStoreT<T> init_params(uint64_t seed, const RunConfig& cfg) {
  ParamStoreT<T> p;
  data::Rng rng(seed ^ 0xA5A5A5A5DEADBEEFull);
  const int c1 = cfg.bb_c1, c2 = cfg.bb_c2, c3 = cfg.bb_c3, d = cfg.feat_dim;

  // encoder-decoder backbone
  detail::add_conv(p, rng, "bb.stem", c1, 3, 3);
  detail::add_conv(p, rng, "bb.down1", c2, c1, 3);
  detail::add_conv(p, rng, "bb.down2", c3, c2, 3);
  detail::add_conv(p, rng, "bb.down3", c3, c3, 3);
  detail::add_conv(p, rng, "bb.mid", c3, c3, 3);
  detail::add_conv(p, rng, "bb.up_proj", d, c3, 1);
  detail::add_conv(p, rng, "bb.lat", d, c3, 1);
  detail::add_conv(p, rng, "bb.fuse", d, d, 3);
  detail::add_conv(p, rng, "bb.f1_proj", cfg.f1_dim, c2, 1);

  // detection heads on F
  detail::add_conv(p, rng, "head.y.c1", cfg.head_width, d, 3);
  detail::add_conv(p, rng, "head.y.c2", cfg.classes, cfg.head_width, 1);
  {
    // bias the heatmap head so initial peak confidence is ~0.1
    auto& b = p.get("head.y.c2.b");
    for (int i = 0; i < b.numel(); ++i) b[i] = static_cast<T>(-2.19);
  }
  detail::add_conv(p, rng, "head.s.c1", cfg.head_width, d, 3);
  detail::add_conv(p, rng, "head.s.c2", 2 * cfg.nv, cfg.head_width, 1, /*zero=*/true);
  detail::add_conv(p, rng, "head.b.c1", cfg.head_width, d, 3);
  detail::add_conv(p, rng, "head.b.c2", 1, cfg.head_width, 1);

  // iterative deformation: circle-conv aggregator, GRU gates, offset head
  for (int l = 0; l < cfg.agg_layers; ++l)
    detail::add_cconv(p, rng, "icd.agg.l" + std::to_string(l), cfg.agg_width,
                      l == 0 ? d : cfg.agg_width, cfg.agg_ks);
  detail::add_fc(p, rng, "icd.agg.f0", cfg.fuse1, cfg.agg_width * cfg.agg_layers);
  detail::add_fc(p, rng, "icd.agg.f1", cfg.fuse2, cfg.fuse1);
  detail::add_fc(p, rng, "icd.agg.f2", cfg.fuse3, cfg.fuse2);
  const int dv = cfg.dv();
  detail::add_fc(p, rng, "icd.gru.wz", dv, 2 * dv, 1.0);
  detail::add_fc(p, rng, "icd.gru.wr", dv, 2 * dv, 1.0);
  detail::add_fc(p, rng, "icd.gru.wh", dv, 2 * dv, 1.0);
  detail::add_fc(p, rng, "icd.head.c1", cfg.head_width, dv);
  detail::add_fc(p, rng, "icd.head.c2", 2, cfg.head_width, 2.0, /*zero=*/true);

  // full-scale refinement: pyramid fusion + reduced-width aggregator + fc head
  detail::add_conv(p, rng, "mcr.lat_f", cfg.mcr_dim, d, 1);
  detail::add_conv(p, rng, "mcr.lat_f1", cfg.mcr_dim, cfg.f1_dim, 1);
  detail::add_conv(p, rng, "mcr.lat_f0", cfg.mcr_dim, c1, 1);
  detail::add_conv(p, rng, "mcr.smooth", cfg.mcr_dim, cfg.mcr_dim, 3);
  detail::add_fc(p, rng, "mcr.agg.in_proj", cfg.mcr_agg_width, cfg.mcr_dim);
  for (int l = 0; l < cfg.agg_layers; ++l)
    detail::add_cconv(p, rng, "mcr.agg.l" + std::to_string(l), cfg.mcr_agg_width,
                      cfg.mcr_agg_width, cfg.agg_ks);
  detail::add_fc(p, rng, "mcr.agg.f0", cfg.mcr_fuse1, cfg.mcr_agg_width * cfg.agg_layers);
  detail::add_fc(p, rng, "mcr.agg.f1", cfg.mcr_fuse2, cfg.mcr_fuse1);
  detail::add_fc(p, rng, "mcr.agg.f2", cfg.mcr_fuse3, cfg.mcr_fuse2);
  detail::add_fc(p, rng, "mcr.head", 2, cfg.mcr_fuse3 + 2, 2.0, /*zero=*/true);

  return p;
}

using ParamStore = ParamStoreT<float>;

// Little-endian weight file with a named tensor directory. The loader
// rejects unknown magic or version.
void save_params(const std::string& path, const ParamStore& store);
void load_params_into(const std::string& path, ParamStore& store);

}  // namespace recontour::model
