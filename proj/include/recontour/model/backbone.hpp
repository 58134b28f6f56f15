#pragma once

#include "recontour/ad/ops.hpp"
#include "recontour/model/params.hpp"

namespace recontour::model {

// Feature maps and detection heads produced from one image.
//   F  : [H/R, W/R, D]   semantic features for contour deformation
//   F0 : [H, W, 32]      full-scale low-level features
//   F1 : [H/2, W/2, 16]  half-scale low-level features
//   Y  : [H/R, W/R, C]   center heatmap (sigmoid)
//   S  : [H/R, W/R, 2Nv] initial-contour offset map (unbounded)
//   B  : [H/R, W/R, 1]   boundary confidence (sigmoid), training-only aux
template <typename T>
struct BackboneOut {
  ad::ArrayT<T> F, F0, F1, Y, S, B;
};

namespace detail {

template <typename T>
ad::ArrayT<T> conv_block(const ad::ArrayT<T>& x, const ParamStoreT<T>& p,
                         const std::string& name, int stride, int pad) {
  return ad::relu(ad::conv2d(x, p.get(name + ".w"), p.get(name + ".b"), stride, pad));
}

}  // namespace detail

template <typename T>
BackboneOut<T> backbone_forward(const ad::ArrayT<T>& image, const ParamStoreT<T>& p,
                                const RunConfig& cfg) {
  ad::check(image.rank() == 3 && image.dim(2) == 3, "backbone: image must be [H, W, 3]");
  const int h = image.dim(0), w = image.dim(1);
  ad::check(h % 8 == 0 && w % 8 == 0,
            "backbone: image dimensions must be divisible by 8, got " + std::to_string(h) + "x" +
                std::to_string(w));

  BackboneOut<T> out;
  auto a0 = detail::conv_block(image, p, "bb.stem", 1, 1);   // [H, W, c1]
  auto a1 = detail::conv_block(a0, p, "bb.down1", 2, 1);     // [H/2, W/2, c2]
  auto a2 = detail::conv_block(a1, p, "bb.down2", 2, 1);     // [H/4, W/4, c3]
  auto a3 = detail::conv_block(a2, p, "bb.down3", 2, 1);     // [H/8, W/8, c3]
  auto a4 = detail::conv_block(a3, p, "bb.mid", 1, 1);       // [H/8, W/8, c3]

  auto up = ad::upsample2x_bilinear(a4);                     // [H/4, W/4, c3]
  auto proj = detail::conv_block(up, p, "bb.up_proj", 1, 0); // 1x1 -> D
  auto lat = ad::conv2d(a2, p.get("bb.lat.w"), p.get("bb.lat.b"), 1, 0);
  out.F = detail::conv_block(ad::add(proj, lat), p, "bb.fuse", 1, 1);  // [H/4, W/4, D]

  out.F0 = a0;
  out.F1 = ad::conv2d(a1, p.get("bb.f1_proj.w"), p.get("bb.f1_proj.b"), 1, 0);

  auto yh = detail::conv_block(out.F, p, "head.y.c1", 1, 1);
  out.Y = ad::sigmoid(ad::conv2d(yh, p.get("head.y.c2.w"), p.get("head.y.c2.b"), 1, 0));
  auto sh = detail::conv_block(out.F, p, "head.s.c1", 1, 1);
  out.S = ad::conv2d(sh, p.get("head.s.c2.w"), p.get("head.s.c2.b"), 1, 0);
  auto bh = detail::conv_block(out.F, p, "head.b.c1", 1, 1);
  out.B = ad::sigmoid(ad::conv2d(bh, p.get("head.b.c2.w"), p.get("head.b.c2.b"), 1, 0));
  return out;
}

}  // namespace recontour::model
