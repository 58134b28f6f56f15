#pragma once

#include <cstdint>
#include <vector>

#include "recontour/ad/array.hpp"

namespace recontour::geom {

struct Point {
  double x = 0.0;
  double y = 0.0;
};

// Closed ring of vertices in image-pixel coordinates. Vertex i connects to
// vertex (i+1) mod size; the ring is counter-clockwise after canonicalization.
struct Contour {
  std::vector<Point> v;
  int size() const { return static_cast<int>(v.size()); }
};

// Cyclic first differences of a contour, including the closing offset.
// Translation-invariant; offsets sum to exactly (0, 0).
struct ShapeRep {
  std::vector<Point> offsets;
};

struct Mask {
  int h = 0, w = 0;
  std::vector<uint8_t> m;  // 0/1, row-major
  int count() const;
};

double signed_area(const std::vector<Point>& poly);
double perimeter(const std::vector<Point>& poly);
Point centroid(const std::vector<Point>& poly);

// Forces counter-clockwise orientation (signed area > 0) and rotates the
// start to the max-x vertex (ties broken by min y). Rejects polygons with
// fewer than 3 vertices or zero signed area. Idempotent.
std::vector<Point> canonicalize(const std::vector<Point>& poly);

// Canonicalizes, then places n_v points at equal arclength spacing along the
// boundary starting from the canonical start vertex.
Contour resample_uniform(const std::vector<Point>& poly, int n_v);

ShapeRep shape_rep(const Contour& c);

// Even-odd scanline fill with the pixel-center inclusion rule: pixel (r, c)
// is set iff the point (c + 0.5, r + 0.5) lies inside the polygon.
Mask rasterize(const Contour& c, int h, int w);

// |A.B| / |A|B|; 1.0 when both masks are empty.
double mask_iou(const Mask& a, const Mask& b);

// Mean symmetric boundary Chamfer distance between two vertex rings.
double chamfer_distance(const Contour& a, const Contour& b);

// Conversions between geometry contours and [N, 2] arrays of (x, y) rows.
template <typename T>
ad::ArrayT<T> to_array(const Contour& c) {
  ad::ArrayT<T> out({c.size(), 2});
  for (int i = 0; i < c.size(); ++i) {
    out[i * 2] = static_cast<T>(c.v[static_cast<size_t>(i)].x);
    out[i * 2 + 1] = static_cast<T>(c.v[static_cast<size_t>(i)].y);
  }
  return out;
}

template <typename T>
Contour from_array(const ad::ArrayT<T>& a) {
  Contour c;
  c.v.resize(static_cast<size_t>(a.dim(0)));
  for (int i = 0; i < a.dim(0); ++i) {
    c.v[static_cast<size_t>(i)].x = static_cast<double>(a[i * 2]);
    c.v[static_cast<size_t>(i)].y = static_cast<double>(a[i * 2 + 1]);
  }
  return c;
}

}  // namespace recontour::geom
