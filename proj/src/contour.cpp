#include "recontour/geom/contour.hpp"

#include <algorithm>
#include <cmath>

namespace recontour::geom {

using ad::check;

int Mask::count() const {
  int n = 0;
  for (uint8_t b : m) n += b;
  return n;
}

double signed_area(const std::vector<Point>& poly) {
  double s = 0.0;
  const size_t n = poly.size();
  for (size_t i = 0; i < n; ++i) {
    const Point& p = poly[i];
    const Point& q = poly[(i + 1) % n];
    s += p.x * q.y - q.x * p.y;
  }
  return 0.5 * s;
}

double perimeter(const std::vector<Point>& poly) {
  double s = 0.0;
  const size_t n = poly.size();
  for (size_t i = 0; i < n; ++i) {
    const Point& p = poly[i];
    const Point& q = poly[(i + 1) % n];
    s += std::hypot(q.x - p.x, q.y - p.y);
  }
  return s;
}

Point centroid(const std::vector<Point>& poly) {
  const double a = signed_area(poly);
  const size_t n = poly.size();
  if (std::abs(a) < 1e-12) {
    Point c;
    for (const Point& p : poly) {
      c.x += p.x;
      c.y += p.y;
    }
    c.x /= static_cast<double>(n);
    c.y /= static_cast<double>(n);
    return c;
  }
  double cx = 0.0, cy = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const Point& p = poly[i];
    const Point& q = poly[(i + 1) % n];
    const double cross = p.x * q.y - q.x * p.y;
    cx += (p.x + q.x) * cross;
    cy += (p.y + q.y) * cross;
  }
  return {cx / (6.0 * a), cy / (6.0 * a)};
}

std::vector<Point> canonicalize(const std::vector<Point>& poly) {
  check(poly.size() >= 3, "canonicalize: polygon needs at least 3 vertices");
  const double a = signed_area(poly);
  check(a != 0.0, "canonicalize: zero signed area");
  std::vector<Point> out = poly;
  if (a < 0.0) std::reverse(out.begin(), out.end());
  size_t start = 0;
  for (size_t i = 1; i < out.size(); ++i) {
    if (out[i].x > out[start].x ||
        (out[i].x == out[start].x && out[i].y < out[start].y))
      start = i;
  }
  std::rotate(out.begin(), out.begin() + static_cast<long>(start), out.end());
  return out;
}

Contour resample_uniform(const std::vector<Point>& poly, int n_v) {
  check(n_v >= 3, "resample_uniform: need at least 3 output vertices");
  std::vector<Point> p = canonicalize(poly);
  const size_t n = p.size();
  std::vector<double> seglen(n);
  double total = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const Point& a = p[i];
    const Point& b = p[(i + 1) % n];
    seglen[i] = std::hypot(b.x - a.x, b.y - a.y);
    total += seglen[i];
  }
  check(total > 0.0, "resample_uniform: zero perimeter");

  Contour out;
  out.v.resize(static_cast<size_t>(n_v));
  const double step = total / static_cast<double>(n_v);
  size_t seg = 0;
  double seg_start = 0.0;
  for (int k = 0; k < n_v; ++k) {
    const double target = step * static_cast<double>(k);
    while (seg + 1 < n && seg_start + seglen[seg] <= target) {
      seg_start += seglen[seg];
      ++seg;
    }
    const double t = seglen[seg] > 0.0 ? (target - seg_start) / seglen[seg] : 0.0;
    const Point& a = p[seg];
    const Point& b = p[(seg + 1) % n];
    out.v[static_cast<size_t>(k)] = {a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)};
  }
  return out;
}

ShapeRep shape_rep(const Contour& c) {
  const int n = c.size();
  check(n >= 2, "shape_rep: need at least 2 vertices");
  ShapeRep r;
  r.offsets.resize(static_cast<size_t>(n));
  double sx = 0.0, sy = 0.0;
  for (int i = 0; i + 1 < n; ++i) {
    const double dx = c.v[static_cast<size_t>(i + 1)].x - c.v[static_cast<size_t>(i)].x;
    const double dy = c.v[static_cast<size_t>(i + 1)].y - c.v[static_cast<size_t>(i)].y;
    r.offsets[static_cast<size_t>(i)] = {dx, dy};
    sx += dx;
    sy += dy;
  }
  // Closing offset balances the ring so the offsets sum to exactly (0, 0).
  r.offsets[static_cast<size_t>(n - 1)] = {-sx, -sy};
  return r;
}

Mask rasterize(const Contour& c, int h, int w) {
  check(h >= 0 && w >= 0, "rasterize: negative canvas");
  Mask mask;
  mask.h = h;
  mask.w = w;
  mask.m.assign(static_cast<size_t>(h) * static_cast<size_t>(w), 0);
  const int n = c.size();
  if (n < 3) return mask;

  std::vector<double> xs;
  for (int row = 0; row < h; ++row) {
    const double y = row + 0.5;
    xs.clear();
    for (int i = 0; i < n; ++i) {
      const Point& p = c.v[static_cast<size_t>(i)];
      const Point& q = c.v[static_cast<size_t>((i + 1) % n)];
      // Half-open span in y so a vertex on the scanline is counted once.
      if ((p.y <= y && q.y > y) || (q.y <= y && p.y > y)) {
        xs.push_back(p.x + (y - p.y) * (q.x - p.x) / (q.y - p.y));
      }
    }
    std::sort(xs.begin(), xs.end());
    uint8_t* rowp = mask.m.data() + static_cast<size_t>(row) * w;
    for (size_t k = 0; k + 1 < xs.size(); k += 2) {
      // pixel centers c+0.5 in [xs[k], xs[k+1])
      int c0 = static_cast<int>(std::ceil(xs[k] - 0.5));
      int c1 = static_cast<int>(std::ceil(xs[k + 1] - 0.5)) - 1;
      c0 = std::max(c0, 0);
      c1 = std::min(c1, w - 1);
      for (int col = c0; col <= c1; ++col) rowp[col] = 1;
    }
  }
  return mask;
}

double mask_iou(const Mask& a, const Mask& b) {
  check(a.h == b.h && a.w == b.w, "mask_iou: dimension mismatch");
  long long inter = 0, uni = 0;
  const size_t n = a.m.size();
  for (size_t i = 0; i < n; ++i) {
    const bool av = a.m[i] != 0, bv = b.m[i] != 0;
    inter += (av && bv) ? 1 : 0;
    uni += (av || bv) ? 1 : 0;
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

namespace {

double point_to_ring(const Point& p, const Contour& ring) {
  double best = std::numeric_limits<double>::infinity();
  const int n = ring.size();
  for (int i = 0; i < n; ++i) {
    const Point& a = ring.v[static_cast<size_t>(i)];
    const Point& b = ring.v[static_cast<size_t>((i + 1) % n)];
    const double vx = b.x - a.x, vy = b.y - a.y;
    const double len2 = vx * vx + vy * vy;
    double t = len2 > 0.0 ? ((p.x - a.x) * vx + (p.y - a.y) * vy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double dx = p.x - (a.x + t * vx);
    const double dy = p.y - (a.y + t * vy);
    best = std::min(best, dx * dx + dy * dy);
  }
  return std::sqrt(best);
}

}  // namespace

double chamfer_distance(const Contour& a, const Contour& b) {
  check(a.size() > 0 && b.size() > 0, "chamfer_distance: empty contour");
  double s = 0.0;
  for (const Point& p : a.v) s += point_to_ring(p, b);
  for (const Point& p : b.v) s += point_to_ring(p, a);
  return s / static_cast<double>(a.size() + b.size());
}

}  // namespace recontour::geom
