#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "recontour/data/rng.hpp"
#include "recontour/geom/contour.hpp"
#include "recontour/geom/records.hpp"

using namespace recontour;
using geom::Contour;
using geom::Point;

namespace {

std::vector<Point> random_star_polygon(data::Rng& rng, double cx, double cy, double rmin,
                                       double rmax, int n) {
  std::vector<Point> poly(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double th = 2.0 * M_PI * i / n;
    const double r = rng.uniform(rmin, rmax);
    poly[static_cast<size_t>(i)] = {cx + r * std::cos(th), cy + r * std::sin(th)};
  }
  return poly;
}

}  // namespace

TEST_CASE("canonicalize flips CW to CCW and is idempotent") {
  std::vector<Point> ccw{{0, 0}, {1, 0}, {1, 1}, {0, 1}};
  std::vector<Point> cw{{0, 0}, {0, 1}, {1, 1}, {1, 0}};
  auto a = geom::canonicalize(ccw);
  auto b = geom::canonicalize(cw);
  CHECK(geom::signed_area(a) > 0);
  CHECK(geom::signed_area(b) > 0);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].x == b[i].x);
    CHECK(a[i].y == b[i].y);
  }
  // starts at max-x vertex, ties broken by min y
  CHECK(a[0].x == 1);
  CHECK(a[0].y == 0);
  auto c = geom::canonicalize(a);
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i].x == c[i].x);
}

TEST_CASE("canonicalize idempotent on random polygons; rejects degenerate") {
  data::Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    auto poly = random_star_polygon(rng, 10, 10, 2.0, 8.0, rng.uniform_int(3, 15));
    auto once = geom::canonicalize(poly);
    auto twice = geom::canonicalize(once);
    REQUIRE(once.size() == twice.size());
    for (size_t i = 0; i < once.size(); ++i) {
      CHECK(once[i].x == twice[i].x);
      CHECK(once[i].y == twice[i].y);
    }
  }
  std::vector<Point> line{{0, 0}, {1, 1}, {2, 2}};
  CHECK_THROWS_AS((void)geom::canonicalize(line), ad::contract_error);
}

TEST_CASE("resample_uniform of a unit square hits corners and midpoints") {
  std::vector<Point> sq{{0, 0}, {1, 0}, {1, 1}, {0, 1}};
  Contour c4 = geom::resample_uniform(sq, 4);
  REQUIRE(c4.size() == 4);
  CHECK(c4.v[0].x == doctest::Approx(1.0));
  CHECK(c4.v[0].y == doctest::Approx(0.0));
  // CCW square from (1,0): (1,1), (0,1), (0,0)
  CHECK(c4.v[1].x == doctest::Approx(1.0));
  CHECK(c4.v[1].y == doctest::Approx(1.0));
  CHECK(c4.v[2].x == doctest::Approx(0.0));
  CHECK(c4.v[2].y == doctest::Approx(1.0));
  CHECK(c4.v[3].x == doctest::Approx(0.0));
  CHECK(c4.v[3].y == doctest::Approx(0.0));

  Contour c8 = geom::resample_uniform(sq, 8);
  REQUIRE(c8.size() == 8);
  CHECK(c8.v[1].x == doctest::Approx(1.0));
  CHECK(c8.v[1].y == doctest::Approx(0.5));
  CHECK(c8.v[3].x == doctest::Approx(0.5));
  CHECK(c8.v[3].y == doctest::Approx(1.0));
}

TEST_CASE("resample_uniform keeps perimeter and equalizes gaps") {
  data::Rng rng(5);
  for (int t = 0; t < 20; ++t) {
    auto poly = random_star_polygon(rng, 20, 20, 9.0, 14.0, 12);
    const double p_orig = geom::perimeter(poly);
    Contour c = geom::resample_uniform(poly, 128);
    REQUIRE(c.size() == 128);
    std::vector<Point> as_poly(c.v.begin(), c.v.end());
    const double p_new = geom::perimeter(as_poly);
    CHECK(std::abs(p_new - p_orig) / p_orig < 0.01);
    // consecutive arclength gaps equal within 1e-6 relative (measured along
    // the source polygon, consecutive samples sit step apart by construction;
    // check chord lengths only vary smoothly: resampled arc positions are
    // exactly uniform, so verify via cumulative distance along source)
    const double step = p_orig / 128.0;
    for (int i = 0; i < 128; ++i) {
      const Point& a = c.v[static_cast<size_t>(i)];
      const Point& b = c.v[static_cast<size_t>((i + 1) % 128)];
      const double chord = std::hypot(b.x - a.x, b.y - a.y);
      CHECK(chord <= step * (1.0 + 1e-6));
    }
  }
  CHECK_THROWS_AS((void)geom::resample_uniform({{0, 0}, {0, 0}, {0, 0}}, 16),
                  ad::contract_error);
}

TEST_CASE("shape_rep of a square and exact-zero telescoping") {
  Contour sq;
  sq.v = {{0, 0}, {1, 0}, {1, 1}, {0, 1}};
  auto r = geom::shape_rep(sq);
  REQUIRE(r.offsets.size() == 4);
  CHECK(r.offsets[0].x == 1);
  CHECK(r.offsets[0].y == 0);
  CHECK(r.offsets[1].x == 0);
  CHECK(r.offsets[1].y == 1);
  CHECK(r.offsets[2].x == -1);
  CHECK(r.offsets[2].y == 0);
  CHECK(r.offsets[3].x == 0);
  CHECK(r.offsets[3].y == -1);

  data::Rng rng(7);
  for (int t = 0; t < 200; ++t) {
    Contour c;
    const int n = rng.uniform_int(3, 150);
    c.v.resize(static_cast<size_t>(n));
    for (auto& p : c.v) p = {rng.uniform(0, 512), rng.uniform(0, 512)};
    auto rep = geom::shape_rep(c);
    double sx = 0, sy = 0;
    for (const auto& o : rep.offsets) {
      sx += o.x;
      sy += o.y;
    }
    CHECK(sx == 0.0);
    CHECK(sy == 0.0);
  }
}

TEST_CASE("shape_rep is translation invariant") {
  data::Rng rng(11);
  Contour c;
  c.v.resize(32);
  for (auto& p : c.v) p = {rng.uniform(0, 100), rng.uniform(0, 100)};
  Contour ct = c;
  for (auto& p : ct.v) {
    p.x += 5.0;
    p.y += 7.0;
  }
  auto a = geom::shape_rep(c);
  auto b = geom::shape_rep(ct);
  for (size_t i = 0; i < a.offsets.size(); ++i) {
    CHECK(a.offsets[i].x == doctest::Approx(b.offsets[i].x).epsilon(1e-12));
    CHECK(a.offsets[i].y == doctest::Approx(b.offsets[i].y).epsilon(1e-12));
  }
}

TEST_CASE("rasterize: integer-aligned square fills exactly") {
  Contour sq;
  sq.v = {{2, 3}, {12, 3}, {12, 13}, {2, 13}};
  auto m = geom::rasterize(sq, 20, 20);
  CHECK(m.count() == 100);
  // pixel-center rule: row 3..12, col 2..11
  CHECK(m.m[3 * 20 + 2] == 1);
  CHECK(m.m[3 * 20 + 1] == 0);
  CHECK(m.m[12 * 20 + 11] == 1);
  CHECK(m.m[13 * 20 + 11] == 0);
}

TEST_CASE("rasterize: contour outside the canvas gives empty mask") {
  Contour sq;
  sq.v = {{100, 100}, {110, 100}, {110, 110}, {100, 110}};
  auto m = geom::rasterize(sq, 20, 20);
  CHECK(m.count() == 0);
}

TEST_CASE("rasterized area of a large circle within 2% of shoelace area") {
  data::Rng rng(13);
  for (int t = 0; t < 100; ++t) {
    const double r = rng.uniform(10.0, 30.0);
    const double cx = rng.uniform(35.0, 65.0), cy = rng.uniform(35.0, 65.0);
    const int nv = rng.uniform_int(24, 96);
    std::vector<Point> poly(static_cast<size_t>(nv));
    for (int i = 0; i < nv; ++i) {
      const double th = 2.0 * M_PI * i / nv;
      poly[static_cast<size_t>(i)] = {cx + r * std::cos(th), cy + r * std::sin(th)};
    }
    Contour c;
    c.v = poly;
    auto m = geom::rasterize(c, 100, 100);
    const double raster_area = m.count();
    const double shoelace = std::abs(geom::signed_area(poly));
    CHECK(std::abs(raster_area - shoelace) / shoelace < 0.02);
  }
}

TEST_CASE("mask_iou basics and oracle case") {
  Contour a, b;
  a.v = {{0, 0}, {10, 0}, {10, 10}, {0, 10}};
  b.v = {{5, 0}, {15, 0}, {15, 10}, {5, 10}};
  auto ma = geom::rasterize(a, 16, 16);
  auto mb = geom::rasterize(b, 16, 16);
  CHECK(geom::mask_iou(ma, ma) == 1.0);
  // two 10x10 squares offset by 5 in x: inter 50, union 150
  CHECK(geom::mask_iou(ma, mb) == doctest::Approx(1.0 / 3.0));
  Contour far;
  far.v = {{12, 12}, {15, 12}, {15, 15}, {12, 15}};
  CHECK(geom::mask_iou(ma, geom::rasterize(far, 16, 16)) == 0.0);
  // symmetric
  CHECK(geom::mask_iou(ma, mb) == geom::mask_iou(mb, ma));
  // both empty -> 1.0
  geom::Mask e1, e2;
  e1.h = e2.h = 4;
  e1.w = e2.w = 4;
  e1.m.assign(16, 0);
  e2.m.assign(16, 0);
  CHECK(geom::mask_iou(e1, e2) == 1.0);
  geom::Mask bad;
  bad.h = 2;
  bad.w = 2;
  bad.m.assign(4, 0);
  CHECK_THROWS_AS((void)geom::mask_iou(e1, bad), ad::contract_error);
}

TEST_CASE("record round-trip and parse errors") {
  geom::RecordFile rf;
  data::Rng rng(17);
  for (int i = 0; i < 5; ++i) {
    geom::GtRecord g;
    g.image_id = "img" + std::to_string(i);
    g.class_id = i % 3;
    for (int k = 0; k < 7; ++k) g.poly.push_back({rng.uniform(0, 64), rng.uniform(0, 64)});
    rf.gts.push_back(g);
    geom::DetRecord d;
    d.image_id = g.image_id;
    d.class_id = g.class_id;
    d.score = rng.uniform();
    d.poly = g.poly;
    rf.dets.push_back(d);
  }
  std::ostringstream os;
  for (const auto& g : rf.gts) geom::write_gt(os, g);
  for (const auto& d : rf.dets) geom::write_det(os, d);
  std::istringstream is(os.str());
  auto back = geom::parse_records(is);
  REQUIRE(back.gts.size() == rf.gts.size());
  REQUIRE(back.dets.size() == rf.dets.size());
  for (size_t i = 0; i < rf.gts.size(); ++i) {
    CHECK(back.gts[i].image_id == rf.gts[i].image_id);
    for (size_t k = 0; k < rf.gts[i].poly.size(); ++k) {
      CHECK(back.gts[i].poly[k].x == rf.gts[i].poly[k].x);  // exact round-trip
      CHECK(back.gts[i].poly[k].y == rf.gts[i].poly[k].y);
    }
  }
  CHECK(back.dets[2].score == rf.dets[2].score);

  std::istringstream empty("");
  auto none = geom::parse_records(empty);
  CHECK(none.gts.empty());
  CHECK(none.dets.empty());

  std::istringstream odd("gt a 0 1 2 3 4 5 6 7\n");
  CHECK_THROWS_WITH_AS((void)geom::parse_records(odd),
                       doctest::Contains("line 1"), geom::parse_error);
  std::istringstream junk("gt a 0 1 2 3 4 x 6\n");
  CHECK_THROWS_AS((void)geom::parse_records(junk), geom::parse_error);
  std::istringstream unknown("blah 1 2 3\n");
  CHECK_THROWS_AS((void)geom::parse_records(unknown), geom::parse_error);
}
