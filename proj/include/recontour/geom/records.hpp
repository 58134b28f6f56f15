#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "recontour/geom/contour.hpp"

namespace recontour::geom {

// Line-delimited polygon interchange format, one record per instance:
//   gt <image_id> <class_id> x0 y0 x1 y1 ...
//   det <image_id> <class_id> <score> x0 y0 x1 y1 ...
// Coordinates are printed with enough digits to round-trip exactly.

struct GtRecord {
  std::string image_id;
  int class_id = 0;
  std::vector<Point> poly;
};

struct DetRecord {
  std::string image_id;
  int class_id = 0;
  double score = 0.0;
  std::vector<Point> poly;
};

struct RecordFile {
  std::vector<GtRecord> gts;
  std::vector<DetRecord> dets;
};

struct parse_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void write_gt(std::ostream& os, const GtRecord& r);
void write_det(std::ostream& os, const DetRecord& r);

// Throws parse_error naming the offending line on malformed input.
RecordFile parse_records(std::istream& is);

RecordFile load_records(const std::string& path);
void save_records(const std::string& path, const RecordFile& rf);

}  // namespace recontour::geom
