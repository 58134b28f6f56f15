#include "recontour/geom/records.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace recontour::geom {

namespace {

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<Point> parse_coords(std::istringstream& ss, int line_no) {
  std::vector<double> vals;
  double v;
  while (ss >> v) vals.push_back(v);
  if (!ss.eof())
    throw parse_error("line " + std::to_string(line_no) + ": non-numeric coordinate");
  if (vals.size() % 2 != 0)
    throw parse_error("line " + std::to_string(line_no) + ": odd coordinate count");
  if (vals.size() < 6)
    throw parse_error("line " + std::to_string(line_no) + ": polygon needs at least 3 vertices");
  std::vector<Point> poly(vals.size() / 2);
  for (size_t i = 0; i < poly.size(); ++i) poly[i] = {vals[2 * i], vals[2 * i + 1]};
  return poly;
}

}  // namespace

void write_gt(std::ostream& os, const GtRecord& r) {
  os << "gt " << r.image_id << ' ' << r.class_id;
  for (const Point& p : r.poly) os << ' ' << fmt_double(p.x) << ' ' << fmt_double(p.y);
  os << '\n';
}

void write_det(std::ostream& os, const DetRecord& r) {
  os << "det " << r.image_id << ' ' << r.class_id << ' ' << fmt_double(r.score);
  for (const Point& p : r.poly) os << ' ' << fmt_double(p.x) << ' ' << fmt_double(p.y);
  os << '\n';
}

RecordFile parse_records(std::istream& is) {
  RecordFile rf;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    std::string kind;
    ss >> kind;
    if (kind == "gt") {
      GtRecord r;
      if (!(ss >> r.image_id >> r.class_id))
        throw parse_error("line " + std::to_string(line_no) + ": bad gt header");
      r.poly = parse_coords(ss, line_no);
      rf.gts.push_back(std::move(r));
    } else if (kind == "det") {
      DetRecord r;
      if (!(ss >> r.image_id >> r.class_id >> r.score))
        throw parse_error("line " + std::to_string(line_no) + ": bad det header");
      r.poly = parse_coords(ss, line_no);
      rf.dets.push_back(std::move(r));
    } else {
      throw parse_error("line " + std::to_string(line_no) + ": unknown record kind '" + kind +
                        "'");
    }
  }
  return rf;
}

RecordFile load_records(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  return parse_records(f);
}

void save_records(const std::string& path, const RecordFile& rf) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  for (const auto& g : rf.gts) write_gt(f, g);
  for (const auto& d : rf.dets) write_det(f, d);
}

}  // namespace recontour::geom
