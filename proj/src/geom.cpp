#include "crosswise/geom.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace crosswise {

namespace {

constexpr double kBoundaryEps = 1e-9;

bool on_segment(const Point& p, const Point& a, const Point& b) {
  const Point ab = b - a;
  const Point ap = p - a;
  const double cross = ab.x() * ap.y() - ab.y() * ap.x();
  const double len = ab.norm();
  if (len == 0.0) return ap.norm() <= kBoundaryEps;
  if (std::abs(cross) / len > kBoundaryEps) return false;
  const double t = ap.dot(ab) / (len * len);
  return t >= -kBoundaryEps && t <= 1.0 + kBoundaryEps;
}

Rect bounding_box(const Polygon& poly) {
  double x0 = poly[0].x(), x1 = x0, y0 = poly[0].y(), y1 = y0;
  for (const auto& p : poly) {
    x0 = std::min(x0, p.x());
    x1 = std::max(x1, p.x());
    y0 = std::min(y0, p.y());
    y1 = std::max(y1, p.y());
  }
  return {x0, y0, x1 - x0, y1 - y0};
}

void check_polygon(const LabeledPolygon& lp, const char* kind) {
  if (lp.polygon.size() < 3)
    throw std::invalid_argument(std::string(kind) + " '" + lp.id + "' has fewer than 3 vertices");
  if (polygon_area(lp.polygon) == 0.0)
    throw std::invalid_argument(std::string(kind) + " '" + lp.id + "' has zero area");
}

using nlohmann::json;

Polygon polygon_from_json(const json& j) {
  Polygon poly;
  for (const auto& v : j) {
    if (!v.is_array() || v.size() != 2) throw std::invalid_argument("polygon vertex must be [x, y]");
    poly.emplace_back(v[0].get<double>(), v[1].get<double>());
  }
  return poly;
}

std::vector<LabeledPolygon> zones_from_json(const json& arr) {
  std::vector<LabeledPolygon> out;
  if (!arr.is_array()) throw std::invalid_argument("zone list must be an array");
  for (const auto& z : arr) {
    LabeledPolygon lp;
    lp.id = z.at("id").get<std::string>();
    if (z.contains("label") && !z.at("label").is_null())
      lp.label = crosswalk_from_string(z.at("label").get<std::string>());
    lp.polygon = polygon_from_json(z.at("polygon"));
    out.push_back(std::move(lp));
  }
  return out;
}

json zones_to_json(const std::vector<LabeledPolygon>& zones) {
  json arr = json::array();
  for (const auto& z : zones) {
    json poly = json::array();
    for (const auto& p : z.polygon) poly.push_back({p.x(), p.y()});
    arr.push_back({{"id", z.id},
                   {"label", z.label ? json(std::string(1, to_char(*z.label))) : json(nullptr)},
                   {"polygon", poly}});
  }
  return arr;
}

LabeledPolygon box_zone(std::string id, std::optional<Crosswalk> label, double x0, double y0,
                        double x1, double y1) {
  return {std::move(id), label, {{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}}};
}

}  // namespace

double iou(const Rect& a, const Rect& b) {
  const double ix = std::max(0.0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
  const double iy = std::max(0.0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

char to_char(Crosswalk c) { return c == Crosswalk::A ? 'A' : 'B'; }

Crosswalk crosswalk_from_string(const std::string& s) {
  if (s == "A") return Crosswalk::A;
  if (s == "B") return Crosswalk::B;
  throw std::invalid_argument("crosswalk label must be \"A\" or \"B\", got \"" + s + "\"");
}

const char* to_string(ZoneType t) {
  switch (t) {
    case ZoneType::Outside: return "outside";
    case ZoneType::Waiting: return "waiting";
    case ZoneType::StartCrossing: return "start_crossing";
    case ZoneType::Crossing: return "crossing";
  }
  return "?";
}

double IntersectionGeometry::frame_diagonal() const {
  return std::hypot(frame_width, frame_height);
}

std::optional<Crosswalk> IntersectionGeometry::label_of(const ZoneKind& z) const {
  switch (z.type) {
    case ZoneType::StartCrossing: return start_crossing_zones.at(z.index).label;
    case ZoneType::Crossing: return crossing_zones.at(z.index).label;
    default: return std::nullopt;
  }
}

void IntersectionGeometry::validate() const {
  if (fps <= 0) throw std::invalid_argument("fps must be positive");
  if (px_per_meter && !(*px_per_meter > 0.0))
    throw std::invalid_argument("px_per_meter must be positive when present");
  if (!(frame_width > 0.0) || !(frame_height > 0.0))
    throw std::invalid_argument("frame size must be positive");
  if (!(crop_rect.w > 0.0) || !(crop_rect.h > 0.0))
    throw std::invalid_argument("crop_rect must have positive size");
  if (waiting_areas.empty()) throw std::invalid_argument("at least one waiting area is required");
  for (const auto& z : waiting_areas) {
    check_polygon(z, "waiting area");
    const Rect bb = bounding_box(z.polygon);
    if (bb.x < crop_rect.x || bb.y < crop_rect.y || bb.x + bb.w > crop_rect.x + crop_rect.w ||
        bb.y + bb.h > crop_rect.y + crop_rect.h)
      throw std::invalid_argument("crop_rect does not contain waiting area '" + z.id + "'");
  }
  for (const auto& z : start_crossing_zones) {
    check_polygon(z, "start-crossing zone");
    if (!z.label) throw std::invalid_argument("start-crossing zone '" + z.id + "' needs a label");
  }
  bool has_a = false, has_b = false;
  for (const auto& z : crossing_zones) {
    check_polygon(z, "crossing zone");
    if (!z.label) throw std::invalid_argument("crossing zone '" + z.id + "' needs a label");
    has_a |= *z.label == Crosswalk::A;
    has_b |= *z.label == Crosswalk::B;
  }
  if (!has_a || !has_b)
    throw std::invalid_argument("geometry needs crossing zones labeled A and B");
}

double signed_area(const Polygon& poly) {
  double acc = 0.0;
  for (std::size_t i = 0, n = poly.size(); i < n; ++i) {
    const Point& a = poly[i];
    const Point& b = poly[(i + 1) % n];
    acc += a.x() * b.y() - b.x() * a.y();
  }
  return 0.5 * acc;
}

double polygon_area(const Polygon& poly) { return std::abs(signed_area(poly)); }

Point polygon_centroid(const Polygon& poly) {
  const double a = signed_area(poly);
  if (a == 0.0) throw std::invalid_argument("centroid of a degenerate polygon");
  double cx = 0.0, cy = 0.0;
  for (std::size_t i = 0, n = poly.size(); i < n; ++i) {
    const Point& p = poly[i];
    const Point& q = poly[(i + 1) % n];
    const double c = p.x() * q.y() - q.x() * p.y();
    cx += (p.x() + q.x()) * c;
    cy += (p.y() + q.y()) * c;
  }
  return {cx / (6.0 * a), cy / (6.0 * a)};
}

bool point_in_polygon(const Point& p, const Polygon& poly) {
  if (poly.size() < 3) throw std::invalid_argument("polygon needs at least 3 vertices");
  if (signed_area(poly) == 0.0) throw std::invalid_argument("polygon has zero area");
  bool inside = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const Point& a = poly[i];
    const Point& b = poly[j];
    if (on_segment(p, a, b)) return true;
    if ((a.y() > p.y()) != (b.y() > p.y())) {
      const double x_cross = a.x() + (p.y() - a.y()) * (b.x() - a.x()) / (b.y() - a.y());
      if (p.x() < x_cross) inside = !inside;
    }
  }
  return inside;
}

ZoneKind classify_point(const Point& p, const IntersectionGeometry& g) {
  auto first_hit = [&](const std::vector<LabeledPolygon>& zones) -> int {
    for (std::size_t i = 0; i < zones.size(); ++i)
      if (point_in_polygon(p, zones[i].polygon)) return static_cast<int>(i);
    return -1;
  };
  if (int i = first_hit(g.crossing_zones); i >= 0) return {ZoneType::Crossing, i};
  if (int i = first_hit(g.start_crossing_zones); i >= 0) return {ZoneType::StartCrossing, i};
  if (int i = first_hit(g.waiting_areas); i >= 0) return {ZoneType::Waiting, i};
  return {};
}

Point crop_to_full(const Point& p_crop, const IntersectionGeometry& g) {
  const Rect& c = g.crop_rect;
  if (p_crop.x() < 0.0 || p_crop.y() < 0.0 || p_crop.x() > c.w || p_crop.y() > c.h)
    throw std::out_of_range("point outside crop bounds");
  return {c.x + p_crop.x(), c.y + p_crop.y()};
}

Point full_to_crop(const Point& p_full, const IntersectionGeometry& g) {
  return {p_full.x() - g.crop_rect.x, p_full.y() - g.crop_rect.y};
}

IntersectionGeometry parse_geometry(const std::string& json_text) {
  IntersectionGeometry g;
  try {
    const json j = json::parse(json_text);
    g.fps = j.at("fps").get<int>();
    if (j.contains("px_per_meter") && !j.at("px_per_meter").is_null())
      g.px_per_meter = j.at("px_per_meter").get<double>();
    const auto& cr = j.at("crop_rect");
    if (!cr.is_array() || cr.size() != 4) throw std::invalid_argument("crop_rect must be [x,y,w,h]");
    g.crop_rect = {cr[0].get<double>(), cr[1].get<double>(), cr[2].get<double>(), cr[3].get<double>()};
    if (j.contains("frame_size")) {
      g.frame_width = j.at("frame_size").at(0).get<double>();
      g.frame_height = j.at("frame_size").at(1).get<double>();
    }
    g.waiting_areas = zones_from_json(j.at("waiting_areas"));
    g.start_crossing_zones = zones_from_json(j.value("start_crossing_zones", json::array()));
    g.crossing_zones = zones_from_json(j.at("crossing_zones"));
    const auto& ent = j.at("crosswalk_entries");
    g.entry_a = {ent.at("A").at(0).get<double>(), ent.at("A").at(1).get<double>()};
    g.entry_b = {ent.at("B").at(0).get<double>(), ent.at("B").at(1).get<double>()};
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("geometry config: ") + e.what());
  }
  g.validate();
  return g;
}

IntersectionGeometry load_geometry(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open geometry file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_geometry(ss.str());
}

std::string geometry_to_json(const IntersectionGeometry& g) {
  json j;
  j["fps"] = g.fps;
  j["px_per_meter"] = g.px_per_meter ? json(*g.px_per_meter) : json(nullptr);
  j["crop_rect"] = {g.crop_rect.x, g.crop_rect.y, g.crop_rect.w, g.crop_rect.h};
  j["frame_size"] = {g.frame_width, g.frame_height};
  j["waiting_areas"] = zones_to_json(g.waiting_areas);
  j["start_crossing_zones"] = zones_to_json(g.start_crossing_zones);
  j["crossing_zones"] = zones_to_json(g.crossing_zones);
  j["crosswalk_entries"] = {{"A", {g.entry_a.x(), g.entry_a.y()}},
                            {"B", {g.entry_b.x(), g.entry_b.y()}}};
  return j.dump(2);
}

IntersectionGeometry default_geometry() {
  IntersectionGeometry g;
  g.fps = 20;
  g.px_per_meter = 30.0;
  g.frame_width = 1280;
  g.frame_height = 720;
  g.waiting_areas = {box_zone("W1", std::nullopt, 400, 200, 700, 420)};
  g.start_crossing_zones = {box_zone("S_A", Crosswalk::A, 700, 220, 760, 400),
                            box_zone("S_B", Crosswalk::B, 420, 420, 680, 480)};
  g.crossing_zones = {box_zone("C_A", Crosswalk::A, 760, 220, 1200, 400),
                      box_zone("C_B", Crosswalk::B, 420, 480, 680, 700)};
  g.entry_a = {730, 310};
  g.entry_b = {550, 450};
  g.crop_rect = {380, 180, 400, 320};
  g.validate();
  return g;
}

}  // namespace crosswise
