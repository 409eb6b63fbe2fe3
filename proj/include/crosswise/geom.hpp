#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace crosswise {

using Point = Eigen::Vector2d;
using Polygon = std::vector<Point>;

/// Axis-aligned pixel rectangle, origin at the top-left corner.
struct Rect {
  double x = 0, y = 0, w = 0, h = 0;

  Point center() const { return {x + 0.5 * w, y + 0.5 * h}; }
  double area() const { return w * h; }
  bool contains(const Point& p) const {
    return p.x() >= x && p.x() <= x + w && p.y() >= y && p.y() <= y + h;
  }
  bool operator==(const Rect&) const = default;
};

double iou(const Rect& a, const Rect& b);

/// Crosswalk label as used by the classifier: class 0 is A, class 1 is B.
enum class Crosswalk { A = 0, B = 1 };

char to_char(Crosswalk c);
Crosswalk crosswalk_from_string(const std::string& s);

struct LabeledPolygon {
  std::string id;
  std::optional<Crosswalk> label;
  Polygon polygon;
};

enum class ZoneType { Outside = 0, Waiting = 1, StartCrossing = 2, Crossing = 3 };

/// Result of a zone query. `index` refers into the matching polygon list of
/// the geometry and is -1 for Outside.
struct ZoneKind {
  ZoneType type = ZoneType::Outside;
  int index = -1;

  bool operator==(const ZoneKind&) const = default;
};

const char* to_string(ZoneType t);

/// Zones of interest for one camera view. Immutable after load.
struct IntersectionGeometry {
  std::vector<LabeledPolygon> waiting_areas;
  std::vector<LabeledPolygon> start_crossing_zones;
  std::vector<LabeledPolygon> crossing_zones;
  Point entry_a{0, 0};
  Point entry_b{0, 0};
  Rect crop_rect;
  int fps = 20;
  std::optional<double> px_per_meter;
  double frame_width = 1280;
  double frame_height = 720;

  const Point& entry(Crosswalk c) const { return c == Crosswalk::A ? entry_a : entry_b; }
  double frame_diagonal() const;

  /// Crosswalk label of a StartCrossing or Crossing zone; empty otherwise.
  std::optional<Crosswalk> label_of(const ZoneKind& z) const;

  /// Throws std::invalid_argument describing the first violated invariant.
  void validate() const;
};

/// Signed shoelace area; positive for counter-clockwise vertex order in a
/// y-up frame.
double signed_area(const Polygon& poly);
double polygon_area(const Polygon& poly);
Point polygon_centroid(const Polygon& poly);

/// Even-odd containment with boundary points counted as inside. Throws
/// std::invalid_argument for fewer than three vertices or zero area.
bool point_in_polygon(const Point& p, const Polygon& poly);

/// Priority: Crossing > StartCrossing > Waiting > Outside. Within one kind
/// the lowest index wins.
ZoneKind classify_point(const Point& p, const IntersectionGeometry& g);

/// Translates crop-frame coordinates into the full frame. Throws
/// std::out_of_range when `p_crop` lies outside the crop dimensions.
Point crop_to_full(const Point& p_crop, const IntersectionGeometry& g);
Point full_to_crop(const Point& p_full, const IntersectionGeometry& g);

IntersectionGeometry parse_geometry(const std::string& json_text);
IntersectionGeometry load_geometry(const std::string& path);
std::string geometry_to_json(const IntersectionGeometry& g);

/// Corner waiting area with crosswalk A leaving east and B leaving south,
/// 1280x720 at 20 fps and 30 px/m. Used by the simulator defaults, tests and
/// benchmarks.
IntersectionGeometry default_geometry();

}  // namespace crosswise
