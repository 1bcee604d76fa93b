// image_geometry.hpp - lasso zones, detection filtering and crop rectangles
// in image pixel coordinates (x right, y down).
#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace mforge {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point2&) const = default;
};

/// Axis-aligned rectangle [x0, x1] x [y0, y1].
struct Rect {
  double x0 = 0.0;
  double y0 = 0.0;
  double x1 = 0.0;
  double y1 = 0.0;

  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  double area() const { return width() * height(); }
  Point2 center() const { return {(x0 + x1) / 2, (y0 + y1) / 2}; }
  bool contains(const Point2& p) const { return p.x >= x0 && p.x <= x1 && p.y >= y0 && p.y <= y1; }
  bool operator==(const Rect&) const = default;
};

struct ImageSize {
  int width = 0;
  int height = 0;
};

struct DetectionBox {
  std::string label;
  double confidence = 0.0;
  Rect box;
  bool operator==(const DetectionBox&) const = default;
};

/// Closed implicitly: the last point connects back to the first.
struct LassoPolygon {
  std::vector<Point2> points;
};

class GeometryError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Throws GeometryError for fewer than 3 points, non-finite coordinates or zero area.
void require_valid_polygon(const LassoPolygon& polygon);

double signed_area(const LassoPolygon& polygon);

/// Even-odd rule. Points exactly on an edge may fall on either side.
bool point_in_polygon(const Point2& p, const LassoPolygon& polygon);

/// Keeps detections with confidence >= min_confidence whose box center lies
/// inside the lasso; without a lasso only the confidence filter applies.
/// Input order is preserved.
std::vector<DetectionBox> filter_detections(const std::vector<DetectionBox>& detections,
                                            const std::optional<LassoPolygon>& lasso,
                                            double min_confidence);

/// Bounding rectangle of the polygon clamped to the image.
/// Throws GeometryError when nothing of it remains inside the image.
Rect crop_rect(const LassoPolygon& lasso, ImageSize image);

/// Bounding rectangle without clamping.
Rect bounding_rect(const LassoPolygon& lasso);

}  // namespace mforge
