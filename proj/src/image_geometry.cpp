#include "mforge/image_geometry.hpp"

#include <algorithm>
#include <cmath>

namespace mforge {

double signed_area(const LassoPolygon& polygon) {
  const auto& p = polygon.points;
  double twice = 0.0;
  for (std::size_t i = 0, j = p.size() - 1; i < p.size(); j = i++) {
    twice += p[j].x * p[i].y - p[i].x * p[j].y;
  }
  return twice / 2;
}

void require_valid_polygon(const LassoPolygon& polygon) {
  if (polygon.points.size() < 3) throw GeometryError("lasso needs at least 3 points");
  for (const auto& p : polygon.points) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) throw GeometryError("lasso has a non-finite point");
  }
  if (signed_area(polygon) == 0.0) throw GeometryError("lasso encloses no area");
}

bool point_in_polygon(const Point2& p, const LassoPolygon& polygon) {
  const auto& v = polygon.points;
  bool inside = false;
  for (std::size_t i = 0, j = v.size() - 1; i < v.size(); j = i++) {
    if ((v[i].y > p.y) != (v[j].y > p.y)) {
      const double x_cross = v[j].x + (p.y - v[j].y) * (v[i].x - v[j].x) / (v[i].y - v[j].y);
      if (p.x < x_cross) inside = !inside;
    }
  }
  return inside;
}

std::vector<DetectionBox> filter_detections(const std::vector<DetectionBox>& detections,
                                            const std::optional<LassoPolygon>& lasso,
                                            double min_confidence) {
  if (!(min_confidence >= 0.0 && min_confidence <= 1.0)) {
    throw std::invalid_argument("min_confidence must be in [0, 1]");
  }
  if (lasso) require_valid_polygon(*lasso);
  std::vector<DetectionBox> kept;
  for (const auto& d : detections) {
    if (d.confidence < min_confidence) continue;
    if (lasso && !point_in_polygon(d.box.center(), *lasso)) continue;
    kept.push_back(d);
  }
  return kept;
}

Rect bounding_rect(const LassoPolygon& lasso) {
  require_valid_polygon(lasso);
  Rect r{lasso.points[0].x, lasso.points[0].y, lasso.points[0].x, lasso.points[0].y};
  for (const auto& p : lasso.points) {
    r.x0 = std::min(r.x0, p.x);
    r.y0 = std::min(r.y0, p.y);
    r.x1 = std::max(r.x1, p.x);
    r.y1 = std::max(r.y1, p.y);
  }
  return r;
}

Rect crop_rect(const LassoPolygon& lasso, ImageSize image) {
  if (image.width <= 0 || image.height <= 0) throw GeometryError("image has no pixels");
  Rect r = bounding_rect(lasso);
  r.x0 = std::clamp(r.x0, 0.0, static_cast<double>(image.width));
  r.x1 = std::clamp(r.x1, 0.0, static_cast<double>(image.width));
  r.y0 = std::clamp(r.y0, 0.0, static_cast<double>(image.height));
  r.y1 = std::clamp(r.y1, 0.0, static_cast<double>(image.height));
  if (r.area() <= 0.0) throw GeometryError("crop rectangle is empty after clamping to the image");
  return r;
}

}  // namespace mforge
