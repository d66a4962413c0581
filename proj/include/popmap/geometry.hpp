#pragma once
// Planar geometry in grid units: x runs along columns, y along rows, and cell
// (row r, col c) covers [c, c+1] x [r, r+1].

#include <vector>

namespace popmap::geom {

struct Point {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point&) const = default;
};

using Polygon = std::vector<Point>;  // convex, counter-clockwise

/// Keeps the part of a convex polygon with a*x + b*y <= c.
Polygon clip_half_plane(const Polygon& poly, double a, double b, double c);
/// Intersection of a convex polygon with an axis-aligned box.
Polygon clip_box(const Polygon& poly, double x0, double y0, double x1, double y1);
double area(const Polygon& poly);
Polygon box(double x0, double y0, double x1, double y1);

}  // namespace popmap::geom
