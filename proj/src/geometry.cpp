#include "popmap/geometry.hpp"

#include <cmath>

namespace popmap::geom {

Polygon clip_half_plane(const Polygon& poly, double a, double b, double c) {
  Polygon out;
  const std::size_t n = poly.size();
  if (n == 0) return out;
  out.reserve(n + 1);
  for (std::size_t i = 0; i < n; ++i) {
    const Point& p = poly[i];
    const Point& q = poly[(i + 1) % n];
    const double fp = a * p.x + b * p.y - c;
    const double fq = a * q.x + b * q.y - c;
    if (fp <= 0.0) out.push_back(p);
    if ((fp < 0.0 && fq > 0.0) || (fp > 0.0 && fq < 0.0)) {
      const double t = fp / (fp - fq);
      out.push_back({p.x + t * (q.x - p.x), p.y + t * (q.y - p.y)});
    }
  }
  if (out.size() < 3) out.clear();
  return out;
}

Polygon clip_box(const Polygon& poly, double x0, double y0, double x1, double y1) {
  Polygon out = clip_half_plane(poly, -1.0, 0.0, -x0);
  out = clip_half_plane(out, 1.0, 0.0, x1);
  out = clip_half_plane(out, 0.0, -1.0, -y0);
  return clip_half_plane(out, 0.0, 1.0, y1);
}

double area(const Polygon& poly) {
  double twice = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Point& p = poly[i];
    const Point& q = poly[(i + 1) % poly.size()];
    twice += p.x * q.y - q.x * p.y;
  }
  return std::abs(twice) * 0.5;
}

Polygon box(double x0, double y0, double x1, double y1) { return {{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}}; }

}  // namespace popmap::geom
