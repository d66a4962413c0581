#include "popmap/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "popmap/error.hpp"

namespace popmap::preprocess {

Correction activation_correct(const StationSeries& counts) {
  if (counts.values.size() != counts.stations * counts.slots) {
    throw ShapeError("activation_correct: series buffer does not match stations x slots");
  }
  std::vector<double> totals(counts.slots, 0.0);
  for (std::size_t t = 0; t < counts.slots; ++t) {
    for (std::size_t i = 0; i < counts.stations; ++i) {
      const double v = counts.at(i, t);
      if (!std::isfinite(v) || v < 0.0) {
        throw InputError("activation_correct: negative or non-finite count at station " + std::to_string(i) +
                         ", slot " + std::to_string(t));
      }
      totals[t] += v;
    }
  }
  const double peak = totals.empty() ? 0.0 : *std::max_element(totals.begin(), totals.end());
  if (!(peak > 0.0)) {
    throw InputError("activation_correct: every time slot is empty");
  }
  Correction out;
  out.series = StationSeries::zeros(counts.stations, counts.slots);
  out.series.slot_hour = counts.slot_hour;
  out.series.slot_day = counts.slot_day;
  out.ratio.assign(counts.slots, 0.0);
  out.reference_total = peak;
  for (std::size_t t = 0; t < counts.slots; ++t) {
    if (totals[t] == 0.0) {
      out.log.excluded_slots.push_back(t);
      std::ostringstream msg;
      msg << "slot " << t << " (day " << counts.slot_day[t] << ", hour " << counts.slot_hour[t]
          << ") has no active devices; excluded";
      out.log.messages.push_back(msg.str());
      continue;
    }
    out.ratio[t] = totals[t] / peak;
    // scale so the slot total lands on the peak exactly up to rounding
    const double factor = peak / totals[t];
    for (std::size_t i = 0; i < counts.stations; ++i) out.series.at(i, t) = counts.at(i, t) * factor;
  }
  return out;
}

StationSeries hourly_average(const StationSeries& counts, std::size_t sub_slots) {
  if (sub_slots == 0 || counts.slots % sub_slots != 0) {
    throw ShapeError("hourly_average: slot count " + std::to_string(counts.slots) + " is not a multiple of " +
                     std::to_string(sub_slots));
  }
  const std::size_t hours = counts.slots / sub_slots;
  StationSeries out = StationSeries::zeros(counts.stations, hours);
  for (std::size_t h = 0; h < hours; ++h) {
    out.slot_hour[h] = counts.slot_hour[h * sub_slots];
    out.slot_day[h] = counts.slot_day[h * sub_slots];
    for (std::size_t i = 0; i < counts.stations; ++i) {
      double s = 0.0;
      for (std::size_t k = 0; k < sub_slots; ++k) s += counts.at(i, h * sub_slots + k);
      out.at(i, h) = s / static_cast<double>(sub_slots);
    }
  }
  return out;
}

double VoronoiWeights::row_sum(std::size_t station) const {
  double s = 0.0;
  for (const auto& [cell, w] : rows.at(station)) s += w;
  return s;
}

double VoronoiWeights::weight(std::size_t station, std::size_t cell) const {
  for (const auto& [c, w] : rows.at(station)) {
    if (c == cell) return w;
  }
  return 0.0;
}

namespace {

struct Buckets {
  double size = 1.0;
  int nx = 1, ny = 1;
  std::vector<std::vector<std::size_t>> members;

  Buckets(const std::vector<geom::Point>& pts, int height, int width) {
    const double per = static_cast<double>(height) * width / std::max<std::size_t>(pts.size(), 1);
    size = std::max(0.5, std::sqrt(2.0 * per));
    nx = std::max(1, static_cast<int>(std::ceil(width / size)));
    ny = std::max(1, static_cast<int>(std::ceil(height / size)));
    members.resize(static_cast<std::size_t>(nx) * ny);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const auto [bx, by] = locate(pts[i]);
      members[static_cast<std::size_t>(by) * nx + bx].push_back(i);
    }
  }

  std::pair<int, int> locate(const geom::Point& p) const {
    return {std::clamp(static_cast<int>(std::floor(p.x / size)), 0, nx - 1),
            std::clamp(static_cast<int>(std::floor(p.y / size)), 0, ny - 1)};
  }
};

geom::Polygon cell_from_buckets(const std::vector<geom::Point>& pts, std::size_t s, const Buckets& b, int height,
                                int width) {
  const geom::Point p = pts[s];
  geom::Polygon poly = geom::box(0.0, 0.0, width, height);
  const auto [bx, by] = b.locate(p);
  const int max_ring = std::max(b.nx, b.ny);
  for (int r = 0; r <= max_ring; ++r) {
    for (int y = by - r; y <= by + r; ++y) {
      if (y < 0 || y >= b.ny) continue;
      const bool edge_row = (y == by - r || y == by + r);
      for (int x = bx - r; x <= bx + r; x += (edge_row ? 1 : 2 * r)) {
        if (x >= 0 && x < b.nx) {
          for (std::size_t t : b.members[static_cast<std::size_t>(y) * b.nx + x]) {
            if (t == s) continue;
            const geom::Point q = pts[t];
            // keep points closer to p than to q
            poly = geom::clip_half_plane(poly, q.x - p.x, q.y - p.y,
                                         0.5 * (q.x * q.x + q.y * q.y - p.x * p.x - p.y * p.y));
          }
        }
        if (r == 0) break;
      }
    }
    double reach = 0.0;
    for (const geom::Point& v : poly) reach = std::max(reach, std::hypot(v.x - p.x, v.y - p.y));
    // anything beyond ring r is at least r bucket widths away
    if (r * b.size >= 2.0 * reach) break;
  }
  return poly;
}

void require_distinct(const std::vector<geom::Point>& stations) {
  std::vector<std::pair<double, double>> sorted;
  sorted.reserve(stations.size());
  for (const auto& p : stations) sorted.emplace_back(p.x, p.y);
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 1; i < sorted.size(); ++i) {
    if (sorted[i] == sorted[i - 1]) {
      std::ostringstream msg;
      msg << "voronoi_weights: duplicate station at (" << sorted[i].first << ", " << sorted[i].second << ")";
      throw InputError(msg.str());
    }
  }
}

}  // namespace

geom::Polygon voronoi_cell(const std::vector<geom::Point>& stations, std::size_t s, int height, int width) {
  const Buckets b(stations, height, width);
  return cell_from_buckets(stations, s, b, height, width);
}

VoronoiWeights voronoi_weights(const std::vector<geom::Point>& stations, int height, int width, const Mask& mask) {
  if (stations.empty()) throw InputError("voronoi_weights: no stations");
  if (mask.size() != static_cast<std::size_t>(height) * width) {
    throw ShapeError("voronoi_weights: mask does not match the grid");
  }
  require_distinct(stations);
  const Buckets b(stations, height, width);
  VoronoiWeights out;
  out.height = height;
  out.width = width;
  out.rows.resize(stations.size());
  for (std::size_t s = 0; s < stations.size(); ++s) {
    const geom::Polygon poly = cell_from_buckets(stations, s, b, height, width);
    double x0 = width, y0 = height, x1 = 0.0, y1 = 0.0;
    for (const auto& v : poly) {
      x0 = std::min(x0, v.x);
      y0 = std::min(y0, v.y);
      x1 = std::max(x1, v.x);
      y1 = std::max(y1, v.y);
    }
    const int c0 = std::max(0, static_cast<int>(std::floor(x0)));
    const int c1 = std::min(width, static_cast<int>(std::ceil(x1)));
    const int r0 = std::max(0, static_cast<int>(std::floor(y0)));
    const int r1 = std::min(height, static_cast<int>(std::ceil(y1)));
    auto& row = out.rows[s];
    double total = 0.0;
    for (int r = r0; r < r1; ++r) {
      for (int c = c0; c < c1; ++c) {
        const std::size_t cell = static_cast<std::size_t>(r) * width + c;
        if (!mask[cell]) continue;
        const double a = geom::area(geom::clip_box(poly, c, r, c + 1.0, r + 1.0));
        if (a > 0.0) {
          row.emplace_back(cell, a);
          total += a;
        }
      }
    }
    if (!(total > 0.0)) {
      std::ostringstream msg;
      msg << "voronoi_weights: station " << s << " at (" << stations[s].x << ", " << stations[s].y
          << ") has no Voronoi area inside the boundary";
      throw InputError(msg.str());
    }
    for (auto& entry : row) entry.second /= total;
  }
  return out;
}

GridMap rasterize(const std::vector<double>& station_values, const VoronoiWeights& weights, const Mask& mask) {
  if (station_values.size() != weights.stations()) {
    throw ShapeError("rasterize: " + std::to_string(station_values.size()) + " station values for " +
                     std::to_string(weights.stations()) + " weight rows");
  }
  GridMap map = GridMap::zeros(weights.height, weights.width, Level::fine, mask);
  for (std::size_t s = 0; s < station_values.size(); ++s) {
    for (const auto& [cell, w] : weights.rows[s]) map.values[cell] += station_values[s] * w;
  }
  return map;
}

PopCube rasterize_series(const Correction& corrected, const VoronoiWeights& weights, const Mask& mask) {
  const StationSeries& y = corrected.series;
  PopCube cube;
  std::vector<double> column(y.stations);
  for (std::size_t t = 0; t < y.slots; ++t) {
    if (!corrected.valid(t)) continue;
    for (std::size_t s = 0; s < y.stations; ++s) column[s] = y.at(s, t);
    cube.frames.push_back({y.slot_day[t], y.slot_hour[t], rasterize(column, weights, mask)});
  }
  return cube;
}

GridMap aggregate(const GridMap& fine, const ZonePartition& zones) {
  if (zones.height != fine.height || zones.width != fine.width) {
    throw ShapeError("aggregate: partition " + std::to_string(zones.height) + "x" + std::to_string(zones.width) +
                     " does not match map " + std::to_string(fine.height) + "x" + std::to_string(fine.width));
  }
  zones.validate();
  std::vector<double> sums(static_cast<std::size_t>(zones.zone_count), 0.0);
  const auto sizes = zones.zone_sizes();
  for (std::size_t i = 0; i < fine.values.size(); ++i) {
    if (zones.labels[i] >= 0) sums[static_cast<std::size_t>(zones.labels[i])] += fine.values[i];
  }
  GridMap out = GridMap::zeros(fine.height, fine.width, zones.level, zones.mask());
  for (std::size_t i = 0; i < fine.values.size(); ++i) {
    const int z = zones.labels[i];
    if (z >= 0) out.values[i] = sums[static_cast<std::size_t>(z)] / static_cast<double>(sizes[z]);
  }
  return out;
}

PopCube aggregate(const PopCube& fine, const ZonePartition& zones) {
  PopCube out;
  out.frames.reserve(fine.frames.size());
  for (const Frame& f : fine.frames) out.frames.push_back({f.day, f.hour, aggregate(f.map, zones)});
  return out;
}

MultiChannelMap MultiChannelMap::zeros(int channels, int height, int width, Mask mask) {
  MultiChannelMap m;
  m.channels = channels;
  m.height = height;
  m.width = width;
  m.values.assign(static_cast<std::size_t>(channels) * height * width, 0.0);
  m.mask = mask.empty() ? Mask(static_cast<std::size_t>(height) * width, 1) : std::move(mask);
  if (m.mask.size() != m.plane()) throw ShapeError("MultiChannelMap: mask size does not match");
  return m;
}

std::vector<int> window_starts(int length, int patch, int stride) {
  if (patch <= 0 || stride <= 0) throw ShapeError("window_starts: patch and stride must be positive");
  if (patch > length) {
    throw ShapeError("patch " + std::to_string(patch) + " exceeds map dimension " + std::to_string(length));
  }
  std::vector<int> starts;
  for (int s = 0; s + patch <= length; s += stride) starts.push_back(s);
  if (starts.back() + patch < length) starts.push_back(length - patch);
  return starts;
}

std::vector<PatchPair> extract_patches(const MultiChannelMap& input, const GridMap& target, int patch, int stride,
                                       double max_outside) {
  if (input.height != target.height || input.width != target.width) {
    throw ShapeError("extract_patches: input and target shapes differ");
  }
  std::vector<PatchPair> out;
  const double area = static_cast<double>(patch) * patch;
  for (int r : window_starts(input.height, patch, stride)) {
    for (int c : window_starts(input.width, patch, stride)) {
      int outside = 0;
      for (int i = 0; i < patch; ++i) {
        for (int j = 0; j < patch; ++j) outside += target.mask[static_cast<std::size_t>(r + i) * target.width + c + j] ? 0 : 1;
      }
      if (outside > max_outside * area) continue;
      PatchPair pp;
      pp.row = r;
      pp.col = c;
      Mask sub(static_cast<std::size_t>(patch) * patch);
      for (int i = 0; i < patch; ++i) {
        for (int j = 0; j < patch; ++j) sub[static_cast<std::size_t>(i) * patch + j] = target.mask[static_cast<std::size_t>(r + i) * target.width + c + j];
      }
      pp.input = MultiChannelMap::zeros(input.channels, patch, patch, sub);
      pp.target = GridMap::zeros(patch, patch, target.level, sub);
      for (int i = 0; i < patch; ++i) {
        for (int j = 0; j < patch; ++j) {
          pp.target.at(i, j) = target.at(r + i, c + j);
          for (int k = 0; k < input.channels; ++k) pp.input.at(k, i, j) = input.at(k, r + i, c + j);
        }
      }
      out.push_back(std::move(pp));
    }
  }
  return out;
}

}  // namespace popmap::preprocess
