#pragma once
// Station counts -> corrected, gridded, multi-level rasters.

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "popmap/geometry.hpp"
#include "popmap/grid.hpp"

namespace popmap::preprocess {

struct QualityLog {
  std::vector<std::size_t> excluded_slots;
  std::vector<std::string> messages;
};

struct Correction {
  StationSeries series;        // Y; excluded slots stay all-zero
  std::vector<double> ratio;   // R[t], 0 for excluded slots
  double reference_total = 0;  // max_t S[t]
  QualityLog log;

  bool valid(std::size_t slot) const { return ratio[slot] > 0.0; }
};

/// City-wide activation ratio correction: Y_i[t] = X_i[t] / (S[t] / max S).
/// All-zero slots are excluded and logged. Throws InputError on negative
/// counts or when every slot is zero.
Correction activation_correct(const StationSeries& counts);

/// Averages consecutive groups of `sub_slots` slots (e.g. 6 ten-minute slots -> 1 hour).
StationSeries hourly_average(const StationSeries& counts, std::size_t sub_slots);

/// Sparse station -> cell area weights. Row s lists (cell, weight) with weights summing to 1.
struct VoronoiWeights {
  int height = 0;
  int width = 0;
  std::vector<std::vector<std::pair<std::size_t, double>>> rows;

  std::size_t stations() const { return rows.size(); }
  double row_sum(std::size_t station) const;
  /// Dense cell weight for one station (0 where absent).
  double weight(std::size_t station, std::size_t cell) const;
};

/// Voronoi polygon of station `s`, clipped to the grid box [0,W]x[0,H].
geom::Polygon voronoi_cell(const std::vector<geom::Point>& stations, std::size_t s, int height, int width);

/// Exact area weights of each station's Voronoi polygon over in-boundary cells.
/// Throws InputError on duplicate stations or a station whose polygon misses the boundary.
VoronoiWeights voronoi_weights(const std::vector<geom::Point>& stations, int height, int width, const Mask& mask);

/// Spreads station values over cells: cell = sum_s value_s * weight(s, cell).
GridMap rasterize(const std::vector<double>& station_values, const VoronoiWeights& weights, const Mask& mask);
/// Rasterizes every valid slot; excluded slots are skipped.
PopCube rasterize_series(const Correction& corrected, const VoronoiWeights& weights, const Mask& mask);

/// Zone-mean map at the partition's level. Throws PartitionError on empty zones
/// or ShapeError when the partition does not match the map.
GridMap aggregate(const GridMap& fine, const ZonePartition& zones);
PopCube aggregate(const PopCube& fine, const ZonePartition& zones);

/// Channel-major stack of same-shape rasters.
struct MultiChannelMap {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> values;  // [c][row][col]
  Mask mask;

  static MultiChannelMap zeros(int channels, int height, int width, Mask mask);
  double& at(int c, int row, int col) {
    return values[(static_cast<std::size_t>(c) * height + row) * width + col];
  }
  double at(int c, int row, int col) const {
    return values[(static_cast<std::size_t>(c) * height + row) * width + col];
  }
  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
};

struct PatchPair {
  int row = 0;
  int col = 0;
  MultiChannelMap input;
  GridMap target;
};

/// Window start offsets along one axis: 0, s, 2s, ... plus a final window flush with the edge.
std::vector<int> window_starts(int length, int patch, int stride);

/// Sliding-window pairs; windows with more than `max_outside` of their area
/// outside the boundary are dropped. Throws ShapeError when the patch exceeds the map.
std::vector<PatchPair> extract_patches(const MultiChannelMap& input, const GridMap& target, int patch, int stride,
                                       double max_outside = 0.5);

}  // namespace popmap::preprocess
