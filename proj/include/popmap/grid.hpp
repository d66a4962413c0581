#pragma once
// Raster domain types shared by every stage: population maps, cubes, zone
// partitions and PoI count rasters. Cells are stored row-major.

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace popmap {

/// Aggregation level of a raster. The two intermediate levels only exist
/// inside the stacked mapper's training ladder.
enum class Level : int {
  district = 1,
  street_block = 2,
  fine = 3,
  intermediate_a = 4,  // between district and street-block
  intermediate_b = 5,  // between street-block and fine
};

std::string_view level_name(Level level);
Level parse_level(std::string_view name);

using Mask = std::vector<std::uint8_t>;  // 1 = inside the city boundary

struct GridMap {
  int height = 0;
  int width = 0;
  std::vector<double> values;
  Level level = Level::fine;
  Mask mask;

  static GridMap zeros(int height, int width, Level level, Mask mask);

  std::size_t cells() const { return static_cast<std::size_t>(height) * static_cast<std::size_t>(width); }
  double& at(int row, int col) { return values[static_cast<std::size_t>(row) * width + col]; }
  double at(int row, int col) const { return values[static_cast<std::size_t>(row) * width + col]; }
  bool inside(std::size_t cell) const { return mask[cell] != 0; }
  double total() const;
  /// Throws InputError on negative/non-finite values or non-zero cells outside the mask.
  void validate() const;
};

struct Frame {
  int day = 0;
  int hour = 0;  // 0..23
  GridMap map;
};

/// Time-ordered stack of same-shape, same-level maps.
struct PopCube {
  std::vector<Frame> frames;

  int height() const { return frames.empty() ? 0 : frames.front().map.height; }
  int width() const { return frames.empty() ? 0 : frames.front().map.width; }
  const Mask& mask() const { return frames.front().map.mask; }
  std::vector<int> days() const;
  /// Frames of the given days, in cube order.
  PopCube select_days(const std::vector<int>& days) const;
  /// Frames whose hour lies in [begin, end).
  PopCube select_hours(int begin, int end) const;
  /// Throws InputError on mixed shapes/levels or non-increasing timestamps.
  void validate() const;
};

/// Throws InputError unless both cubes have identical timestamps and shapes.
void require_aligned(const PopCube& a, const PopCube& b, std::string_view what);

/// Cell -> zone labelling; -1 marks cells outside the boundary.
struct ZonePartition {
  int height = 0;
  int width = 0;
  std::vector<int> labels;
  Level level = Level::fine;
  int zone_count = 0;

  /// Relabels zones to 0..Z-1 in order of first appearance (row-major).
  static ZonePartition from_labels(int height, int width, std::vector<int> labels, Level level);
  /// One zone per in-boundary cell.
  static ZonePartition identity(int height, int width, const Mask& mask);

  std::vector<std::size_t> zone_sizes() const;
  Mask mask() const;
  /// Throws PartitionError unless labels are contiguous 0..Z-1 with every zone non-empty.
  void validate() const;
  /// True when every zone of `finer` lies inside exactly one zone of this partition.
  bool contains(const ZonePartition& finer) const;
};

enum class PoiCategory : int { entertainment = 0, business = 1, transportation = 2, residence = 3 };
inline constexpr std::size_t kPoiCategories = 4;
inline constexpr std::array<PoiCategory, kPoiCategories> kAllPoiCategories = {
    PoiCategory::entertainment, PoiCategory::business, PoiCategory::transportation, PoiCategory::residence};
std::string_view poi_category_name(PoiCategory c);

/// Ordered subset of PoI categories; bit i set selects category i.
struct PoiSubset {
  std::uint8_t bits = 0;

  static PoiSubset none() { return {0}; }
  static PoiSubset all() { return {0x0F}; }
  bool contains(PoiCategory c) const { return (bits >> static_cast<int>(c)) & 1U; }
  std::vector<PoiCategory> categories() const;
  std::size_t size() const { return categories().size(); }
  /// "{1,4}" style signature using 1-based category numbers; "{}" for none.
  std::string signature() const;
  static PoiSubset parse(std::string_view signature);
  bool operator==(const PoiSubset&) const = default;
};

/// All 2^4 subsets, ordered by bit pattern.
std::vector<PoiSubset> poi_powerset();

/// Per-category PoI counts per cell.
struct PoiGrid {
  int height = 0;
  int width = 0;
  std::array<std::vector<double>, kPoiCategories> counts;

  const std::vector<double>& operator[](PoiCategory c) const { return counts[static_cast<int>(c)]; }
  std::vector<double>& operator[](PoiCategory c) { return counts[static_cast<int>(c)]; }
};

}  // namespace popmap

namespace popmap {

/// Per-station counts over time slots, station-major.
struct StationSeries {
  std::size_t stations = 0;
  std::size_t slots = 0;
  std::vector<double> values;
  std::vector<int> slot_hour;  // hour of day of each slot
  std::vector<int> slot_day;

  static StationSeries zeros(std::size_t stations, std::size_t slots);
  double& at(std::size_t station, std::size_t slot) { return values[station * slots + slot]; }
  double at(std::size_t station, std::size_t slot) const { return values[station * slots + slot]; }
  double slot_total(std::size_t slot) const;
};

}  // namespace popmap
