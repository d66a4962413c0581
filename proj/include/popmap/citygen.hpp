#pragma once
// Deterministic synthetic city: boundary, base stations, nested zones, PoIs
// and hourly ground-truth population. Every generative choice lives in
// CityConfig so runs are fully described by their config.

#include <array>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "popmap/geometry.hpp"
#include "popmap/grid.hpp"

namespace popmap::citygen {

enum class FunctionClass : int { residential = 0, workplace = 1, transit = 2, mixed = 3, suburb = 4 };
inline constexpr std::size_t kFunctionClasses = 5;
std::string_view function_class_name(FunctionClass c);

using HourlyShape = std::array<double, 24>;

struct RegionProfile {
  FunctionClass function_class = FunctionClass::residential;
  double base_level = 0.0;  // persons
  HourlyShape hourly_shape{};
};

struct CityConfig {
  std::uint64_t seed = 7;
  int grid_h = 83;
  int grid_w = 114;
  double cell_km = 1.0;
  int n_stations = 9685;
  int n_pois = 618296;
  int n_districts = 15;
  int n_street_blocks = 200;
  int days = 21;                 // weekdays only
  double mean_density = 200.0;   // persons per in-boundary cell, averaged over the day
  double noise_sigma = 0.05;     // lognormal day-to-day multiplicative noise
  double hotspot_sigma = 0.35;   // lognormal cell-level variation of the base field
  double hotspot_length = 0.0;   // correlation length of that variation in cells; 0 = independent cells
  double regional_sigma = 0.0;   // lognormal noise shared by a district for a whole day
  bool balanced_districts = false;  // every district gets the city-wide class mix
  double class_radius_bias = 1.0;  // 1 = function mix follows distance to downtown, 0 = same mix everywhere
  double poi_coupling = 1.0;     // PoI intensity ~ mean population ^ coupling; 0 = uniform
  double station_uniform_share = 0.3;
  std::array<HourlyShape, kFunctionClasses> shapes = default_shapes();
  std::array<double, kFunctionClasses> class_density = {1.0, 0.9, 0.5, 0.8, 0.45};
  /// PoI category mix per function class (entertainment, business, transportation, residence).
  std::array<std::array<double, kPoiCategories>, kFunctionClasses> poi_mix = {{{0.12, 0.10, 0.08, 0.70},
                                                                               {0.15, 0.70, 0.08, 0.07},
                                                                               {0.15, 0.15, 0.60, 0.10},
                                                                               {0.60, 0.20, 0.08, 0.12},
                                                                               {0.10, 0.15, 0.10, 0.65}}};

  static std::array<HourlyShape, kFunctionClasses> default_shapes();
  /// 32x32 grid with ~60 stations: small enough for CI.
  static CityConfig desk();
  /// Throws ConfigError for degenerate values.
  void validate() const;
};

struct Poi {
  geom::Point position;
  PoiCategory category = PoiCategory::entertainment;
};

struct Bounds {
  double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0;  // km
};

struct CityModel {
  CityConfig config;
  int height = 0;
  int width = 0;
  Bounds bounds;
  Mask mask;
  std::vector<geom::Point> stations;  // grid units
  ZonePartition district;
  ZonePartition street_block;
  ZonePartition fine;
  std::vector<Poi> pois;
  std::vector<FunctionClass> cell_class;  // per cell; meaningful inside the mask
  std::vector<double> base_level;         // per cell persons scale, 0 outside
  std::array<HourlyShape, kFunctionClasses> effective_shapes{};  // shapes after the constant-total rescaling
  int downtown_row = 0;
  int downtown_col = 0;

  RegionProfile profile(std::size_t cell) const;
  std::size_t in_boundary_cells() const;
};

/// Builds a city. Fails with ConfigError on grids smaller than 16x16 or fewer than 4 stations.
CityModel generate_city(const CityConfig& config);
CityModel generate_city(std::uint64_t seed, int grid_h, int grid_w, int n_stations, int n_pois);

/// Hourly ground truth at the fine level: config.days weekdays x 24 frames.
PopCube generate_population(const CityModel& city, std::uint64_t seed);

/// Nearest-station device counts per frame, thinned by the hour's dropout factor.
/// The integer part of each station count is thinned binomially and the
/// fractional remainder is scaled, so the expectation is exactly p * N.
StationSeries simulate_device_records(const PopCube& truth, const CityModel& city,
                                      const std::array<double, 24>& dropout_profile, std::uint64_t seed);

/// Index of the nearest station to each in-boundary cell centre (-1 outside).
std::vector<int> nearest_station(const CityModel& city);

/// PoI counts per cell and category.
PoiGrid grid_pois(const CityModel& city);

/// Groups the zones of `child` inside each zone of `parent` into compact
/// clusters so that the result has about `target_zones` zones in total. The
/// result is nested between the two partitions.
ZonePartition group_within(const ZonePartition& child, const ZonePartition& parent, int target_zones, Level level,
                           std::mt19937_64& rng);

}  // namespace popmap::citygen
