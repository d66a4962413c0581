#pragma once
// File formats: GridMap CSV with a mask sidecar, PCB1 binary cubes, 16-bit PGM
// heatmaps and the city JSON document.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "popmap/citygen.hpp"
#include "popmap/grid.hpp"

namespace popmap::io {

/// `map.csv` -> `map.mask.csv`.
std::filesystem::path mask_path(const std::filesystem::path& csv);

/// Header `# level,H,W,day,hour`, then H rows of W values (0 outside the mask)
/// and the mask as 0/1 rows in the sidecar.
void write_grid_csv(const std::filesystem::path& path, const GridMap& map, int day, int hour);

struct GridCsv {
  GridMap map;
  int day = 0;
  int hour = 0;
};

/// Throws InputError on malformed files, NaN, or a missing/mismatched mask sidecar.
GridCsv read_grid_csv(const std::filesystem::path& path);

/// "PCB1", then T, H, W as u64 little-endian, then T*H*W f64 little-endian.
/// Level and timestamps go to `<path>.json`.
void write_cube(const std::filesystem::path& path, const PopCube& cube);
/// Without the sidecar, frames are stamped day = t / 24, hour = t % 24 at the fine level.
PopCube read_cube(const std::filesystem::path& path, const Mask& mask);

struct PgmScale {
  double scale = 1.0;  // persons per grey level
  double max = 0.0;
};

/// Binary P5 with maxval 65535, big-endian samples, value = round(v / scale).
/// The scale goes to `<path>.json`.
PgmScale write_pgm16(const std::filesystem::path& path, const GridMap& map);
/// Grey levels in row-major order.
std::vector<std::uint16_t> read_pgm16(const std::filesystem::path& path, int* height = nullptr, int* width = nullptr);

nlohmann::json city_config_to_json(const citygen::CityConfig& c);
/// Starts from `base` and overrides the keys present in `j`. Throws ConfigError on unknown keys.
citygen::CityConfig city_config_from_json(const nlohmann::json& j, citygen::CityConfig base);

/// Bounds, stations, run-length encoded rasters and the PoI list.
nlohmann::json city_to_json(const citygen::CityModel& city);
citygen::CityModel city_from_json(const nlohmann::json& j);

/// [value, run, value, run, ...]
std::vector<int> rle_encode(const std::vector<int>& v);
std::vector<int> rle_decode(const std::vector<int>& runs);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);
/// Writes to a temporary sibling and renames it into place.
void write_text_atomic(const std::filesystem::path& path, const std::string& text);

/// FNV-1a 64 over bytes.
std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a_file(const std::filesystem::path& path);
std::string hex64(std::uint64_t v);

}  // namespace popmap::io
