#include "popmap/grid.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

#include "popmap/error.hpp"

namespace popmap {

std::string_view level_name(Level level) {
  switch (level) {
    case Level::district:
      return "district";
    case Level::street_block:
      return "street_block";
    case Level::fine:
      return "fine";
    case Level::intermediate_a:
      return "intermediate_a";
    case Level::intermediate_b:
      return "intermediate_b";
  }
  return "unknown";
}

Level parse_level(std::string_view name) {
  for (Level l : {Level::district, Level::street_block, Level::fine, Level::intermediate_a, Level::intermediate_b}) {
    if (level_name(l) == name || std::to_string(static_cast<int>(l)) == name) {
      return l;
    }
  }
  throw InputError("unknown level '" + std::string(name) + "'");
}

GridMap GridMap::zeros(int height, int width, Level level, Mask mask) {
  GridMap m;
  m.height = height;
  m.width = width;
  m.level = level;
  m.values.assign(static_cast<std::size_t>(height) * width, 0.0);
  m.mask = mask.empty() ? Mask(m.values.size(), 1) : std::move(mask);
  if (m.mask.size() != m.values.size()) {
    throw ShapeError("GridMap: mask size does not match " + std::to_string(height) + "x" + std::to_string(width));
  }
  return m;
}

double GridMap::total() const { return std::accumulate(values.begin(), values.end(), 0.0); }

void GridMap::validate() const {
  if (values.size() != cells() || mask.size() != cells()) {
    throw InputError("GridMap: buffer sizes do not match dimensions");
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i]) || values[i] < 0.0) {
      throw InputError("GridMap: value at cell " + std::to_string(i) + " is negative or not finite");
    }
    if (!mask[i] && values[i] != 0.0) {
      throw InputError("GridMap: non-zero value outside the boundary at cell " + std::to_string(i));
    }
  }
}

std::vector<int> PopCube::days() const {
  std::vector<int> out;
  for (const Frame& f : frames) {
    if (out.empty() || out.back() != f.day) out.push_back(f.day);
  }
  return out;
}

PopCube PopCube::select_days(const std::vector<int>& days) const {
  const std::set<int> wanted(days.begin(), days.end());
  PopCube out;
  for (const Frame& f : frames) {
    if (wanted.count(f.day)) out.frames.push_back(f);
  }
  return out;
}

PopCube PopCube::select_hours(int begin, int end) const {
  PopCube out;
  for (const Frame& f : frames) {
    if (f.hour >= begin && f.hour < end) out.frames.push_back(f);
  }
  return out;
}

void PopCube::validate() const {
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const Frame& f = frames[i];
    if (f.hour < 0 || f.hour > 23) throw InputError("PopCube: hour out of range");
    if (i > 0) {
      const Frame& p = frames[i - 1];
      if (f.map.height != p.map.height || f.map.width != p.map.width || f.map.level != p.map.level) {
        throw InputError("PopCube: frames differ in shape or level");
      }
      if (std::pair(f.day, f.hour) <= std::pair(p.day, p.hour)) {
        throw InputError("PopCube: timestamps must be strictly increasing");
      }
    }
  }
}

void require_aligned(const PopCube& a, const PopCube& b, std::string_view what) {
  if (a.frames.size() != b.frames.size()) {
    throw InputError(std::string(what) + ": cubes have different frame counts");
  }
  for (std::size_t i = 0; i < a.frames.size(); ++i) {
    const Frame& fa = a.frames[i];
    const Frame& fb = b.frames[i];
    if (fa.day != fb.day || fa.hour != fb.hour || fa.map.height != fb.map.height || fa.map.width != fb.map.width) {
      throw InputError(std::string(what) + ": cubes are misaligned at frame " + std::to_string(i));
    }
  }
}

ZonePartition ZonePartition::from_labels(int height, int width, std::vector<int> labels, Level level) {
  if (labels.size() != static_cast<std::size_t>(height) * width) {
    throw ShapeError("ZonePartition: label count does not match dimensions");
  }
  std::unordered_map<int, int> remap;
  for (int& l : labels) {
    if (l < 0) {
      l = -1;
      continue;
    }
    auto [it, inserted] = remap.emplace(l, static_cast<int>(remap.size()));
    l = it->second;
  }
  ZonePartition p;
  p.height = height;
  p.width = width;
  p.labels = std::move(labels);
  p.level = level;
  p.zone_count = static_cast<int>(remap.size());
  return p;
}

ZonePartition ZonePartition::identity(int height, int width, const Mask& mask) {
  std::vector<int> labels(mask.size(), -1);
  int next = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) labels[i] = next++;
  }
  return from_labels(height, width, std::move(labels), Level::fine);
}

std::vector<std::size_t> ZonePartition::zone_sizes() const {
  std::vector<std::size_t> sizes(static_cast<std::size_t>(zone_count), 0);
  for (int l : labels) {
    if (l >= 0) ++sizes.at(static_cast<std::size_t>(l));
  }
  return sizes;
}

Mask ZonePartition::mask() const {
  Mask m(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) m[i] = labels[i] >= 0 ? 1 : 0;
  return m;
}

void ZonePartition::validate() const {
  if (labels.size() != static_cast<std::size_t>(height) * width) {
    throw PartitionError("ZonePartition: label count does not match dimensions");
  }
  std::vector<std::size_t> sizes(static_cast<std::size_t>(std::max(zone_count, 0)), 0);
  for (int l : labels) {
    if (l < -1 || l >= zone_count) {
      throw PartitionError("ZonePartition: label " + std::to_string(l) + " outside 0.." +
                           std::to_string(zone_count - 1));
    }
    if (l >= 0) ++sizes[static_cast<std::size_t>(l)];
  }
  for (std::size_t z = 0; z < sizes.size(); ++z) {
    if (sizes[z] == 0) {
      throw PartitionError("ZonePartition: zone " + std::to_string(z) + " has no in-boundary cells");
    }
  }
}

bool ZonePartition::contains(const ZonePartition& finer) const {
  if (finer.labels.size() != labels.size()) return false;
  std::vector<int> parent(static_cast<std::size_t>(finer.zone_count), -2);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int f = finer.labels[i];
    const int c = labels[i];
    if ((f < 0) != (c < 0)) return false;
    if (f < 0) continue;
    int& p = parent[static_cast<std::size_t>(f)];
    if (p == -2) {
      p = c;
    } else if (p != c) {
      return false;
    }
  }
  return true;
}

std::string_view poi_category_name(PoiCategory c) {
  switch (c) {
    case PoiCategory::entertainment:
      return "entertainment";
    case PoiCategory::business:
      return "business";
    case PoiCategory::transportation:
      return "transportation";
    case PoiCategory::residence:
      return "residence";
  }
  return "unknown";
}

std::vector<PoiCategory> PoiSubset::categories() const {
  std::vector<PoiCategory> out;
  for (PoiCategory c : kAllPoiCategories) {
    if (contains(c)) out.push_back(c);
  }
  return out;
}

std::string PoiSubset::signature() const {
  std::ostringstream out;
  out << '{';
  bool first = true;
  for (PoiCategory c : categories()) {
    out << (first ? "" : ",") << static_cast<int>(c) + 1;
    first = false;
  }
  out << '}';
  return out.str();
}

PoiSubset PoiSubset::parse(std::string_view signature) {
  PoiSubset s;
  for (char ch : signature) {
    if (ch >= '1' && ch <= '4') {
      s.bits |= static_cast<std::uint8_t>(1U << (ch - '1'));
    } else if (ch != '{' && ch != '}' && ch != ',' && ch != ' ') {
      throw InputError("bad PoI subset signature '" + std::string(signature) + "'");
    }
  }
  return s;
}

std::vector<PoiSubset> poi_powerset() {
  std::vector<PoiSubset> out;
  for (unsigned b = 0; b < 16; ++b) out.push_back({static_cast<std::uint8_t>(b)});
  return out;
}

}  // namespace popmap

namespace popmap {

StationSeries StationSeries::zeros(std::size_t stations, std::size_t slots) {
  StationSeries s;
  s.stations = stations;
  s.slots = slots;
  s.values.assign(stations * slots, 0.0);
  s.slot_hour.assign(slots, 0);
  s.slot_day.assign(slots, 0);
  return s;
}

double StationSeries::slot_total(std::size_t slot) const {
  double total = 0.0;
  for (std::size_t i = 0; i < stations; ++i) total += at(i, slot);
  return total;
}

}  // namespace popmap
