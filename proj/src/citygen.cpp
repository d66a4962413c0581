#include "popmap/citygen.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "popmap/error.hpp"

namespace popmap::citygen {

namespace {

struct Bump {
  double x, y, amplitude, sigma;
};

double sq(double v) { return v * v; }

geom::Point cell_center(std::size_t cell, int width) {
  return {static_cast<double>(cell % static_cast<std::size_t>(width)) + 0.5,
          static_cast<double>(cell / static_cast<std::size_t>(width)) + 0.5};
}

// k-means++ seeding followed by a few weighted Lloyd rounds over the given points.
std::vector<int> cluster_points(const std::vector<geom::Point>& pts, const std::vector<double>& weights, int k,
                                std::mt19937_64& rng) {
  const std::size_t n = pts.size();
  std::vector<int> assign(n, 0);
  if (k <= 1 || n <= 1) return assign;
  if (static_cast<std::size_t>(k) >= n) {
    std::iota(assign.begin(), assign.end(), 0);
    return assign;
  }
  std::vector<geom::Point> centers;
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  centers.push_back(pts[pick(rng)]);
  std::vector<double> d2(n, std::numeric_limits<double>::max());
  while (static_cast<int>(centers.size()) < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], sq(pts[i].x - centers.back().x) + sq(pts[i].y - centers.back().y));
      total += d2[i];
    }
    std::size_t chosen = 0;
    if (total <= 0.0) {
      break;
    }
    double r = std::uniform_real_distribution<double>(0.0, total)(rng);
    for (std::size_t i = 0; i < n; ++i) {
      r -= d2[i];
      if (r <= 0.0 && d2[i] > 0.0) {
        chosen = i;
        break;
      }
      chosen = i;
    }
    centers.push_back(pts[chosen]);
  }
  for (int round = 0; round < 5; ++round) {
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::max();
      for (std::size_t c = 0; c < centers.size(); ++c) {
        const double d = sq(pts[i].x - centers[c].x) + sq(pts[i].y - centers[c].y);
        if (d < best) {
          best = d;
          assign[i] = static_cast<int>(c);
        }
      }
    }
    std::vector<double> sx(centers.size(), 0.0), sy(centers.size(), 0.0), sw(centers.size(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      sx[assign[i]] += weights[i] * pts[i].x;
      sy[assign[i]] += weights[i] * pts[i].y;
      sw[assign[i]] += weights[i];
    }
    for (std::size_t c = 0; c < centers.size(); ++c) {
      if (sw[c] > 0.0) centers[c] = {sx[c] / sw[c], sy[c] / sw[c]};
    }
  }
  return assign;
}

constexpr std::array<double, kFunctionClasses> kCityMix = {0.45, 0.18, 0.12, 0.10, 0.15};

FunctionClass draw_class(double radius, double bias, std::mt19937_64& rng) {
  // probabilities for residential, workplace, transit, mixed, suburb by normalized distance to downtown
  std::array<double, kFunctionClasses> p{};
  if (radius < 0.25) {
    p = {0.10, 0.50, 0.10, 0.30, 0.00};
  } else if (radius < 0.55) {
    p = {0.55, 0.15, 0.15, 0.15, 0.00};
  } else if (radius < 0.8) {
    p = {0.60, 0.10, 0.10, 0.00, 0.20};
  } else {
    p = {0.30, 0.10, 0.00, 0.00, 0.60};
  }
  for (std::size_t k = 0; k < kFunctionClasses; ++k) p[k] = bias * p[k] + (1.0 - bias) * kCityMix[k];
  std::discrete_distribution<int> dist(p.begin(), p.end());
  return static_cast<FunctionClass>(dist(rng));
}

// Separable Gaussian blur with zero padding.
std::vector<double> blur(const std::vector<double>& in, int h, int w, double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  for (int d = -radius; d <= radius; ++d) kernel[d + radius] = std::exp(-0.5 * sq(d / sigma));
  std::vector<double> tmp(in.size(), 0.0), out(in.size(), 0.0);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      double acc = 0.0;
      for (int d = -radius; d <= radius; ++d) {
        if (c + d >= 0 && c + d < w) acc += kernel[d + radius] * in[static_cast<std::size_t>(r) * w + c + d];
      }
      tmp[static_cast<std::size_t>(r) * w + c] = acc;
    }
  }
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      double acc = 0.0;
      for (int d = -radius; d <= radius; ++d) {
        if (r + d >= 0 && r + d < h) acc += kernel[d + radius] * tmp[static_cast<std::size_t>(r + d) * w + c];
      }
      out[static_cast<std::size_t>(r) * w + c] = acc;
    }
  }
  return out;
}

// Zero mean, unit variance over the masked cells.
std::vector<double> unit_variance(std::vector<double> v, const Mask& mask) {
  double s = 0.0, ss = 0.0, n = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!mask[i]) continue;
    s += v[i];
    ss += v[i] * v[i];
    n += 1.0;
  }
  const double mean = s / n;
  const double sd = std::sqrt(std::max(ss / n - mean * mean, 1e-300));
  for (double& x : v) x = (x - mean) / sd;
  return v;
}

}  // namespace

std::string_view function_class_name(FunctionClass c) {
  switch (c) {
    case FunctionClass::residential:
      return "residential";
    case FunctionClass::workplace:
      return "workplace";
    case FunctionClass::transit:
      return "transit";
    case FunctionClass::mixed:
      return "mixed";
    case FunctionClass::suburb:
      return "suburb";
  }
  return "unknown";
}

std::array<HourlyShape, kFunctionClasses> CityConfig::default_shapes() {
  return {{
      // residential: empties during working hours, full at night
      {1.00, 1.00, 1.00, 1.00, 1.00, 1.00, 0.95, 0.80, 0.55, 0.40, 0.35, 0.35,
       0.36, 0.35, 0.35, 0.36, 0.40, 0.50, 0.68, 0.82, 0.92, 0.97, 1.00, 1.00},
      // workplace
      {0.25, 0.25, 0.25, 0.25, 0.25, 0.27, 0.35, 0.70, 1.60, 2.40, 2.60, 2.60,
       2.50, 2.60, 2.60, 2.50, 2.30, 1.70, 0.90, 0.55, 0.40, 0.32, 0.28, 0.26},
      // transit: rush-hour peaks
      {0.30, 0.25, 0.25, 0.25, 0.30, 0.45, 0.90, 1.80, 1.90, 1.20, 0.90, 0.90,
       1.00, 0.90, 0.90, 1.00, 1.30, 1.90, 1.80, 1.10, 0.80, 0.60, 0.45, 0.35},
      // mixed / entertainment: evening peak
      {0.50, 0.40, 0.35, 0.35, 0.35, 0.40, 0.50, 0.70, 0.90, 1.10, 1.25, 1.40,
       1.50, 1.40, 1.30, 1.30, 1.35, 1.45, 1.60, 1.70, 1.60, 1.30, 0.90, 0.65},
      // suburb: mild daytime dip
      {1.00, 1.00, 1.00, 1.00, 1.00, 1.00, 0.97, 0.90, 0.82, 0.78, 0.76, 0.76,
       0.77, 0.76, 0.76, 0.77, 0.80, 0.85, 0.92, 0.96, 0.99, 1.00, 1.00, 1.00},
  }};
}

CityConfig CityConfig::desk() {
  CityConfig c;
  c.grid_h = 32;
  c.grid_w = 32;
  c.n_stations = 60;
  c.n_pois = 16000;
  c.n_districts = 6;
  c.n_street_blocks = 64;
  c.days = 10;
  c.balanced_districts = true;
  c.class_radius_bias = 0.5;
  c.hotspot_length = 2.0;
  c.regional_sigma = 0.25;
  return c;
}

void CityConfig::validate() const {
  if (grid_h < 16 || grid_w < 16) throw ConfigError("city grid must be at least 16x16");
  if (n_stations < 4) throw ConfigError("city needs at least 4 stations");
  if (n_pois < 0) throw ConfigError("n_pois must be non-negative");
  if (n_districts < 1 || n_street_blocks <= n_districts) {
    throw ConfigError("zone counts must satisfy 1 <= districts < street blocks");
  }
  if (days < 1) throw ConfigError("days must be positive");
  if (!(mean_density > 0.0) || noise_sigma < 0.0 || hotspot_sigma < 0.0 || poi_coupling < 0.0 ||
      hotspot_length < 0.0 || regional_sigma < 0.0 || class_radius_bias < 0.0 || class_radius_bias > 1.0) {
    throw ConfigError("density and noise parameters out of range");
  }
  if (station_uniform_share < 0.0 || station_uniform_share > 1.0) {
    throw ConfigError("station_uniform_share must lie in [0,1]");
  }
  for (const HourlyShape& s : shapes) {
    for (double v : s) {
      if (!(v > 0.0)) throw ConfigError("hourly shape multipliers must be positive");
    }
  }
}

RegionProfile CityModel::profile(std::size_t cell) const {
  RegionProfile p;
  p.function_class = cell_class[cell];
  p.base_level = base_level[cell];
  p.hourly_shape = effective_shapes[static_cast<std::size_t>(p.function_class)];
  return p;
}

std::size_t CityModel::in_boundary_cells() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

ZonePartition group_within(const ZonePartition& child, const ZonePartition& parent, int target_zones, Level level,
                           std::mt19937_64& rng) {
  if (!parent.contains(child)) {
    throw PartitionError("group_within: child partition is not nested in the parent");
  }
  const std::size_t nc = static_cast<std::size_t>(child.zone_count);
  std::vector<double> cx(nc, 0.0), cy(nc, 0.0), cw(nc, 0.0);
  std::vector<int> parent_of(nc, -1);
  for (std::size_t i = 0; i < child.labels.size(); ++i) {
    const int z = child.labels[i];
    if (z < 0) continue;
    const auto p = cell_center(i, child.width);
    cx[z] += p.x;
    cy[z] += p.y;
    cw[z] += 1.0;
    parent_of[z] = parent.labels[i];
  }
  std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(parent.zone_count));
  for (std::size_t z = 0; z < nc; ++z) {
    cx[z] /= cw[z];
    cy[z] /= cw[z];
    members[static_cast<std::size_t>(parent_of[z])].push_back(z);
  }

  std::vector<int> group(nc, -1);
  int next = 0;
  for (const auto& kids : members) {
    const double share = static_cast<double>(kids.size()) / static_cast<double>(nc);
    int k = static_cast<int>(std::lround(share * target_zones));
    k = std::clamp(k, 1, static_cast<int>(kids.size()));
    std::vector<geom::Point> pts;
    std::vector<double> w;
    for (std::size_t z : kids) {
      pts.push_back({cx[z], cy[z]});
      w.push_back(cw[z]);
    }
    const auto assign = cluster_points(pts, w, k, rng);
    for (std::size_t i = 0; i < kids.size(); ++i) group[kids[i]] = next + assign[i];
    next += k;
  }
  std::vector<int> labels(child.labels.size(), -1);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (child.labels[i] >= 0) labels[i] = group[static_cast<std::size_t>(child.labels[i])];
  }
  ZonePartition out = ZonePartition::from_labels(child.height, child.width, std::move(labels), level);
  out.validate();
  return out;
}

CityModel generate_city(const CityConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int h = config.grid_h;
  const int w = config.grid_w;
  const std::size_t cells = static_cast<std::size_t>(h) * w;

  CityModel city;
  city.config = config;
  city.height = h;
  city.width = w;
  city.bounds = {0.0, 0.0, w * config.cell_km, h * config.cell_km};

  // Boundary: a wobbly ellipse inscribed in the grid.
  const double cx = 0.5 * w, cy = 0.5 * h;
  const double a1 = 0.05 + 0.07 * unit(rng), a2 = 0.03 + 0.04 * unit(rng);
  const double p1 = 2.0 * std::numbers::pi * unit(rng), p2 = 2.0 * std::numbers::pi * unit(rng);
  city.mask.assign(cells, 0);
  for (std::size_t i = 0; i < cells; ++i) {
    const auto c = cell_center(i, w);
    const double dx = (c.x - cx) / (0.5 * w * 0.97);
    const double dy = (c.y - cy) / (0.5 * h * 0.97);
    const double theta = std::atan2(dy, dx);
    const double reach = 1.0 + a1 * std::sin(3.0 * theta + p1) + a2 * std::sin(5.0 * theta + p2);
    city.mask[i] = std::hypot(dx, dy) <= reach * 0.92 ? 1 : 0;
  }

  // Latent density: downtown bump, a few sub-centres, a floor.
  const double extent = std::min(h, w);
  std::vector<Bump> bumps;
  bumps.push_back({cx + (unit(rng) - 0.5) * 0.2 * w, cy + (unit(rng) - 0.5) * 0.2 * h, 1.0, 0.22 * extent});
  for (int b = 0; b < 3; ++b) {
    const double ang = 2.0 * std::numbers::pi * unit(rng);
    const double rad = 0.25 + 0.2 * unit(rng);
    bumps.push_back({cx + std::cos(ang) * rad * 0.5 * w, cy + std::sin(ang) * rad * 0.5 * h, 0.35 + 0.3 * unit(rng),
                     (0.08 + 0.06 * unit(rng)) * extent});
  }
  std::vector<double> smooth(cells, 0.0);
  for (std::size_t i = 0; i < cells; ++i) {
    if (!city.mask[i]) continue;
    const auto c = cell_center(i, w);
    double v = 0.06;
    for (const Bump& b : bumps) v += b.amplitude * std::exp(-(sq(c.x - b.x) + sq(c.y - b.y)) / (2.0 * sq(b.sigma)));
    smooth[i] = v;
  }

  // Nested zones.
  city.fine = ZonePartition::identity(h, w, city.mask);
  std::vector<int> whole(cells, -1);
  for (std::size_t i = 0; i < cells; ++i) whole[i] = city.mask[i] ? 0 : -1;
  const ZonePartition city_zone = ZonePartition::from_labels(h, w, whole, Level::district);
  city.district = group_within(city.fine, city_zone, config.n_districts, Level::district, rng);
  city.street_block = group_within(city.fine, city.district, config.n_street_blocks, Level::street_block, rng);

  // Lognormal hotspot multiplier per cell.
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> hotspot(cells);
  for (double& v : hotspot) v = normal(rng);
  if (config.hotspot_length > 0.0) hotspot = unit_variance(blur(hotspot, h, w, config.hotspot_length), city.mask);
  for (double& v : hotspot) v = std::exp(config.hotspot_sigma * v - 0.5 * sq(config.hotspot_sigma));

  // Function class per street-block, by distance of its centroid to downtown.
  const Bump& core = bumps.front();
  double max_r = 0.0;
  for (std::size_t i = 0; i < cells; ++i) {
    if (!city.mask[i]) continue;
    const auto c = cell_center(i, w);
    max_r = std::max(max_r, std::hypot(c.x - core.x, c.y - core.y));
  }
  const std::size_t nsb = static_cast<std::size_t>(city.street_block.zone_count);
  std::vector<double> sx(nsb, 0.0), sy(nsb, 0.0), sn(nsb, 0.0);
  for (std::size_t i = 0; i < cells; ++i) {
    const int z = city.street_block.labels[i];
    if (z < 0) continue;
    const auto c = cell_center(i, w);
    sx[z] += c.x;
    sy[z] += c.y;
    sn[z] += 1.0;
  }
  std::vector<FunctionClass> block_class(nsb);
  for (std::size_t z = 0; z < nsb; ++z) {
    const double r = std::hypot(sx[z] / sn[z] - core.x, sy[z] / sn[z] - core.y) / max_r;
    block_class[z] = draw_class(r, config.class_radius_bias, rng);
  }
  if (config.balanced_districts) {
    // every district gets the city-wide mix by population mass: blocks in random
    // order, each to the class furthest below its share
    std::vector<std::vector<std::size_t>> blocks_of(static_cast<std::size_t>(city.district.zone_count));
    std::vector<double> mass(nsb, 0.0);
    std::vector<std::uint8_t> seen(nsb, 0);
    for (std::size_t i = 0; i < cells; ++i) {
      const int z = city.street_block.labels[i];
      if (z < 0) continue;
      mass[z] += smooth[i] * hotspot[i];
      if (seen[z]) continue;
      seen[z] = 1;
      blocks_of[static_cast<std::size_t>(city.district.labels[i])].push_back(static_cast<std::size_t>(z));
    }
    double norm = 0.0;
    for (std::size_t k = 0; k < kFunctionClasses; ++k) norm += kCityMix[k] * config.class_density[k];
    for (auto& blocks : blocks_of) {
      std::shuffle(blocks.begin(), blocks.end(), rng);
      double total = 0.0;
      for (std::size_t z : blocks) total += mass[z];
      std::array<double, kFunctionClasses> assigned{};
      for (std::size_t z : blocks) {
        std::size_t best = 0;
        double best_gap = -std::numeric_limits<double>::max();
        for (std::size_t k = 0; k < kFunctionClasses; ++k) {
          const double gap = (kCityMix[k] * config.class_density[k] / norm) * total - assigned[k];
          if (gap > best_gap) {
            best_gap = gap;
            best = k;
          }
        }
        block_class[z] = static_cast<FunctionClass>(best);
        assigned[best] += mass[z] * config.class_density[best];
      }
    }
  }
  city.cell_class.assign(cells, FunctionClass::residential);
  for (std::size_t i = 0; i < cells; ++i) {
    const int z = city.street_block.labels[i];
    if (z >= 0) city.cell_class[i] = block_class[static_cast<std::size_t>(z)];
  }

  // Base level per cell.
  city.base_level.assign(cells, 0.0);
  for (std::size_t i = 0; i < cells; ++i) {
    if (!city.mask[i]) continue;
    city.base_level[i] = smooth[i] * config.class_density[static_cast<std::size_t>(city.cell_class[i])] * hotspot[i];
  }

  // Rescale each hour so the city total is constant across the day.
  std::array<double, 24> hour_total{};
  for (std::size_t i = 0; i < cells; ++i) {
    if (!city.mask[i]) continue;
    const auto& s = config.shapes[static_cast<std::size_t>(city.cell_class[i])];
    for (int t = 0; t < 24; ++t) hour_total[t] += city.base_level[i] * s[t];
  }
  const double mean_total = std::accumulate(hour_total.begin(), hour_total.end(), 0.0) / 24.0;
  for (std::size_t k = 0; k < kFunctionClasses; ++k) {
    for (int t = 0; t < 24; ++t) city.effective_shapes[k][t] = config.shapes[k][t] * mean_total / hour_total[t];
  }

  std::vector<double> mean_pop(cells, 0.0);
  double sum_mean = 0.0;
  for (std::size_t i = 0; i < cells; ++i) {
    if (!city.mask[i]) continue;
    const auto& s = city.effective_shapes[static_cast<std::size_t>(city.cell_class[i])];
    mean_pop[i] = city.base_level[i] * std::accumulate(s.begin(), s.end(), 0.0) / 24.0;
    sum_mean += mean_pop[i];
  }
  const double scale = config.mean_density * static_cast<double>(city.in_boundary_cells()) / sum_mean;
  std::size_t best = 0;
  for (std::size_t i = 0; i < cells; ++i) {
    city.base_level[i] *= scale;
    mean_pop[i] *= scale;
    if (mean_pop[i] > mean_pop[best]) best = i;
  }
  city.downtown_row = static_cast<int>(best / static_cast<std::size_t>(w));
  city.downtown_col = static_cast<int>(best % static_cast<std::size_t>(w));

  // Stations cluster where people are.
  std::vector<double> uniform_w(cells);
  for (std::size_t i = 0; i < cells; ++i) uniform_w[i] = city.mask[i] ? 1.0 : 0.0;
  std::discrete_distribution<std::size_t> by_density(mean_pop.begin(), mean_pop.end());
  std::discrete_distribution<std::size_t> by_area(uniform_w.begin(), uniform_w.end());
  while (city.stations.size() < static_cast<std::size_t>(config.n_stations)) {
    const std::size_t cell = unit(rng) < config.station_uniform_share ? by_area(rng) : by_density(rng);
    geom::Point p{static_cast<double>(cell % w) + unit(rng), static_cast<double>(cell / w) + unit(rng)};
    if (std::find(city.stations.begin(), city.stations.end(), p) == city.stations.end()) {
      city.stations.push_back(p);
    }
  }

  // PoIs follow population with a category mix set by the cell's function.
  std::vector<double> poi_w(cells, 0.0);
  for (std::size_t i = 0; i < cells; ++i) {
    if (city.mask[i]) poi_w[i] = std::pow(mean_pop[i], config.poi_coupling);
  }
  std::discrete_distribution<std::size_t> poi_cell(poi_w.begin(), poi_w.end());
  std::array<std::discrete_distribution<int>, kFunctionClasses> mix;
  for (std::size_t k = 0; k < kFunctionClasses; ++k) {
    mix[k] = std::discrete_distribution<int>(config.poi_mix[k].begin(), config.poi_mix[k].end());
  }
  city.pois.reserve(static_cast<std::size_t>(config.n_pois));
  for (int n = 0; n < config.n_pois; ++n) {
    const std::size_t cell = poi_cell(rng);
    const auto cls = static_cast<std::size_t>(city.cell_class[cell]);
    Poi poi;
    poi.category = static_cast<PoiCategory>(mix[cls](rng));
    poi.position = {static_cast<double>(cell % w) + unit(rng), static_cast<double>(cell / w) + unit(rng)};
    city.pois.push_back(poi);
  }
  return city;
}

CityModel generate_city(std::uint64_t seed, int grid_h, int grid_w, int n_stations, int n_pois) {
  CityConfig c;
  c.seed = seed;
  c.grid_h = grid_h;
  c.grid_w = grid_w;
  c.n_stations = n_stations;
  c.n_pois = n_pois;
  // scale zone counts with the grid so small grids keep sensible zones
  const double cells = static_cast<double>(grid_h) * grid_w;
  c.n_districts = std::max(2, static_cast<int>(std::lround(15.0 * cells / (83.0 * 114.0))));
  c.n_street_blocks = std::max(c.n_districts + 1, static_cast<int>(std::lround(200.0 * cells / (83.0 * 114.0))));
  if (cells < 83.0 * 114.0) {
    c.n_districts = std::max(c.n_districts, 4);
    c.n_street_blocks = std::max(c.n_street_blocks, static_cast<int>(cells / 16.0));
  }
  return generate_city(c);
}

PopCube generate_population(const CityModel& city, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x9E3779B97F4A7C15ULL);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double sigma = city.config.noise_sigma;
  const std::size_t cells = city.mask.size();
  PopCube cube;
  cube.frames.reserve(static_cast<std::size_t>(city.config.days) * 24);
  std::vector<double> day_factor(cells, 1.0);
  const double regional_sigma = city.config.regional_sigma;
  std::vector<double> regional(static_cast<std::size_t>(city.district.zone_count), 1.0);
  for (int d = 0; d < city.config.days; ++d) {
    for (std::size_t i = 0; i < cells; ++i) {
      if (!city.mask[i]) continue;
      day_factor[i] = sigma > 0.0 ? std::exp(sigma * normal(rng) - 0.5 * sigma * sigma) : 1.0;
    }
    for (double& r : regional) {
      r = regional_sigma > 0.0 ? std::exp(regional_sigma * normal(rng) - 0.5 * regional_sigma * regional_sigma) : 1.0;
    }
    for (int t = 0; t < 24; ++t) {
      Frame f{d, t, GridMap::zeros(city.height, city.width, Level::fine, city.mask)};
      for (std::size_t i = 0; i < cells; ++i) {
        if (!city.mask[i]) continue;
        const auto& s = city.effective_shapes[static_cast<std::size_t>(city.cell_class[i])];
        f.map.values[i] = city.base_level[i] * s[t] * day_factor[i] *
                          regional[static_cast<std::size_t>(city.district.labels[i])];
      }
      cube.frames.push_back(std::move(f));
    }
  }
  return cube;
}

std::vector<int> nearest_station(const CityModel& city) {
  std::vector<int> nearest(city.mask.size(), -1);
  for (std::size_t i = 0; i < city.mask.size(); ++i) {
    if (!city.mask[i]) continue;
    const auto c = cell_center(i, city.width);
    double best = std::numeric_limits<double>::max();
    for (std::size_t s = 0; s < city.stations.size(); ++s) {
      const double d = sq(c.x - city.stations[s].x) + sq(c.y - city.stations[s].y);
      if (d < best) {
        best = d;
        nearest[i] = static_cast<int>(s);
      }
    }
  }
  return nearest;
}

StationSeries simulate_device_records(const PopCube& truth, const CityModel& city,
                                      const std::array<double, 24>& dropout_profile, std::uint64_t seed) {
  for (double p : dropout_profile) {
    if (!(p > 0.0 && p <= 1.0)) throw ConfigError("dropout profile values must lie in (0,1]");
  }
  const auto nearest = nearest_station(city);
  std::mt19937_64 rng(seed ^ 0xD1B54A32D192ED03ULL);
  StationSeries out = StationSeries::zeros(city.stations.size(), truth.frames.size());
  std::vector<double> sums(city.stations.size());
  for (std::size_t t = 0; t < truth.frames.size(); ++t) {
    const Frame& f = truth.frames[t];
    out.slot_hour[t] = f.hour;
    out.slot_day[t] = f.day;
    std::fill(sums.begin(), sums.end(), 0.0);
    for (std::size_t i = 0; i < nearest.size(); ++i) {
      if (nearest[i] >= 0) sums[static_cast<std::size_t>(nearest[i])] += f.map.values[i];
    }
    const double p = dropout_profile[static_cast<std::size_t>(f.hour)];
    for (std::size_t s = 0; s < sums.size(); ++s) {
      if (p == 1.0) {
        out.at(s, t) = sums[s];
        continue;
      }
      const double whole = std::floor(sums[s]);
      std::binomial_distribution<long long> thin(static_cast<long long>(whole), p);
      out.at(s, t) = static_cast<double>(thin(rng)) + (sums[s] - whole) * p;
    }
  }
  return out;
}

PoiGrid grid_pois(const CityModel& city) {
  PoiGrid g;
  g.height = city.height;
  g.width = city.width;
  for (auto& c : g.counts) c.assign(static_cast<std::size_t>(city.height) * city.width, 0.0);
  for (const Poi& p : city.pois) {
    const int col = std::clamp(static_cast<int>(std::floor(p.position.x)), 0, city.width - 1);
    const int row = std::clamp(static_cast<int>(std::floor(p.position.y)), 0, city.height - 1);
    g[p.category][static_cast<std::size_t>(row) * city.width + col] += 1.0;
  }
  return g;
}

}  // namespace popmap::citygen
