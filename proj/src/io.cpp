#include "popmap/io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "popmap/error.hpp"

namespace popmap::io {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

static_assert(std::endian::native == std::endian::little, "PCB1 IO assumes a little-endian host");

std::ofstream open_out(const fs::path& path, bool binary) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) throw InputError("cannot write " + path.string());
  return out;
}

std::ifstream open_in(const fs::path& path, bool binary) {
  std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
  if (!in) throw InputError("cannot read " + path.string());
  return in;
}

fs::path sidecar(const fs::path& path) { return fs::path(path.string() + ".json"); }

std::vector<double> parse_row(const std::string& line, const fs::path& path) {
  std::vector<double> row;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    char* end = nullptr;
    const double v = std::strtod(cell.c_str(), &end);
    if (end == cell.c_str() || !std::isfinite(v)) throw InputError(path.string() + ": bad value '" + cell + "'");
    row.push_back(v);
  }
  return row;
}

}  // namespace

fs::path mask_path(const fs::path& csv) {
  fs::path p = csv;
  p.replace_extension(".mask.csv");
  return p;
}

void write_grid_csv(const fs::path& path, const GridMap& map, int day, int hour) {
  std::ofstream out = open_out(path, false);
  out << "# " << level_name(map.level) << ',' << map.height << ',' << map.width << ',' << day << ',' << hour << '\n';
  out << std::setprecision(17);
  for (int r = 0; r < map.height; ++r) {
    for (int c = 0; c < map.width; ++c) {
      const std::size_t i = static_cast<std::size_t>(r) * map.width + c;
      const double v = map.mask[i] ? map.values[i] : 0.0;
      if (!std::isfinite(v)) throw InputError("write_grid_csv: non-finite value");
      out << (c ? "," : "") << v;
    }
    out << '\n';
  }
  std::ofstream m = open_out(mask_path(path), false);
  for (int r = 0; r < map.height; ++r) {
    for (int c = 0; c < map.width; ++c) {
      m << (c ? "," : "") << static_cast<int>(map.mask[static_cast<std::size_t>(r) * map.width + c] != 0);
    }
    m << '\n';
  }
  if (!out || !m) throw InputError("write failed for " + path.string());
}

GridCsv read_grid_csv(const fs::path& path) {
  std::ifstream in = open_in(path, false);
  std::string line;
  if (!std::getline(in, line) || line.rfind("# ", 0) != 0) throw InputError(path.string() + ": missing header");
  std::stringstream hs(line.substr(2));
  std::string level, h, w, d, t;
  if (!std::getline(hs, level, ',') || !std::getline(hs, h, ',') || !std::getline(hs, w, ',') ||
      !std::getline(hs, d, ',') || !std::getline(hs, t, ',')) {
    throw InputError(path.string() + ": header must be '# level,H,W,day,hour'");
  }
  GridCsv g;
  const int height = std::stoi(h), width = std::stoi(w);
  g.day = std::stoi(d);
  g.hour = std::stoi(t);
  if (height < 1 || width < 1) throw InputError(path.string() + ": bad grid size");
  std::vector<double> values;
  for (int r = 0; r < height; ++r) {
    if (!std::getline(in, line)) throw InputError(path.string() + ": too few rows");
    const auto row = parse_row(line, path);
    if (row.size() != static_cast<std::size_t>(width)) throw InputError(path.string() + ": ragged row");
    values.insert(values.end(), row.begin(), row.end());
  }
  const fs::path mp = mask_path(path);
  if (!fs::exists(mp)) throw InputError(path.string() + ": mask sidecar " + mp.string() + " missing");
  std::ifstream min = open_in(mp, false);
  Mask mask;
  for (int r = 0; r < height; ++r) {
    if (!std::getline(min, line)) throw InputError(mp.string() + ": too few rows");
    const auto row = parse_row(line, mp);
    if (row.size() != static_cast<std::size_t>(width)) throw InputError(mp.string() + ": ragged row");
    for (double v : row) mask.push_back(v != 0.0 ? 1 : 0);
  }
  g.map = GridMap::zeros(height, width, parse_level(level), mask);
  g.map.values = std::move(values);
  return g;
}

void write_cube(const fs::path& path, const PopCube& cube) {
  std::ofstream out = open_out(path, true);
  const std::uint64_t dims[3] = {cube.frames.size(), static_cast<std::uint64_t>(cube.height()),
                                 static_cast<std::uint64_t>(cube.width())};
  out.write("PCB1", 4);
  out.write(reinterpret_cast<const char*>(dims), sizeof dims);
  json meta;
  meta["level"] = cube.frames.empty() ? "fine" : std::string(level_name(cube.frames.front().map.level));
  std::vector<int> days, hours;
  for (const Frame& f : cube.frames) {
    if (f.map.cells() != dims[1] * dims[2]) throw ShapeError("write_cube: frames differ in shape");
    out.write(reinterpret_cast<const char*>(f.map.values.data()),
              static_cast<std::streamsize>(f.map.values.size() * sizeof(double)));
    days.push_back(f.day);
    hours.push_back(f.hour);
  }
  if (!out) throw InputError("write failed for " + path.string());
  meta["day"] = days;
  meta["hour"] = hours;
  write_text(sidecar(path), meta.dump() + "\n");
}

PopCube read_cube(const fs::path& path, const Mask& mask) {
  std::ifstream in = open_in(path, true);
  char magic[4];
  std::uint64_t dims[3];
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(dims), sizeof dims);
  if (!in || std::memcmp(magic, "PCB1", 4) != 0) throw InputError(path.string() + ": not a PCB1 cube");
  const std::uint64_t t = dims[0], h = dims[1], w = dims[2];
  if (h * w != mask.size()) throw ShapeError(path.string() + ": cube grid does not match the mask");
  Level level = Level::fine;
  std::vector<int> days, hours;
  if (fs::exists(sidecar(path))) {
    const json meta = json::parse(read_text(sidecar(path)));
    level = parse_level(meta.at("level").get<std::string>());
    days = meta.at("day").get<std::vector<int>>();
    hours = meta.at("hour").get<std::vector<int>>();
    if (days.size() != t || hours.size() != t) throw InputError(path.string() + ": sidecar frame count mismatch");
  }
  PopCube cube;
  cube.frames.reserve(t);
  for (std::uint64_t k = 0; k < t; ++k) {
    Frame f;
    f.day = days.empty() ? static_cast<int>(k / 24) : days[k];
    f.hour = hours.empty() ? static_cast<int>(k % 24) : hours[k];
    f.map = GridMap::zeros(static_cast<int>(h), static_cast<int>(w), level, mask);
    in.read(reinterpret_cast<char*>(f.map.values.data()), static_cast<std::streamsize>(h * w * sizeof(double)));
    if (!in) throw InputError(path.string() + ": truncated cube");
    cube.frames.push_back(std::move(f));
  }
  return cube;
}

PgmScale write_pgm16(const fs::path& path, const GridMap& map) {
  PgmScale s;
  for (std::size_t i = 0; i < map.values.size(); ++i) {
    if (map.mask[i]) s.max = std::max(s.max, map.values[i]);
  }
  s.scale = s.max > 0.0 ? s.max / 65535.0 : 1.0;
  std::ofstream out = open_out(path, true);
  out << "P5\n" << map.width << ' ' << map.height << "\n65535\n";
  std::vector<unsigned char> bytes;
  bytes.reserve(map.values.size() * 2);
  for (std::size_t i = 0; i < map.values.size(); ++i) {
    const double v = map.mask[i] ? std::clamp(map.values[i] / s.scale, 0.0, 65535.0) : 0.0;
    const auto g = static_cast<std::uint16_t>(std::lround(v));
    bytes.push_back(static_cast<unsigned char>(g >> 8));
    bytes.push_back(static_cast<unsigned char>(g & 0xFF));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw InputError("write failed for " + path.string());
  write_text(sidecar(path), json{{"scale", s.scale}, {"max", s.max}, {"level", level_name(map.level)}}.dump() + "\n");
  return s;
}

std::vector<std::uint16_t> read_pgm16(const fs::path& path, int* height, int* width) {
  std::ifstream in = open_in(path, true);
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  in.get();
  if (!in || magic != "P5" || maxval != 65535 || w < 1 || h < 1) throw InputError(path.string() + ": not a 16-bit PGM");
  std::vector<unsigned char> bytes(static_cast<std::size_t>(w) * h * 2);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!in) throw InputError(path.string() + ": truncated PGM");
  std::vector<std::uint16_t> px(static_cast<std::size_t>(w) * h);
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<std::uint16_t>((bytes[2 * i] << 8) | bytes[2 * i + 1]);
  if (height) *height = h;
  if (width) *width = w;
  return px;
}

json city_config_to_json(const citygen::CityConfig& c) {
  json shapes = json::array(), mix = json::array();
  for (const auto& s : c.shapes) shapes.push_back(s);
  for (const auto& m : c.poi_mix) mix.push_back(m);
  return {{"seed", c.seed},
          {"grid_h", c.grid_h},
          {"grid_w", c.grid_w},
          {"cell_km", c.cell_km},
          {"n_stations", c.n_stations},
          {"n_pois", c.n_pois},
          {"n_districts", c.n_districts},
          {"n_street_blocks", c.n_street_blocks},
          {"days", c.days},
          {"mean_density", c.mean_density},
          {"noise_sigma", c.noise_sigma},
          {"hotspot_sigma", c.hotspot_sigma},
          {"hotspot_length", c.hotspot_length},
          {"regional_sigma", c.regional_sigma},
          {"balanced_districts", c.balanced_districts},
          {"class_radius_bias", c.class_radius_bias},
          {"poi_coupling", c.poi_coupling},
          {"station_uniform_share", c.station_uniform_share},
          {"shapes", shapes},
          {"class_density", c.class_density},
          {"poi_mix", mix}};
}

citygen::CityConfig city_config_from_json(const json& j, citygen::CityConfig c) {
  if (!j.is_object()) throw ConfigError("city config must be a JSON object");
  const json known = city_config_to_json(c);
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw ConfigError("unknown city config key '" + key + "'");
  }
  try {
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("grid_h")) c.grid_h = j.at("grid_h").get<int>();
    if (j.contains("grid_w")) c.grid_w = j.at("grid_w").get<int>();
    if (j.contains("cell_km")) c.cell_km = j.at("cell_km").get<double>();
    if (j.contains("n_stations")) c.n_stations = j.at("n_stations").get<int>();
    if (j.contains("n_pois")) c.n_pois = j.at("n_pois").get<int>();
    if (j.contains("n_districts")) c.n_districts = j.at("n_districts").get<int>();
    if (j.contains("n_street_blocks")) c.n_street_blocks = j.at("n_street_blocks").get<int>();
    if (j.contains("days")) c.days = j.at("days").get<int>();
    if (j.contains("mean_density")) c.mean_density = j.at("mean_density").get<double>();
    if (j.contains("noise_sigma")) c.noise_sigma = j.at("noise_sigma").get<double>();
    if (j.contains("hotspot_sigma")) c.hotspot_sigma = j.at("hotspot_sigma").get<double>();
    if (j.contains("hotspot_length")) c.hotspot_length = j.at("hotspot_length").get<double>();
    if (j.contains("regional_sigma")) c.regional_sigma = j.at("regional_sigma").get<double>();
    if (j.contains("balanced_districts")) c.balanced_districts = j.at("balanced_districts").get<bool>();
    if (j.contains("class_radius_bias")) c.class_radius_bias = j.at("class_radius_bias").get<double>();
    if (j.contains("poi_coupling")) c.poi_coupling = j.at("poi_coupling").get<double>();
    if (j.contains("station_uniform_share")) c.station_uniform_share = j.at("station_uniform_share").get<double>();
    if (j.contains("shapes")) {
      for (std::size_t k = 0; k < c.shapes.size(); ++k) c.shapes[k] = j.at("shapes").at(k).get<citygen::HourlyShape>();
    }
    if (j.contains("class_density")) c.class_density = j.at("class_density").get<std::array<double, citygen::kFunctionClasses>>();
    if (j.contains("poi_mix")) {
      for (std::size_t k = 0; k < c.poi_mix.size(); ++k) {
        c.poi_mix[k] = j.at("poi_mix").at(k).get<std::array<double, kPoiCategories>>();
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError("bad city config: " + std::string(e.what()));
  }
  c.validate();
  return c;
}

std::vector<int> rle_encode(const std::vector<int>& v) {
  std::vector<int> out;
  for (std::size_t i = 0; i < v.size();) {
    std::size_t j = i;
    while (j < v.size() && v[j] == v[i]) ++j;
    out.push_back(v[i]);
    out.push_back(static_cast<int>(j - i));
    i = j;
  }
  return out;
}

std::vector<int> rle_decode(const std::vector<int>& runs) {
  if (runs.size() % 2 != 0) throw InputError("run-length list must hold value/run pairs");
  std::vector<int> out;
  for (std::size_t i = 0; i < runs.size(); i += 2) {
    if (runs[i + 1] < 1) throw InputError("run lengths must be positive");
    out.insert(out.end(), static_cast<std::size_t>(runs[i + 1]), runs[i]);
  }
  return out;
}

namespace {

json partition_json(const ZonePartition& p) {
  return {{"level", level_name(p.level)}, {"zones", p.zone_count}, {"labels", rle_encode(p.labels)}};
}

ZonePartition partition_from(const json& j, int h, int w) {
  auto labels = rle_decode(j.at("labels").get<std::vector<int>>());
  if (labels.size() != static_cast<std::size_t>(h) * w) throw InputError("zone raster size mismatch");
  return ZonePartition::from_labels(h, w, std::move(labels), parse_level(j.at("level").get<std::string>()));
}

}  // namespace

json city_to_json(const citygen::CityModel& city) {
  json stations = json::array(), pois = json::array(), shapes = json::array();
  for (const auto& s : city.stations) stations.push_back({s.x, s.y});
  for (const auto& p : city.pois) pois.push_back({p.position.x, p.position.y, static_cast<int>(p.category)});
  for (const auto& s : city.effective_shapes) shapes.push_back(s);
  std::vector<int> mask(city.mask.begin(), city.mask.end());
  std::vector<int> classes;
  for (auto c : city.cell_class) classes.push_back(static_cast<int>(c));
  return {{"format", "popmap-city-1"},
          {"config", city_config_to_json(city.config)},
          {"height", city.height},
          {"width", city.width},
          {"bounds", {city.bounds.x0, city.bounds.y0, city.bounds.x1, city.bounds.y1}},
          {"downtown", {city.downtown_row, city.downtown_col}},
          {"mask", rle_encode(mask)},
          {"stations", stations},
          {"district", partition_json(city.district)},
          {"street_block", partition_json(city.street_block)},
          {"fine", partition_json(city.fine)},
          {"cell_class", rle_encode(classes)},
          {"base_level", city.base_level},
          {"effective_shapes", shapes},
          {"pois", pois}};
}

citygen::CityModel city_from_json(const json& j) {
  try {
    if (j.at("format") != "popmap-city-1") throw InputError("unknown city format");
    citygen::CityModel c;
    c.config = city_config_from_json(j.at("config"), citygen::CityConfig{});
    c.height = j.at("height");
    c.width = j.at("width");
    const auto b = j.at("bounds").get<std::vector<double>>();
    c.bounds = {b.at(0), b.at(1), b.at(2), b.at(3)};
    c.downtown_row = j.at("downtown").at(0);
    c.downtown_col = j.at("downtown").at(1);
    const std::size_t cells = static_cast<std::size_t>(c.height) * c.width;
    const auto mask = rle_decode(j.at("mask").get<std::vector<int>>());
    if (mask.size() != cells) throw InputError("mask size mismatch");
    c.mask.assign(mask.begin(), mask.end());
    for (const auto& s : j.at("stations")) c.stations.push_back({s.at(0).get<double>(), s.at(1).get<double>()});
    c.district = partition_from(j.at("district"), c.height, c.width);
    c.street_block = partition_from(j.at("street_block"), c.height, c.width);
    c.fine = partition_from(j.at("fine"), c.height, c.width);
    for (int v : rle_decode(j.at("cell_class").get<std::vector<int>>())) {
      c.cell_class.push_back(static_cast<citygen::FunctionClass>(v));
    }
    c.base_level = j.at("base_level").get<std::vector<double>>();
    if (c.cell_class.size() != cells || c.base_level.size() != cells) throw InputError("per-cell array size mismatch");
    for (std::size_t k = 0; k < c.effective_shapes.size(); ++k) {
      c.effective_shapes[k] = j.at("effective_shapes").at(k).get<citygen::HourlyShape>();
    }
    for (const auto& p : j.at("pois")) {
      c.pois.push_back({{p.at(0).get<double>(), p.at(1).get<double>()}, static_cast<PoiCategory>(p.at(2).get<int>())});
    }
    return c;
  } catch (const json::exception& e) {
    throw InputError("bad city document: " + std::string(e.what()));
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out = open_out(path, true);
  out << text;
  if (!out) throw InputError("write failed for " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in = open_in(path, true);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_atomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = fs::path(path.string() + ".tmp");
  write_text(tmp, text);
  fs::rename(tmp, path);
}

std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t fnv1a_file(const fs::path& path) {
  std::ifstream in = open_in(path, true);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    h = fnv1a(buf, static_cast<std::size_t>(in.gcount()), h);
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream ss;
  ss << std::hex << std::setw(16) << std::setfill('0') << v;
  return ss.str();
}

}  // namespace popmap::io
