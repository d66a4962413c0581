#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "popmap/citygen.hpp"
#include "popmap/error.hpp"
#include "popmap/io.hpp"

using namespace popmap;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const char* name) {
  const fs::path d = fs::temp_directory_path() / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

GridMap random_map(int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 5000.0);
  Mask mask(static_cast<std::size_t>(h) * w, 1);
  for (std::size_t i = 0; i < mask.size(); i += 7) mask[i] = 0;
  GridMap m = GridMap::zeros(h, w, Level::fine, mask);
  for (std::size_t i = 0; i < m.values.size(); ++i) m.values[i] = mask[i] ? u(rng) * u(rng) / 977.0 : 0.0;
  return m;
}

}  // namespace

TEST_CASE("grid csv round trips at 1e-9 with a mask sidecar") {
  const fs::path d = scratch("popmap_io_csv");
  GridMap m = random_map(9, 13, 1);
  m.level = Level::street_block;
  io::write_grid_csv(d / "a.csv", m, 3, 17);
  CHECK(fs::exists(d / "a.mask.csv"));
  const io::GridCsv back = io::read_grid_csv(d / "a.csv");
  CHECK(back.day == 3);
  CHECK(back.hour == 17);
  CHECK(back.map.level == Level::street_block);
  CHECK(back.map.height == 9);
  CHECK(back.map.width == 13);
  CHECK(back.map.mask == m.mask);
  for (std::size_t i = 0; i < m.values.size(); ++i) CHECK(std::abs(back.map.values[i] - m.values[i]) <= 1e-9);

  std::ifstream in(d / "a.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "# street_block,9,13,3,17");

  fs::remove(d / "a.mask.csv");
  CHECK_THROWS_AS(io::read_grid_csv(d / "a.csv"), InputError);
  io::write_text(d / "b.csv", "# fine,1,2,0,0\n1,nan\n");
  io::write_text(d / "b.mask.csv", "1,1\n");
  CHECK_THROWS_AS(io::read_grid_csv(d / "b.csv"), InputError);
  fs::remove_all(d);
}

TEST_CASE("out-of-boundary cells are written as zero") {
  const fs::path d = scratch("popmap_io_zero");
  GridMap m = random_map(4, 4, 2);
  m.values[0] = 123.0;  // cell 0 is masked out
  io::write_grid_csv(d / "z.csv", m, 0, 0);
  CHECK(io::read_grid_csv(d / "z.csv").map.values[0] == 0.0);
  fs::remove_all(d);
}

TEST_CASE("PCB1 cube round trips exactly") {
  const fs::path d = scratch("popmap_io_cube");
  PopCube cube;
  for (int t = 0; t < 30; ++t) cube.frames.push_back({t / 24, t % 24, random_map(6, 5, 10 + t)});
  io::write_cube(d / "c.pcb", cube);
  CHECK(fs::file_size(d / "c.pcb") == 4 + 3 * 8 + 30 * 30 * 8);
  const std::string raw = io::read_text(d / "c.pcb");
  CHECK(raw.substr(0, 4) == "PCB1");
  CHECK(static_cast<unsigned char>(raw[4]) == 30);
  CHECK(static_cast<unsigned char>(raw[12]) == 6);
  CHECK(static_cast<unsigned char>(raw[20]) == 5);

  const PopCube back = io::read_cube(d / "c.pcb", cube.mask());
  REQUIRE(back.frames.size() == 30);
  for (std::size_t t = 0; t < 30; ++t) {
    CHECK(back.frames[t].day == cube.frames[t].day);
    CHECK(back.frames[t].hour == cube.frames[t].hour);
    CHECK(back.frames[t].map.values == cube.frames[t].map.values);
  }
  fs::remove(d / "c.pcb.json");
  CHECK(io::read_cube(d / "c.pcb", cube.mask()).frames[25].hour == 1);
  CHECK_THROWS_AS(io::read_cube(d / "c.pcb", Mask(7, 1)), ShapeError);
  io::write_text(d / "bad.pcb", "PCB2xxxxxxxxxxxxxxxxxxxxxxxx");
  CHECK_THROWS_AS(io::read_cube(d / "bad.pcb", cube.mask()), InputError);
  fs::remove_all(d);
}

TEST_CASE("pgm16 scale recovers the maximum to 0.01%") {
  const fs::path d = scratch("popmap_io_pgm");
  const GridMap m = random_map(11, 8, 3);
  const io::PgmScale s = io::write_pgm16(d / "m.pgm", m);
  int h = 0, w = 0;
  const auto px = io::read_pgm16(d / "m.pgm", &h, &w);
  CHECK(h == 11);
  CHECK(w == 8);
  const auto top = *std::max_element(px.begin(), px.end());
  CHECK(top == 65535);
  const auto side = nlohmann::json::parse(io::read_text(d / "m.pgm.json"));
  const double scale = side.at("scale").get<double>();
  CHECK(scale == doctest::Approx(s.scale).epsilon(1e-15));
  CHECK(std::abs(scale * top - s.max) <= 1e-4 * s.max);
  // every pixel within half a grey level
  for (std::size_t i = 0; i < px.size(); ++i) {
    if (m.mask[i]) CHECK(std::abs(px[i] * scale - m.values[i]) <= 0.5 * scale + 1e-9);
  }
  fs::remove_all(d);
}

TEST_CASE("run-length coding") {
  const std::vector<int> v{3, 3, 3, 0, 1, 1, 3};
  CHECK(io::rle_encode(v) == std::vector<int>{3, 3, 0, 1, 1, 2, 3, 1});
  CHECK(io::rle_decode(io::rle_encode(v)) == v);
  CHECK(io::rle_encode({}).empty());
  CHECK_THROWS_AS(io::rle_decode({1}), InputError);
  CHECK_THROWS_AS(io::rle_decode({1, 0}), InputError);
}

TEST_CASE("city json round trips and regenerates the same population") {
  citygen::CityConfig cc = citygen::CityConfig::desk();
  cc.days = 1;
  cc.n_pois = 500;
  const auto city = citygen::generate_city(cc);
  const auto j = io::city_to_json(city);
  CHECK(j.contains("bounds"));
  CHECK(j.contains("stations"));
  CHECK(j.at("pois").size() == 500);
  const auto back = io::city_from_json(nlohmann::json::parse(j.dump()));
  CHECK(back.mask == city.mask);
  CHECK(back.district.labels == city.district.labels);
  CHECK(back.fine.labels == city.fine.labels);
  CHECK(back.base_level == city.base_level);
  CHECK(back.stations.size() == city.stations.size());
  const PopCube a = citygen::generate_population(city, 4);
  const PopCube b = citygen::generate_population(back, 4);
  for (std::size_t t = 0; t < a.frames.size(); ++t) CHECK(a.frames[t].map.values == b.frames[t].map.values);
}

TEST_CASE("city config overrides reject unknown keys") {
  const auto base = citygen::CityConfig::desk();
  const auto c = io::city_config_from_json({{"days", 3}, {"seed", 9}}, base);
  CHECK(c.days == 3);
  CHECK(c.seed == 9);
  CHECK(c.grid_h == base.grid_h);
  CHECK_THROWS_AS(io::city_config_from_json({{"dayz", 3}}, base), ConfigError);
  CHECK_THROWS_AS(io::city_config_from_json({{"days", "three"}}, base), ConfigError);
  const auto full = io::city_config_from_json(io::city_config_to_json(base), citygen::CityConfig{});
  CHECK(io::city_config_to_json(full) == io::city_config_to_json(base));
}

TEST_CASE("atomic text write and checksums") {
  const fs::path d = scratch("popmap_io_text");
  io::write_text_atomic(d / "m.json", "{}");
  io::write_text_atomic(d / "m.json", "{\"a\":1}");
  CHECK(io::read_text(d / "m.json") == "{\"a\":1}");
  CHECK(!fs::exists(d / "m.json.tmp"));
  // published FNV-1a 64 test vectors
  CHECK(io::fnv1a("", 0) == 0xcbf29ce484222325ULL);
  CHECK(io::fnv1a("a", 1) == 0xaf63dc4c8601ec8cULL);
  CHECK(io::fnv1a_file(d / "m.json") == io::fnv1a("{\"a\":1}", 7));
  CHECK(io::hex64(0xabcULL) == "0000000000000abc");
  fs::remove_all(d);
}
