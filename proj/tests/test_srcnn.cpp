#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "popmap/citygen.hpp"
#include "popmap/error.hpp"
#include "popmap/preprocess.hpp"
#include "popmap/srcnn.hpp"

using namespace popmap;
using namespace popmap::srcnn;

namespace {

struct World {
  citygen::CityModel city;
  PopCube truth;
  PoiGrid pois;
  Ladder ladder;
};

const World& world() {
  static const World w = [] {
    World x;
    citygen::CityConfig cc = citygen::CityConfig::desk();
    cc.days = 2;
    x.city = citygen::generate_city(cc);
    x.truth = citygen::generate_population(x.city, 1);
    x.pois = citygen::grid_pois(x.city);
    x.ladder = build_ladder(x.city.district, x.city.street_block, x.city.fine, 1);
    return x;
  }();
  return w;
}

TrainConfig quick(int iterations) {
  TrainConfig t;
  t.lr_hidden = 3e-3;
  t.lr_output = 3e-3;
  t.iterations = iterations;
  t.batch = 4;

  t.patch = 16;
  t.stride = 8;
  return t;
}

Architecture small_arch() { return {8, 4, 5, 1, 3}; }

}  // namespace

TEST_CASE("ladder zone counts grow geometrically and nest") {
  const Ladder& l = world().ladder;
  CHECK_NOTHROW(l.validate());
  const int d = l.levels[0].zone_count, s = l.levels[2].zone_count, f = l.levels[4].zone_count;
  // clustering may merge a zone or two
  CHECK(std::abs(l.levels[1].zone_count - std::sqrt(static_cast<double>(d) * s)) <= 2.0);
  CHECK(std::abs(l.levels[3].zone_count - std::sqrt(static_cast<double>(s) * f)) <= 0.02 * l.levels[3].zone_count);
  for (std::size_t i = 0; i + 1 < l.levels.size(); ++i) CHECK(l.levels[i].zone_count < l.levels[i + 1].zone_count);
  CHECK(&l.at(Level::street_block) == &l.levels[2]);

  Ladder broken = l;
  std::swap(broken.levels[1], broken.levels[3]);
  CHECK_THROWS_AS(broken.validate(), PartitionError);
}

TEST_CASE("intermediate targets come only from aggregated truth") {
  const World& w = world();
  const auto streams = make_intermediate_targets(w.truth, w.ladder);
  REQUIRE(streams.size() == 4);
  for (std::size_t u = 0; u < 4; ++u) {
    const PairStream& s = streams[u];
    CHECK(s.input_level == kLadderOrder[u]);
    CHECK(s.target_level == kLadderOrder[u + 1]);
    CHECK(s.inputs.size() == w.truth.frames.size());
    REQUIRE(s.provenance.size() == s.inputs.size());
    for (const auto& tag : s.provenance) CHECK(tag.rfind("aggregate(truth,", 0) == 0);
    // every input conserves the target's total
    double a = 0.0, b = 0.0;
    for (double v : s.inputs[3].values) a += v;
    for (double v : s.targets[3].values) b += v;
    CHECK(a == doctest::Approx(b).epsilon(1e-12));
  }
}

TEST_CASE("channel layout and standardization round trip") {
  const World& w = world();
  const GridMap& pop = w.truth.frames[0].map;
  CHECK(build_input(pop, w.pois, PoiSubset::all()).channels == 5);
  CHECK(build_input(pop, w.pois, PoiSubset::none()).channels == 1);
  CHECK(build_input(pop, w.pois, PoiSubset::parse("{1,4}")).channels == 3);

  auto m = build_input(pop, w.pois, PoiSubset::all());
  const auto original = m.values;
  const ChannelStats stats = fit_stats({m});
  standardize(m, stats);
  double mean = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < m.plane(); ++i) {
    if (!m.mask[i]) continue;
    mean += m.values[i];
    ++n;
  }
  CHECK(std::abs(mean / static_cast<double>(n)) < 1e-9);
  destandardize(m, stats);
  for (std::size_t i = 0; i < original.size(); ++i) CHECK(m.values[i] == doctest::Approx(original[i]).epsilon(1e-12));

  ChannelStats wrong = stats;
  wrong.mean.pop_back();
  CHECK_THROWS_AS(standardize(m, wrong), ShapeError);
}

TEST_CASE("unit forward shapes and untrained guard") {
  SrcnnUnit unit(small_arch(), PoiSubset::all(), Level::street_block, Level::intermediate_b, 3);
  CHECK(unit.in_channels() == 5);
  const nd::Tensor out = unit.forward(nd::Tensor::zeros({2, 5, 12, 10}), true);
  CHECK(out.shape() == nd::Shape{2, 1, 12, 10});
  CHECK_THROWS_AS(unit.apply(world().truth.frames[0].map, world().pois), StateError);
  CHECK_THROWS_AS(SrcnnUnit({8, 4, 4, 1, 3}, PoiSubset::all(), Level::district, Level::fine, 1), ConfigError);
}

TEST_CASE("a unit learns the identity map") {
  const World& w = world();
  PairStream s;
  s.input_level = s.target_level = Level::fine;
  for (const Frame& f : w.truth.frames) {
    s.inputs.push_back(f.map);
    s.targets.push_back(f.map);
    s.provenance.push_back("identity");
  }
  SrcnnUnit unit(small_arch(), PoiSubset::none(), Level::fine, Level::fine, 5);
  TrainConfig tc = quick(4000);
  tc.batch = 8;
  tc.final_lr_scale = 0.02;
  tc.frozen_bn_share = 0.5;
  const TrainReport rep = unit.train(s, w.pois, tc);
  CHECK(rep.loss_trace.size() == 4000);
  double head = 0.0, tail = 0.0;
  for (int i = 0; i < 20; ++i) {
    head += rep.loss_trace[static_cast<std::size_t>(i)];
    tail += rep.loss_trace[rep.loss_trace.size() - 1 - static_cast<std::size_t>(i)];
  }
  CHECK(tail < head);

  double se = 0.0, sum = 0.0, sum_sq = 0.0;
  std::size_t n = 0;
  for (std::size_t t = 0; t < s.inputs.size(); t += 5) {
    const GridMap out = unit.apply(s.inputs[t], w.pois);
    for (std::size_t i = 0; i < out.values.size(); ++i) {
      if (!out.mask[i]) {
        CHECK(out.values[i] == 0.0);
        continue;
      }
      CHECK(out.values[i] >= 0.0);
      const double y = s.targets[t].values[i];
      se += (out.values[i] - y) * (out.values[i] - y);
      sum += y;
      sum_sq += y * y;
      ++n;
    }
  }
  const double mean = sum / static_cast<double>(n);
  const double sd = std::sqrt(sum_sq / static_cast<double>(n) - mean * mean);
  CHECK(std::sqrt(se / static_cast<double>(n)) < 0.05 * sd);
}

TEST_CASE("unit training is deterministic") {
  const World& w = world();
  const auto streams = make_intermediate_targets(w.truth, w.ladder);
  SrcnnUnit a(small_arch(), PoiSubset::all(), Level::street_block, Level::intermediate_b, 9);
  SrcnnUnit b(small_arch(), PoiSubset::all(), Level::street_block, Level::intermediate_b, 9);
  const auto ra = a.train(streams[2], w.pois, quick(15));
  const auto rb = b.train(streams[2], w.pois, quick(15));
  CHECK(ra.loss_trace == rb.loss_trace);
  const GridMap in = streams[2].inputs[7];
  CHECK(a.apply(in, w.pois).values == b.apply(in, w.pois).values);
}

TEST_CASE("stacked mapper emits fine maps and round trips") {
  const World& w = world();
  StackConfig cfg = StackConfig::desk();
  cfg.arch = small_arch();
  cfg.stage1 = quick(5);
  cfg.stage2 = quick(5);
  StackReport rep;
  const StackedMapper m = train_stacked(w.truth, w.ladder, w.pois, cfg, &rep);
  CHECK(m.trained());
  for (const auto& u : rep.units) CHECK(u.loss_trace.size() == 5);
  const PopCube coarse = preprocess::aggregate(w.truth, w.city.district);
  const PopCube out = m.map_cube(coarse, w.pois);
  REQUIRE(out.frames.size() == coarse.frames.size());
  CHECK(out.frames[0].map.level == Level::fine);

  const auto dir = std::filesystem::temp_directory_path() / "popmap_srcnn_stack";
  std::filesystem::remove_all(dir);
  m.save(dir);
  const StackedMapper back = StackedMapper::load(dir);
  CHECK(back.map_level(coarse.frames[4].map, w.pois).values == m.map_level(coarse.frames[4].map, w.pois).values);
  std::filesystem::remove_all(dir);
}
