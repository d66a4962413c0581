#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "gradcheck.hpp"
#include "popmap/citygen.hpp"
#include "popmap/error.hpp"
#include "popmap/temporal.hpp"

using namespace popmap;
using namespace popmap::temporal;
using popmap::testing::grad_check;

namespace {

TemporalConfig small_config(std::uint64_t seed = 3) {
  TemporalConfig c;
  c.embedding = 4;
  c.hidden = 12;
  c.iterations = 250;
  c.batch = 16;
  c.lr = 1e-2;
  c.seed = seed;
  return c;
}

std::vector<RegionSeries> constant_series(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> level(20.0, 400.0);
  std::vector<RegionSeries> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::array<double, kHours> v{};
    v.fill(level(rng));
    out.push_back(RegionSeries::full(i, 0, v));
  }
  return out;
}

}  // namespace

TEST_CASE("one-hot hours") {
  const nd::Tensor e = TimeEmbedding::one_hot(5);
  REQUIRE(e.numel() == 24);
  for (int h = 0; h < 24; ++h) CHECK(e.data()[static_cast<std::size_t>(h)] == (h == 5 ? 1.0 : 0.0));
  CHECK_THROWS_AS(TimeEmbedding::one_hot(24), InputError);
  CHECK_THROWS_AS(TimeEmbedding::one_hot(-1), InputError);
}

TEST_CASE("identity table reproduces one-hot codes") {
  nd::Rng rng(1);
  TimeEmbedding emb(24, rng);
  auto w = emb.table.weight.data();
  std::fill(w.begin(), w.end(), 0.0);
  for (std::size_t i = 0; i < 24; ++i) w[i * 24 + i] = 1.0;
  for (int h = 0; h < 24; ++h) {
    const nd::Tensor got = emb.embed(h);
    const nd::Tensor want = TimeEmbedding::one_hot(h);
    for (std::size_t i = 0; i < 24; ++i) CHECK(got.data()[i] == want.data()[i]);
  }
  const nd::Tensor batch = emb.embed_batch(7, 3);
  CHECK(batch.dim(0) == 3);
  CHECK(batch.data()[2 * 24 + 7] == 1.0);
}

TEST_CASE("embedding gradient touches only the looked-up column") {
  nd::Rng rng(2);
  TimeEmbedding emb(6, rng);
  emb.table.weight.zero_grad();
  nd::Tensor loss = nd::mse_loss(emb.embed(9), nd::Tensor::zeros({6}));
  loss.backward();
  const auto g = emb.table.weight.grad();
  REQUIRE(g.size() == 6 * 24);
  for (std::size_t r = 0; r < 6; ++r) {
    for (std::size_t c = 0; c < 24; ++c) {
      if (c != 9) CHECK(g[r * 24 + c] == 0.0);
    }
  }
}

TEST_CASE("embedding lookup gradient matches finite differences") {
  std::mt19937_64 gen(5);
  for (int trial = 0; trial < 6; ++trial) {
    nd::Rng rng(static_cast<std::uint64_t>(trial) + 10);
    TimeEmbedding emb(3 + static_cast<std::size_t>(trial), rng);
    const int hour = static_cast<int>(gen() % 24);
    const nd::Tensor target = popmap::testing::random_tensor({emb.width()}, gen, false);
    auto r = grad_check({emb.table.weight}, [&] { return nd::mse_loss(emb.embed(hour), target); });
    CHECK(r.max_rel_error < 1e-4);
  }
}

TEST_CASE("temporal model shapes and parameter count") {
  TemporalConfig c = small_config();
  TemporalModel m(c);
  const std::size_t e = 4, h = 12;
  const std::size_t expected = e * 24 + 4 * h * (1 + e) + 4 * h * h + 4 * h + h + 1;
  CHECK(m.parameter_count() == expected);
  nd::NoGradGuard guard;
  const nd::Tensor out = m.forward(nd::Tensor::zeros({5, 24}), std::vector<std::uint8_t>(5 * 24, 1));
  CHECK(out.dim(0) == 5);
  CHECK(out.dim(1) == 24);
  CHECK_THROWS_AS(m.forward(nd::Tensor::zeros({5, 23}), std::vector<std::uint8_t>(5 * 23, 1)), ShapeError);

  c.time_embedding = false;
  TemporalModel flat(c);
  CHECK(flat.parameter_count() == 4 * h * 1 + 4 * h * h + 4 * h + h + 1);
  for (const auto& t : flat.tensors()) CHECK(t.name != "embedding.weight");

  c.hidden = 0;
  CHECK_THROWS_AS(TemporalModel{c}, ConfigError);
}

TEST_CASE("parameter count does not depend on the number of regions") {
  TemporalConfig c = small_config();
  c.iterations = 5;
  TemporalModel a(c), b(c);
  const auto few = constant_series(3, 1);
  const auto many = constant_series(300, 2);
  a.train(few, few);
  b.train(many, many);
  CHECK(a.parameter_count() == b.parameter_count());
}

TEST_CASE("untrained model refuses to smooth") {
  TemporalModel m(small_config());
  CHECK_THROWS_AS(m.smooth_series(constant_series(1, 1)[0]), StateError);
}

TEST_CASE("constant series are learnable") {
  const auto series = constant_series(64, 4);
  TemporalModel m(small_config());
  const TemporalReport rep = m.train(series, series);
  CHECK(rep.series == 64);
  CHECK(rep.loss_trace.size() == 250);
  CHECK(rep.loss_trace.back() < rep.loss_trace.front());
  const auto fresh = constant_series(10, 99);
  for (const auto& s : fresh) {
    const auto out = m.smooth_series(s);
    for (double v : out) CHECK(std::abs(v - s.values[0]) < 0.05 * s.values[0]);
  }
}

TEST_CASE("hidden steps still get a positive estimate") {
  citygen::CityConfig cc = citygen::CityConfig::desk();
  const auto shape = cc.shapes[static_cast<std::size_t>(citygen::FunctionClass::residential)];
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> level(50.0, 300.0);
  std::vector<RegionSeries> series;
  for (std::size_t i = 0; i < 96; ++i) {
    std::array<double, kHours> v{};
    const double l = level(rng);
    for (int t = 0; t < kHours; ++t) v[static_cast<std::size_t>(t)] = l * shape[static_cast<std::size_t>(t)];
    series.push_back(RegionSeries::full(i, 0, v));
  }
  TemporalConfig c = small_config();
  c.mask_rate = 0.2;
  c.iterations = 300;
  TemporalModel m(c);
  m.train(series, series);
  RegionSeries probe = series[0];
  probe.values[23] = 0.0;
  probe.known[23] = 0;
  const auto out = m.smooth_series(probe);
  CHECK(out[23] > 0.0);
  CHECK(out[23] > 0.3 * series[0].values[23]);

  c.mask_rate = 1.0;
  TemporalModel bad(c);
  CHECK_THROWS_AS(bad.train(series, series), ConfigError);
}

TEST_CASE("same seed gives identical training") {
  const auto series = constant_series(32, 8);
  TemporalConfig c = small_config(11);
  c.iterations = 40;
  TemporalModel a(c), b(c);
  const auto ra = a.train(series, series);
  const auto rb = b.train(series, series);
  CHECK(ra.loss_trace == rb.loss_trace);
  CHECK(a.smooth_series(series[3]) == b.smooth_series(series[3]));
}

TEST_CASE("smooth_cube keeps out-of-boundary cells at zero") {
  citygen::CityConfig cc = citygen::CityConfig::desk();
  cc.days = 2;
  cc.n_pois = 500;
  const auto city = citygen::generate_city(cc);
  const PopCube truth = citygen::generate_population(city, 2);
  TemporalConfig c = small_config();
  c.iterations = 20;
  TemporalReport rep;
  const TemporalModel m = train_temporal(truth, truth, c, &rep);
  CHECK(rep.series == city.in_boundary_cells() * 2);
  const PopCube out = smooth_cube(truth, m);
  REQUIRE(out.frames.size() == truth.frames.size());
  for (const Frame& f : out.frames) {
    for (std::size_t i = 0; i < f.map.values.size(); ++i) {
      if (!city.mask[i]) CHECK(f.map.values[i] == 0.0);
      else CHECK(f.map.values[i] >= 0.0);
    }
  }
  PopCube partial = truth;
  partial.frames.pop_back();
  CHECK_THROWS_AS(extract_series(partial), InputError);
  CHECK_THROWS_AS(train_temporal(partial, truth, c), InputError);
}

TEST_CASE("save and load reproduce the smoothing") {
  const auto series = constant_series(16, 12);
  TemporalConfig c = small_config();
  c.iterations = 30;
  TemporalModel m(c);
  m.train(series, series);
  const auto dir = std::filesystem::temp_directory_path() / "popmap_temporal_roundtrip";
  std::filesystem::remove_all(dir);
  m.save(dir);
  const TemporalModel back = TemporalModel::load(dir);
  CHECK(back.trained());
  CHECK(back.config().hidden == c.hidden);
  CHECK(back.smooth_series(series[5]) == m.smooth_series(series[5]));
  std::filesystem::remove_all(dir);
}
