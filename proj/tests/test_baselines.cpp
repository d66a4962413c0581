#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "popmap/baselines.hpp"
#include "popmap/citygen.hpp"
#include "popmap/error.hpp"
#include "popmap/metrics.hpp"
#include "popmap/preprocess.hpp"

using namespace popmap;
using namespace popmap::baselines;

namespace {

PixelDataset synthetic(std::size_t rows, std::uint64_t seed, double noise) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  std::normal_distribution<double> n(0.0, noise);
  PixelDataset d;
  d.log_transform = false;
  for (std::size_t r = 0; r < rows; ++r) {
    double f[5];
    for (double& x : f) x = u(rng);
    d.features.insert(d.features.end(), f, f + 5);
    d.targets.push_back((f[0] > 5.0 ? 3.0 : 0.0) + (f[1] > 2.0 ? 1.0 : -1.0) + 0.3 * f[2] + n(rng));
    d.frame.push_back(0);
    d.cell.push_back(r);
  }
  return d;
}

double rmse(const Regressor& m, const PixelDataset& d) {
  double s = 0.0;
  for (std::size_t r = 0; r < d.rows(); ++r) {
    const double e = m.predict(d.row(r)) - d.targets[r];
    s += e * e;
  }
  return std::sqrt(s / static_cast<double>(d.rows()));
}

}  // namespace

TEST_CASE("log transform round trips") {
  for (double x : {0.0, 0.5, 3.0, 1234.5}) {
    CHECK(inverse_transform(forward_transform(x, true), true) == doctest::Approx(x).epsilon(1e-12));
    CHECK(inverse_transform(forward_transform(x, false), false) == x);
  }
  CHECK(inverse_transform(-3.0, false) == 0.0);
  CHECK(parse_method("forest") == Method::forest);
  CHECK_THROWS_AS(parse_method("svm"), ConfigError);
}

TEST_CASE("pixel dataset has one row per in-boundary cell per frame") {
  citygen::CityConfig cc = citygen::CityConfig::desk();
  cc.days = 2;
  cc.n_pois = 800;
  const auto city = citygen::generate_city(cc);
  const PopCube truth = citygen::generate_population(city, 1);
  const PoiGrid pois = citygen::grid_pois(city);
  const PopCube coarse = preprocess::aggregate(truth, city.district);
  const PixelDataset d = build_pixel_dataset(coarse, truth, pois, true);
  CHECK(d.rows() == city.in_boundary_cells() * truth.frames.size());
  CHECK(d.features.size() == d.rows() * d.width);
  CHECK(d.width == 1 + kPoiCategories);
  const PixelDataset blind = build_pixel_dataset(coarse, PopCube{}, pois, true);
  CHECK(blind.rows() == d.rows());
  PopCube shorter = truth;
  shorter.frames.pop_back();
  CHECK_THROWS_AS(build_pixel_dataset(coarse, shorter, pois, true), InputError);
}

TEST_CASE("tree memorizes target == feature") {
  PixelDataset train = synthetic(2000, 1, 0.0);
  for (std::size_t r = 0; r < train.rows(); ++r) train.targets[r] = train.row(r)[0];
  Hyper hp;
  hp.tree_min_leaf = 1;
  hp.tree_max_depth = 40;
  const auto tree = fit(Method::tree, train, hp);
  CHECK(rmse(*tree, train) < 1e-6);
}

TEST_CASE("lasso with a huge penalty predicts the mean") {
  const PixelDataset train = synthetic(500, 2, 0.5);
  Hyper hp;
  hp.lasso_lambda = 1e6;
  const auto lasso = fit(Method::lasso, train, hp);
  const double mean = std::accumulate(train.targets.begin(), train.targets.end(), 0.0) / 500.0;
  for (std::size_t r = 0; r < 20; ++r) CHECK(lasso->predict(train.row(r)) == doctest::Approx(mean).epsilon(1e-9));
}

TEST_CASE("forest is no worse than a single tree on held-out rows") {
  double tree_sum = 0.0, forest_sum = 0.0;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const PixelDataset train = synthetic(1500, seed, 1.0);
    const PixelDataset test = synthetic(1000, seed + 100, 1.0);
    Hyper hp;
    hp.seed = seed;
    hp.forest_trees = 30;
    tree_sum += rmse(*fit(Method::tree, train, hp), test);
    forest_sum += rmse(*fit(Method::forest, train, hp), test);
  }
  CHECK(forest_sum <= tree_sum);
}

TEST_CASE("mlp learns better than the mean") {
  const PixelDataset train = synthetic(2000, 4, 0.2);
  Hyper hp;
  hp.mlp_iterations = 600;
  const auto mlp = fit(Method::mlp, train, hp);
  const double mean = std::accumulate(train.targets.begin(), train.targets.end(), 0.0) / 2000.0;
  double base = 0.0;
  for (double t : train.targets) base += (t - mean) * (t - mean);
  CHECK(rmse(*mlp, train) < 0.5 * std::sqrt(base / 2000.0));
}

TEST_CASE("baselines are deterministic for a fixed seed") {
  const PixelDataset train = synthetic(800, 5, 0.5);
  Hyper hp;
  hp.forest_trees = 10;
  hp.mlp_iterations = 50;
  for (Method m : {Method::lasso, Method::tree, Method::forest, Method::mlp}) {
    const auto a = fit(m, train, hp);
    const auto b = fit(m, train, hp);
    CHECK(predict(*a, train) == predict(*b, train));
  }
}

TEST_CASE("forest result does not depend on the worker count") {
  const PixelDataset train = synthetic(600, 6, 0.5);
  Hyper hp;
  hp.forest_trees = 12;
  const auto one = fit(Method::forest, train, hp);
  hp.threads = 3;
  const auto three = fit(Method::forest, train, hp);
  CHECK(predict(*one, train) == predict(*three, train));
  hp.threads = 0;
  CHECK_THROWS_AS(fit(Method::forest, train, hp), ConfigError);
}
