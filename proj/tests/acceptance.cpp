// Acceptance run: one PASS/FAIL line per criterion.
//   acceptance [--runs DIR] [--only 1,2,3] [--keep]
// Criteria 4-9 run the desk pipeline for seeds 1-3 plus a second seed-1 run.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "metric_oracle.hpp"
#include "popmap/citygen.hpp"
#include "popmap/io.hpp"
#include "popmap/metrics.hpp"
#include "popmap/nn.hpp"
#include "popmap/ops.hpp"
#include "popmap/pipeline.hpp"
#include "popmap/preprocess.hpp"
#include "popmap/srcnn.hpp"
#include "popmap/temporal.hpp"
#include "voronoi_oracle.hpp"

using namespace popmap;
namespace fs = std::filesystem;
using popmap::testing::grad_check;
using popmap::testing::random_tensor;

namespace {

double now_s() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

int failures = 0;

void verdict(int id, bool ok, const std::string& what) {
  std::printf("%s  criterion %d: %s\n", ok ? "PASS" : "FAIL", id, what.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------- 1

void conservation() {
  const double t0 = now_s();
  citygen::CityConfig cc = citygen::CityConfig::desk();
  const auto city = citygen::generate_city(cc);
  const PopCube truth = citygen::generate_population(city, 1);
  const auto ladder = srcnn::build_ladder(city.district, city.street_block, city.fine, 1);

  std::array<double, 24> act{};
  for (int h = 0; h < 24; ++h) act[static_cast<std::size_t>(h)] = 0.6 + 0.3 * std::sin(h / 4.0) * std::sin(h / 4.0);
  const auto records = citygen::simulate_device_records(truth, city, act, 7);
  const auto corr = preprocess::activation_correct(records);
  double act_err = 0.0;
  for (std::size_t t = 0; t < corr.series.slots; ++t) {
    if (corr.valid(t)) act_err = std::max(act_err, std::abs(corr.series.slot_total(t) / corr.reference_total - 1.0));
  }

  double row_err = 0.0, raster_err = 0.0;
  std::mt19937_64 rng(3);
  for (int layout = 0; layout < 10; ++layout) {
    const auto c = layout == 0 ? city : citygen::generate_city(100 + layout, 24, 20, 8 + 4 * layout, 0);
    const auto w = preprocess::voronoi_weights(c.stations, c.height, c.width, c.mask);
    for (std::size_t s = 0; s < w.stations(); ++s) row_err = std::max(row_err, std::abs(w.row_sum(s) - 1.0));
    std::lognormal_distribution<double> ln(5.0, 1.0);
    for (int k = 0; k < 5; ++k) {
      std::vector<double> v(w.stations());
      double total = 0.0;
      for (double& x : v) total += (x = ln(rng));
      raster_err = std::max(raster_err, std::abs(preprocess::rasterize(v, w, c.mask).total() - total) / total);
    }
  }
  const auto weights = preprocess::voronoi_weights(city.stations, city.height, city.width, city.mask);
  const PopCube raster = preprocess::rasterize_series(corr, weights, city.mask);
  for (const Frame& f : raster.frames) raster_err = std::max(raster_err, std::abs(f.map.total() / corr.reference_total - 1.0));

  double zone_err = 0.0;
  for (const ZonePartition& level : ladder.levels) {
    const PopCube agg = preprocess::aggregate(truth, level);
    for (std::size_t t = 0; t < truth.frames.size(); ++t) {
      std::vector<double> a(static_cast<std::size_t>(level.zone_count), 0.0), b = a;
      for (std::size_t i = 0; i < level.labels.size(); ++i) {
        const int z = level.labels[i];
        if (z < 0) continue;
        a[static_cast<std::size_t>(z)] += agg.frames[t].map.values[i];
        b[static_cast<std::size_t>(z)] += truth.frames[t].map.values[i];
      }
      for (std::size_t z = 0; z < a.size(); ++z) zone_err = std::max(zone_err, std::abs(a[z] - b[z]) / b[z]);
    }
  }
  const double secs = now_s() - t0;
  const bool ok = act_err <= 1e-9 && row_err <= 1e-9 && raster_err <= 1e-9 && zone_err <= 1e-9 && secs < 30.0;
  verdict(1, ok,
          fmt("conservation: activation %.2e, voronoi row sums %.2e, rasterization %.2e, zone totals %.2e "
              "(5 levels x %zu frames), tol 1e-9, %.1f s < 30 s",
              act_err, row_err, raster_err, zone_err, truth.frames.size(), secs));
}

// ---------------------------------------------------------------- 2

void gradients() {
  const double t0 = now_s();
  constexpr int kInstances = 24;
  std::mt19937_64 rng(2024);
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  std::map<std::string, double> worst;
  std::map<std::string, int> count;
  auto record = [&](const std::string& op, double e) {
    worst[op] = std::max(worst[op], e);
    ++count[op];
  };
  using nd::Tensor;
  for (int k = 0; k < kInstances; ++k) {
    {
      const std::size_t n = pick(1, 2), ci = pick(1, 3), co = pick(1, 3), h = pick(3, 6), w = pick(3, 6);
      const std::size_t kk = 2 * pick(0, 2) + 1;
      auto x = random_tensor({n, ci, h, w}, rng);
      auto kern = random_tensor({co, ci, kk, kk}, rng);
      auto b = random_tensor({co}, rng);
      auto target = random_tensor({n, co, h, w}, rng, false);
      record("conv2d", grad_check({x, kern, b}, [&] { return nd::mse_loss(nd::conv2d(x, kern, b), target); }).max_rel_error);
    }
    {
      const std::size_t n = pick(2, 3), c = pick(1, 3), h = pick(2, 4), w = pick(2, 4);
      auto x = random_tensor({n, c, h, w}, rng, true, -2.0, 2.0);
      auto gamma = random_tensor({c}, rng, true, 0.5, 1.5);
      auto beta = random_tensor({c}, rng);
      auto target = random_tensor({n, c, h, w}, rng, false);
      nd::BatchNormStats stats;
      record("batchnorm2d", grad_check({x, gamma, beta}, [&] {
                              return nd::mse_loss(nd::batchnorm2d(x, gamma, beta, stats, true), target);
                            }).max_rel_error);
    }
    {
      const std::size_t b = pick(1, 5), fi = pick(1, 7), fo = pick(1, 6);
      auto x = random_tensor({b, fi}, rng);
      auto w = random_tensor({fo, fi}, rng);
      auto bias = random_tensor({fo}, rng);
      auto target = random_tensor({b, fo}, rng, false);
      record("linear", grad_check({x, w, bias}, [&] { return nd::mse_loss(nd::linear(x, w, bias), target); }).max_rel_error);
    }
    {
      const std::size_t b = pick(1, 3), f = pick(1, 4), hs = pick(1, 4);
      const int steps = pick(1, 3);
      nd::Rng init(rng());
      nd::LstmCell cell(f, hs, init);
      std::vector<Tensor> xs;
      for (int t = 0; t < steps; ++t) xs.push_back(random_tensor({b, f}, rng));
      auto h0 = random_tensor({b, hs}, rng);
      auto c0 = random_tensor({b, hs}, rng);
      auto target = random_tensor({b, hs}, rng, false);
      auto loss = [&] {
        Tensor h = h0, c = c0;
        for (const auto& x : xs) {
          auto s = nd::lstm_cell(x, h, c, cell);
          h = s.h;
          c = s.c;
        }
        return nd::mse_loss(nd::add(h, c), target);
      };
      record("lstm_cell", grad_check({cell.w_ih, cell.w_hh, cell.bias, xs.front(), h0, c0}, loss).max_rel_error);
    }
    {
      const std::size_t n = pick(1, 12);
      auto p = random_tensor({n}, rng, true, -3.0, 3.0);
      auto t = random_tensor({n}, rng, true, -3.0, 3.0);
      record("mse_loss", grad_check({p, t}, [&] { return nd::mse_loss(p, t); }).max_rel_error);
    }
    {
      nd::Rng init(rng());
      temporal::TimeEmbedding emb(static_cast<std::size_t>(pick(1, 10)), init);
      const int hour = pick(0, 23);
      auto target = random_tensor({emb.width()}, rng, false);
      record("embedding", grad_check({emb.table.weight}, [&] { return nd::mse_loss(emb.embed(hour), target); }).max_rel_error);
    }
  }
  const double secs = now_s() - t0;
  bool ok = secs < 120.0;
  std::string detail;
  for (const auto& [op, e] : worst) {
    ok = ok && e < 1e-4 && count[op] >= 20;
    detail += fmt("%s %d x max %.1e, ", op.c_str(), count[op], e);
  }
  verdict(2, ok, "gradients vs central differences: " + detail + fmt("tol 1e-4, %.1f s < 120 s", secs));
}

// ---------------------------------------------------------------- 3

void oracles() {
  const double t0 = now_s();
  double vor = 0.0;
  for (std::uint64_t seed = 31; seed < 36; ++seed) {
    const auto city = citygen::generate_city(seed, 16, 16, 5 + static_cast<int>(seed % 4), 0);
    const auto w = preprocess::voronoi_weights(city.stations, city.height, city.width, city.mask);
    const int per_side = static_cast<int>(std::ceil(std::sqrt(1e6 / static_cast<double>(city.in_boundary_cells()))));
    const auto mc = test::monte_carlo_weights(city.stations, city.height, city.width, city.mask, per_side, seed);
    for (std::size_t s = 0; s < w.stations(); ++s) {
      for (std::size_t cell = 0; cell < city.mask.size(); ++cell) vor = std::max(vor, std::abs(w.weight(s, cell) - mc[s][cell]));
    }
  }

  std::mt19937_64 rng(5);
  double lin = 0.0;
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t b = 1 + trial % 7, fi = 1 + (trial * 5) % 37, fo = 1 + (trial * 3) % 29;
    auto x = random_tensor({b, fi}, rng, false), w = random_tensor({fo, fi}, rng, false), bias = random_tensor({fo}, rng, false);
    const auto y = nd::linear(x, w, bias);
    for (std::size_t r = 0; r < b; ++r) {
      for (std::size_t o = 0; o < fo; ++o) {
        long double s = bias.data()[o];
        for (std::size_t i = 0; i < fi; ++i) s += static_cast<long double>(x.data()[r * fi + i]) * w.data()[o * fi + i];
        lin = std::max(lin, std::abs(y.data()[r * fo + o] - static_cast<double>(s)) / std::max(1.0, std::abs(static_cast<double>(s))));
      }
    }
  }

  double met = 0.0;
  std::lognormal_distribution<double> ln(4.0, 1.0);
  std::normal_distribution<double> noise(1.0, 0.3);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 100 + static_cast<std::size_t>(trial) * 211;
    std::vector<double> p(n), t(n);
    for (std::size_t i = 0; i < n; ++i) {
      t[i] = ln(rng);
      p[i] = std::max(0.0, t[i] * noise(rng));
    }
    const auto r = eval::compute_metrics(p, t);
    const auto o = test::oracle_metrics(p, t);
    met = std::max({met, std::abs(r.rmse - o.rmse) / o.rmse, std::abs(r.nrmse - o.nrmse) / o.nrmse,
                    std::abs(r.mae - o.mae) / o.mae, std::abs(r.corr - o.corr)});
  }

  double bins = 0.0;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    citygen::CityConfig cc = citygen::CityConfig::desk();
    cc.seed = seed;
    cc.days = 1;
    const auto city = citygen::generate_city(cc);
    const PopCube truth = citygen::generate_population(city, seed);
    PopCube pred = truth;
    std::normal_distribution<double> jitter(0.0, 25.0);
    for (Frame& f : pred.frames) {
      for (std::size_t i = 0; i < f.map.values.size(); ++i) {
        if (city.mask[i]) f.map.values[i] = std::max(0.0, f.map.values[i] + jitter(rng));
      }
    }
    const double global = eval::compute_metrics(pred, truth, city.mask).rmse;
    const auto b = eval::locality_breakdown(pred, truth, city, citygen::grid_pois(city));
    for (const auto* curve : {&b.distance, &b.poi, &b.function}) {
      bins = std::max(bins, std::abs(eval::recombine_rmse(*curve) - global) / global);
    }
  }
  const bool ok = vor < 1e-3 && lin <= 1e-12 && met <= 1e-12 && bins <= 1e-9;
  verdict(3, ok,
          fmt("oracles: voronoi vs 1e6-sample Monte Carlo max %.1e (<1e-3, 5 layouts), linear vs naive %.1e (<=1e-12), "
              "metrics vs direct sums %.1e (<=1e-12), bin recombination %.1e (<=1e-9), %.1f s",
              vor, lin, met, bins, now_s() - t0));
}

// ---------------------------------------------------------------- 4-9

using Table = std::vector<std::vector<std::string>>;

Table read_csv(const fs::path& p) {
  Table rows;
  std::ifstream in(p);
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    std::vector<std::string> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(cell);
    if (!row.empty()) rows.push_back(row);
  }
  return rows;
}

double lookup(const Table& t, const std::function<bool(const std::vector<std::string>&)>& match, std::size_t col) {
  for (const auto& r : t) {
    if (match(r)) return std::stod(r.at(col));
  }
  throw std::runtime_error("row not found");
}

struct SeedRun {
  std::uint64_t seed = 0;
  fs::path dir;
  double seconds = 0.0;
  double cv_seconds = 0.0;  // static 5-fold CV training + baselines
  bool ok = false;
};

SeedRun run_seed(std::uint64_t seed, const fs::path& dir) {
  SeedRun r;
  r.seed = seed;
  r.dir = dir;
  fs::remove_all(dir);
  pipeline::ExperimentConfig cfg = pipeline::ExperimentConfig::desk();
  cfg.seed = seed;
  cfg.finalize();
  pipeline::RunOptions opt;
  opt.threads = pipeline::env_threads();
  const double t0 = now_s();
  try {
    pipeline::run_pipeline(cfg, dir, {pipeline::kStageOrder.begin(), pipeline::kStageOrder.end()}, opt);
    r.ok = true;
  } catch (const std::exception& e) {
    std::printf("  seed %llu pipeline failed: %s\n", static_cast<unsigned long long>(seed), e.what());
  }
  r.seconds = now_s() - t0;
  if (r.ok) {
    const auto m = nlohmann::json::parse(io::read_text(dir / "manifest.json"));
    for (const auto& [key, v] : m.at("stages").at("train-spatial").at("timings").items()) {
      if (key.rfind("static/", 0) == 0) r.cv_seconds += v.get<double>();
    }
    r.cv_seconds += m.at("stages").at("baselines").at("wall_s").get<double>();
  }
  std::printf("  seed %llu: desk pipeline %.1f s (%s)\n", static_cast<unsigned long long>(seed), r.seconds,
              r.seconds < 900.0 ? "< 15 min" : "over 15 min");
  std::fflush(stdout);
  return r;
}

void directional(const fs::path& root, const std::set<int>& only) {
  std::vector<SeedRun> runs;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) runs.push_back(run_seed(seed, root / ("seed" + std::to_string(seed))));
  const bool all_ok = std::all_of(runs.begin(), runs.end(), [](const SeedRun& r) { return r.ok; });
  if (!all_ok) {
    for (int c = 4; c <= 9; ++c) {
      if (only.empty() || only.count(c)) verdict(c, false, "pipeline run failed");
    }
    return;
  }
  const double n = static_cast<double>(runs.size());
  auto mean_of = [&](const std::function<double(const SeedRun&)>& f) {
    double s = 0.0;
    for (const auto& r : runs) s += f(r);
    return s / n;
  };

  if (only.empty() || only.count(4)) {
    std::map<std::string, double> rmse;
    std::string per_seed;
    double cv_secs = 0.0;
    for (const auto& r : runs) {
      const Table t = read_csv(r.dir / "metrics" / "metrics.csv");
      per_seed += fmt(" [seed %llu:", static_cast<unsigned long long>(r.seed));
      for (const char* m : {"static", "forest", "tree", "lasso"}) {
        const double v = lookup(t, [&](const auto& row) { return row[0] == m && row[2] == "mean"; }, 3);
        rmse[m] += v / n;
        per_seed += fmt(" %s %.1f", m, v);
      }
      per_seed += "]";
      cv_secs += r.cv_seconds;
    }
    const bool ok = rmse["static"] < rmse["forest"] && rmse["forest"] < rmse["tree"] && rmse["tree"] < rmse["lasso"] &&
                    cv_secs < 1200.0;
    verdict(4, ok,
            fmt("5-fold CV mean RMSE over 3 seeds: static %.2f < forest %.2f < tree %.2f < lasso %.2f; "
                "CV training + baselines %.0f s < 1200 s;",
                rmse["static"], rmse["forest"], rmse["tree"], rmse["lasso"], cv_secs) +
                per_seed);
  }

  if (only.empty() || only.count(5)) {
    int votes = 0;
    std::string per_seed;
    for (const auto& r : runs) {
      const Table t = read_csv(r.dir / "metrics" / "temporal.csv");
      auto get = [&](const char* m) { return lookup(t, [&](const auto& row) { return row[0] == m; }, 3); };
      const double st = get("static"), flat = get("lstm_flat"), emb = get("lstm_emb");
      const double gain = (st - emb) / st;
      const bool ok = emb < flat && flat < st && gain >= 0.05;
      votes += ok;
      per_seed += fmt(" [seed %llu: emb %.4f flat %.4f static %.4f, gain %.1f%% %s]",
                      static_cast<unsigned long long>(r.seed), emb, flat, st, 100.0 * gain, ok ? "yes" : "no");
    }
    verdict(5, 2 * votes > static_cast<int>(runs.size()),
            fmt("NRMSE emb < flat < static with >=5%% gain, majority of seeds: %d/%zu;", votes, runs.size()) + per_seed);
  }

  if (only.empty() || only.count(6)) {
    auto get = [](const SeedRun& r, const char* subset) {
      return lookup(read_csv(r.dir / "metrics" / "poi.csv"), [&](const auto& row) { return row[0] == subset; }, 2);
    };
    const double all = mean_of([&](const SeedRun& r) { return get(r, "1+2+3+4"); });
    const double none = mean_of([&](const SeedRun& r) { return get(r, "none"); });
    std::string per_seed;
    for (const auto& r : runs) {
      per_seed += fmt(" [seed %llu: all %.1f none %.1f]", static_cast<unsigned long long>(r.seed), get(r, "1+2+3+4"),
                      get(r, "none"));
    }
    verdict(6, all <= none, fmt("PoI ablation mean RMSE over 3 seeds: all PoI %.2f <= no PoI %.2f;", all, none) + per_seed);
  }

  if (only.empty() || only.count(7)) {
    int wins = 0;
    std::string detail;
    for (const auto& p : eval::default_periods()) {
      auto get = [&](const SeedRun& r, std::size_t col) {
        return lookup(read_csv(r.dir / "metrics" / "segmented.csv"), [&](const auto& row) { return row[0] == p.label(); }, col);
      };
      const double seg = mean_of([&](const SeedRun& r) { return get(r, 1); });
      const double all = mean_of([&](const SeedRun& r) { return get(r, 2); });
      wins += seg <= all;
      detail += fmt(" [%s: segmented %.2f vs all-hours %.2f]", p.label().c_str(), seg, all);
    }
    verdict(7, wins >= 2, fmt("segmented models no worse in %d/3 periods (mean RMSE over 3 seeds);", wins) + detail);
  }

  if (only.empty() || only.count(8)) {
    auto get = [](const SeedRun& r, std::size_t col) {
      return lookup(read_csv(r.dir / "metrics" / "case_study.csv"), [](const auto& row) { return row[0] == "residential"; }, col);
    };
    const double st = mean_of([&](const SeedRun& r) { return get(r, 1); });
    const double emb = mean_of([&](const SeedRun& r) { return get(r, 3); });
    std::string per_seed;
    for (const auto& r : runs) {
      per_seed += fmt(" [seed %llu: static %.3f smoothed %.3f]", static_cast<unsigned long long>(r.seed), get(r, 1), get(r, 3));
    }
    verdict(8, emb >= 3.0 * st,
            fmt("residential diurnal range / true range: smoothed %.3f >= 3 x static %.3f (= %.3f), ratio %.2f;", emb, st,
                3.0 * st, emb / st) +
                per_seed);
  }

  if (only.empty() || only.count(9)) {
    const SeedRun again = run_seed(1, root / "seed1_repeat");
    bool same = again.ok;
    std::size_t compared = 0;
    for (const char* f : {"metrics.csv", "temporal.csv", "poi.csv", "segmented.csv", "locality.csv", "case_study.csv"}) {
      const fs::path a = runs[0].dir / "metrics" / f, b = again.dir / "metrics" / f;
      same = same && fs::exists(a) && fs::exists(b) && io::read_text(a) == io::read_text(b);
      ++compared;
    }
    verdict(9, same, fmt("two seed-1 desk runs: %zu metric CSVs byte-identical: %s", compared, same ? "yes" : "no"));
  }
}

}  // namespace

int main(int argc, char** argv) {
  fs::path runs = fs::current_path() / "acceptance_runs";
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    if (!std::strcmp(argv[i], "--runs") && i + 1 < argc) {
      runs = argv[++i];
    } else if (!std::strcmp(argv[i], "--only") && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      std::string item;
      while (std::getline(ss, item, ',')) only.insert(std::stoi(item));
    } else {
      std::fprintf(stderr, "usage: acceptance [--runs DIR] [--only 1,2,...]\n");
      return 2;
    }
  }
  auto want = [&](int c) { return only.empty() || only.count(c); };
  try {
    if (want(1)) conservation();
    if (want(2)) gradients();
    if (want(3)) oracles();
    if (want(4) || want(5) || want(6) || want(7) || want(8) || want(9)) directional(runs, only);
  } catch (const std::exception& e) {
    std::printf("FAIL  acceptance aborted: %s\n", e.what());
    return 1;
  }
  std::printf("%s\n", failures ? "acceptance: FAILED" : "acceptance: all criteria passed");
  return failures ? 1 : 0;
}
