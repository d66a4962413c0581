#include "popmap/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "popmap/error.hpp"

namespace popmap::eval {

MetricReport compute_metrics(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() != truth.size()) throw InputError("compute_metrics: prediction and truth sizes differ");
  if (pred.empty()) throw InputError("compute_metrics: no values");
  const double n = static_cast<double>(pred.size());
  double se = 0.0, ae = 0.0, sp = 0.0, st = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - truth[i];
    se += d * d;
    ae += std::abs(d);
    sp += pred[i];
    st += truth[i];
  }
  const double mp = sp / n, mt = st / n;
  double cov = 0.0, vp = 0.0, vt = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double a = pred[i] - mp, b = truth[i] - mt;
    cov += a * b;
    vp += a * a;
    vt += b * b;
  }
  MetricReport r;
  r.count = pred.size();
  r.rmse = std::sqrt(se / n);
  r.nrmse = mt != 0.0 ? r.rmse / mt : std::numeric_limits<double>::quiet_NaN();
  r.mae = ae / n;
  if (vp > 0.0 && vt > 0.0) {
    r.corr = std::clamp(cov / std::sqrt(vp * vt), -1.0, 1.0);
    r.corr_defined = true;
  }
  return r;
}

MetricReport compute_metrics(const PopCube& pred, const PopCube& truth, const Mask& mask) {
  require_aligned(pred, truth, "compute_metrics");
  std::vector<double> p, t;
  for (std::size_t f = 0; f < truth.frames.size(); ++f) {
    const auto& pv = pred.frames[f].map.values;
    const auto& tv = truth.frames[f].map.values;
    if (mask.size() != tv.size()) throw ShapeError("compute_metrics: mask does not match the frames");
    for (std::size_t i = 0; i < tv.size(); ++i) {
      if (!mask[i]) continue;
      p.push_back(pv[i]);
      t.push_back(tv[i]);
    }
  }
  return compute_metrics(p, t);
}

MetricReport mean_report(const std::vector<MetricReport>& folds) {
  if (folds.empty()) throw InputError("mean_report: no folds");
  MetricReport m;
  m.method = folds.front().method;
  m.scope = folds.front().scope;
  m.fold = -1;
  double corr = 0.0;
  int corr_n = 0;
  for (const MetricReport& r : folds) {
    m.rmse += r.rmse;
    m.nrmse += r.nrmse;
    m.mae += r.mae;
    m.count += r.count;
    m.seconds += r.seconds;
    if (r.corr_defined) {
      corr += r.corr;
      ++corr_n;
    }
  }
  const double k = static_cast<double>(folds.size());
  m.rmse /= k;
  m.nrmse /= k;
  m.mae /= k;
  if (corr_n > 0) {
    m.corr = corr / corr_n;
    m.corr_defined = true;
  }
  return m;
}

FoldPlan FoldPlan::make(std::vector<int> days, int k, std::uint64_t seed) {
  std::sort(days.begin(), days.end());
  days.erase(std::unique(days.begin(), days.end()), days.end());
  if (k < 2) throw ConfigError("FoldPlan: need at least 2 folds");
  if (days.size() < static_cast<std::size_t>(k)) {
    throw InputError("FoldPlan: " + std::to_string(days.size()) + " distinct days cannot fill " +
                     std::to_string(k) + " folds");
  }
  std::mt19937_64 rng(seed);
  std::shuffle(days.begin(), days.end(), rng);
  FoldPlan plan;
  plan.folds.resize(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < days.size(); ++i) plan.folds[i % k].push_back(days[i]);
  for (auto& f : plan.folds) std::sort(f.begin(), f.end());
  return plan;
}

std::vector<int> FoldPlan::train_days(std::size_t fold) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < folds.size(); ++i) {
    if (i != fold) out.insert(out.end(), folds[i].begin(), folds[i].end());
  }
  std::sort(out.begin(), out.end());
  return out;
}

CvResult run_cv(const FoldRunner& runner, const FoldPlan& plan) {
  CvResult result;
  std::vector<std::string> order;
  std::map<std::string, std::vector<MetricReport>> by_method;
  for (std::size_t f = 0; f < plan.size(); ++f) {
    for (MetricReport r : runner(plan.train_days(f), plan.test_days(f), static_cast<int>(f))) {
      r.fold = static_cast<int>(f);
      const std::string key = r.method + "|" + r.scope;
      if (!by_method.count(key)) order.push_back(key);
      by_method[key].push_back(r);
      result.per_fold.push_back(std::move(r));
    }
  }
  for (const std::string& key : order) result.mean.push_back(mean_report(by_method[key]));
  return result;
}

std::string Period::label() const { return std::to_string(begin) + "-" + std::to_string(end); }

std::vector<Period> default_periods() { return {{0, 7}, {7, 17}, {17, 24}}; }

void validate_periods(const std::vector<Period>& periods) {
  std::vector<int> cover(24, 0);
  for (const Period& p : periods) {
    if (p.begin < 0 || p.end > 24 || p.begin >= p.end) {
      throw ConfigError("period " + p.label() + " is not a valid hour interval");
    }
    for (int h = p.begin; h < p.end; ++h) ++cover[h];
  }
  for (int h = 0; h < 24; ++h) {
    if (cover[h] != 1) {
      throw ConfigError("periods must cover every hour exactly once; hour " + std::to_string(h) + " is covered " +
                        std::to_string(cover[h]) + " times");
    }
  }
}

LocalityBreakdown locality_breakdown(const PopCube& pred, const PopCube& truth, const citygen::CityModel& city,
                                     const PoiGrid& pois) {
  require_aligned(pred, truth, "locality_breakdown");
  const std::size_t cells = city.mask.size();
  std::vector<double> sq(cells, 0.0);
  std::vector<std::size_t> n(cells, 0);
  for (std::size_t f = 0; f < truth.frames.size(); ++f) {
    for (std::size_t i = 0; i < cells; ++i) {
      if (!city.mask[i]) continue;
      const double d = pred.frames[f].map.values[i] - truth.frames[f].map.values[i];
      sq[i] += d * d;
      ++n[i];
    }
  }

  LocalityBreakdown out;
  const auto finish = [&](std::vector<Bin>& bins) {
    std::vector<Bin> kept;
    for (Bin& b : bins) {
      if (b.count == 0) {
        out.omitted.push_back(b.label);
        continue;
      }
      b.rmse = std::sqrt(b.sum_sq / static_cast<double>(b.count));
      kept.push_back(std::move(b));
    }
    bins = std::move(kept);
  };

  int max_d = 0;
  std::vector<int> dist(cells, 0);
  for (std::size_t i = 0; i < cells; ++i) {
    if (!city.mask[i]) continue;
    const int r = static_cast<int>(i / city.width), c = static_cast<int>(i % city.width);
    dist[i] = static_cast<int>(std::lround(std::hypot(r - city.downtown_row, c - city.downtown_col)));
    max_d = std::max(max_d, dist[i]);
  }
  out.distance.resize(static_cast<std::size_t>(max_d) + 1);
  for (int d = 0; d <= max_d; ++d) out.distance[d].label = "d=" + std::to_string(d);
  for (std::size_t i = 0; i < cells; ++i) {
    if (!city.mask[i]) continue;
    out.distance[dist[i]].count += n[i];
    out.distance[dist[i]].sum_sq += sq[i];
  }
  finish(out.distance);

  std::vector<double> total(cells, 0.0);
  std::vector<double> inside;
  for (std::size_t i = 0; i < cells; ++i) {
    for (const auto& layer : pois.counts) total[i] += layer.empty() ? 0.0 : layer[i];
    if (city.mask[i]) inside.push_back(total[i]);
  }
  std::sort(inside.begin(), inside.end());
  std::vector<double> edges;
  for (int q = 1; q < 10; ++q) edges.push_back(inside[inside.size() * q / 10]);
  out.poi.resize(10);
  for (int q = 0; q < 10; ++q) out.poi[q].label = "decile " + std::to_string(q + 1);
  for (std::size_t i = 0; i < cells; ++i) {
    if (!city.mask[i]) continue;
    const auto q = static_cast<std::size_t>(std::upper_bound(edges.begin(), edges.end(), total[i]) - edges.begin());
    out.poi[q].count += n[i];
    out.poi[q].sum_sq += sq[i];
  }
  finish(out.poi);

  out.function.resize(citygen::kFunctionClasses);
  for (std::size_t k = 0; k < citygen::kFunctionClasses; ++k) {
    out.function[k].label = std::string(citygen::function_class_name(static_cast<citygen::FunctionClass>(k)));
  }
  for (std::size_t i = 0; i < cells; ++i) {
    if (!city.mask[i]) continue;
    auto& b = out.function[static_cast<std::size_t>(city.cell_class[i])];
    b.count += n[i];
    b.sum_sq += sq[i];
  }
  finish(out.function);
  return out;
}

double recombine_rmse(const std::vector<Bin>& bins) {
  double s = 0.0, n = 0.0;
  for (const Bin& b : bins) {
    s += b.rmse * b.rmse * static_cast<double>(b.count);
    n += static_cast<double>(b.count);
  }
  return n > 0.0 ? std::sqrt(s / n) : 0.0;
}

}  // namespace popmap::eval
