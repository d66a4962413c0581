#pragma once
// Error metrics, day-based folds, periods and locality breakdowns.

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "popmap/citygen.hpp"
#include "popmap/grid.hpp"

namespace popmap::eval {

struct MetricReport {
  std::string method;
  std::string scope;  // e.g. "district->fine", "period 7-17", "pois {1,4}"
  int fold = -1;      // -1 = mean over folds
  double rmse = 0.0;
  double nrmse = 0.0;
  double corr = std::numeric_limits<double>::quiet_NaN();
  bool corr_defined = false;  // false when truth or prediction is constant
  double mae = 0.0;
  std::size_t count = 0;
  double seconds = 0.0;
};

/// Metrics over paired values.
MetricReport compute_metrics(std::span<const double> pred, std::span<const double> truth);
/// Metrics over masked cells of every frame. Throws InputError on misaligned cubes.
MetricReport compute_metrics(const PopCube& pred, const PopCube& truth, const Mask& mask);

/// Arithmetic mean of per-fold reports (corr averaged over folds where defined).
MetricReport mean_report(const std::vector<MetricReport>& folds);

/// Days dealt round-robin into k folds after a seeded shuffle.
struct FoldPlan {
  std::vector<std::vector<int>> folds;

  static FoldPlan make(std::vector<int> days, int k, std::uint64_t seed);
  std::size_t size() const { return folds.size(); }
  std::vector<int> test_days(std::size_t fold) const { return folds.at(fold); }
  std::vector<int> train_days(std::size_t fold) const;
};

/// One training/evaluation run on a fold: returns a report per method.
using FoldRunner = std::function<std::vector<MetricReport>(const std::vector<int>& train_days,
                                                           const std::vector<int>& test_days, int fold)>;

struct CvResult {
  std::vector<MetricReport> per_fold;
  std::vector<MetricReport> mean;  // one per method, in first-seen order
};

/// Runs every fold and averages per method. Throws InputError with fewer days than folds.
CvResult run_cv(const FoldRunner& runner, const FoldPlan& plan);

/// Hour interval [begin, end).
struct Period {
  int begin = 0;
  int end = 24;
  std::string label() const;
};

/// 0-7, 7-17, 17-24.
std::vector<Period> default_periods();
/// Throws ConfigError unless the periods cover 0..24 exactly once.
void validate_periods(const std::vector<Period>& periods);

struct Bin {
  std::string label;
  std::size_t count = 0;
  double sum_sq = 0.0;
  double rmse = 0.0;
};

struct LocalityBreakdown {
  std::vector<Bin> distance;  // integer grid distance to downtown
  std::vector<Bin> poi;       // PoI-count deciles
  std::vector<Bin> function;  // generator function class
  std::vector<std::string> omitted;  // empty bins, by label
};

/// Squared errors binned by cell attributes; every masked (cell, frame) pair lands in exactly one bin per curve.
LocalityBreakdown locality_breakdown(const PopCube& pred, const PopCube& truth, const citygen::CityModel& city,
                                     const PoiGrid& pois);

/// Global RMSE from bins: sqrt(sum sum_sq / sum count).
double recombine_rmse(const std::vector<Bin>& bins);

}  // namespace popmap::eval
