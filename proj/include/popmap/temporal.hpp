#pragma once
// Temporal smoothing: one shared LSTM reads a cell's 24 static-mapper values
// (zero where unknown) together with an hour-of-day embedding and emits the
// smoothed 24-hour series.

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "popmap/grid.hpp"
#include "popmap/nn.hpp"

namespace popmap::temporal {

inline constexpr int kHours = 24;

/// 24 x E lookup table stored as a bias-free linear layer over one-hot hours.
class TimeEmbedding {
 public:
  TimeEmbedding() = default;
  TimeEmbedding(std::size_t width, nd::Rng& rng);

  /// Throws InputError outside 0..23.
  static nd::Tensor one_hot(int hour);
  /// [E]; row `hour` of the table, differentiable into it.
  nd::Tensor embed(int hour) const;
  /// [B,E] with the same hour in every row.
  nd::Tensor embed_batch(int hour, std::size_t batch) const;
  std::size_t width() const { return table.weight.dim(0); }

  nd::Linear table;  // weight [E,24]
};

struct RegionSeries {
  std::size_t cell = 0;
  int day = 0;
  std::array<double, kHours> values{};
  std::array<std::uint8_t, kHours> known{};  // 0 = unknown, fed as 0

  static RegionSeries full(std::size_t cell, int day, const std::array<double, kHours>& values);
};

struct TemporalConfig {
  int embedding = 8;
  int hidden = 64;
  bool time_embedding = true;  // false = flat LSTM ablation
  int iterations = 1500;
  int batch = 64;
  double lr = 3e-3;
  double scale_floor = 0.1;  // series scale >= this fraction of the mean training series level
  double loss_weight_power = 2.0;  // per-series loss weight = (scale / mean scale)^power
  double mask_rate = 0.0;          // training-time share of input steps hidden (fed as 0)
  std::uint64_t seed = 1;
};

struct TemporalReport {
  std::vector<double> loss_trace;
  std::size_t series = 0;
  double seconds = 0.0;
};

class TemporalModel {
 public:
  TemporalModel() = default;
  explicit TemporalModel(const TemporalConfig& config);

  const TemporalConfig& config() const { return config_; }
  bool trained() const { return trained_; }
  std::size_t parameter_count() const;

  /// Scaled inputs [B,24] and known flags [B,24] -> scaled predictions [B,24].
  nd::Tensor forward(const nd::Tensor& values, const std::vector<std::uint8_t>& known) const;

  TemporalReport train(const std::vector<RegionSeries>& inputs, const std::vector<RegionSeries>& targets);

  /// Non-negative smoothed series. Throws StateError when untrained.
  std::array<double, kHours> smooth_series(const RegionSeries& series) const;
  std::vector<std::array<double, kHours>> smooth(const std::vector<RegionSeries>& series) const;

  std::vector<nd::NamedTensor> tensors() const;
  void save(const std::filesystem::path& dir) const;
  static TemporalModel load(const std::filesystem::path& dir);

 private:
  TemporalConfig config_;
  TimeEmbedding embedding_;
  nd::LstmCell cell_;
  nd::Linear head_;
  double scale_floor_ = 0.0;
  bool trained_ = false;
};

/// One series per in-boundary cell per whole day. Throws InputError unless every
/// day holds hours 0..23 in order.
std::vector<RegionSeries> extract_series(const PopCube& cube);

/// Trains on static-mapper series against ground-truth series. Throws InputError on misaligned cubes.
TemporalModel train_temporal(const PopCube& static_outputs, const PopCube& truth, const TemporalConfig& config,
                             TemporalReport* report = nullptr);

/// Same shape as the input; out-of-boundary cells stay 0.
PopCube smooth_cube(const PopCube& static_cube, const TemporalModel& model);

}  // namespace popmap::temporal
