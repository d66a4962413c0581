#pragma once
// Static spatial mapper: SRCNN units trained on aggregated-truth level pairs and
// stacked at inference (district -> A -> street-block -> B -> fine).

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "popmap/grid.hpp"
#include "popmap/nn.hpp"
#include "popmap/preprocess.hpp"

namespace popmap::srcnn {

/// Nested zone partitions from coarsest to finest.
struct Ladder {
  std::array<ZonePartition, 5> levels;  // district, intermediate_a, street_block, intermediate_b, fine

  const ZonePartition& at(Level level) const;
  /// Throws PartitionError unless each level contains the next.
  void validate() const;
};

/// Unit k maps ladder level k to level k+1.
inline constexpr std::array<Level, 5> kLadderOrder = {Level::district, Level::intermediate_a, Level::street_block,
                                                      Level::intermediate_b, Level::fine};

/// Inserts the two intermediate levels, each with the geometric mean of its neighbours' zone counts.
Ladder build_ladder(const ZonePartition& district, const ZonePartition& street_block, const ZonePartition& fine,
                    std::uint64_t seed);

/// Per-channel standardization.
struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> std;
};

/// Channel 0 = population, then the selected PoI rasters in category order.
preprocess::MultiChannelMap build_input(const GridMap& pop, const PoiGrid& pois, PoiSubset selected);
/// Mean/std per channel over in-boundary cells of all maps; std floored at 1e-12.
ChannelStats fit_stats(const std::vector<preprocess::MultiChannelMap>& maps);
void standardize(preprocess::MultiChannelMap& map, const ChannelStats& stats);
void destandardize(preprocess::MultiChannelMap& map, const ChannelStats& stats);

/// One training stream: maps at the unit's input and target level, both aggregated from truth.
struct PairStream {
  Level input_level;
  Level target_level;
  std::vector<GridMap> inputs;
  std::vector<GridMap> targets;
  std::vector<std::string> provenance;  // one tag per pair
};

/// Four streams, one per unit, built only from aggregated ground truth.
std::vector<PairStream> make_intermediate_targets(const PopCube& fine_truth, const Ladder& ladder);

struct Architecture {
  int filters1 = 64;
  int filters2 = 32;
  int kernel1 = 9;
  int kernel2 = 1;
  int kernel3 = 5;
  bool residual = false;  // predict target minus the input population channel
};

struct TrainConfig {
  int iterations = 2000;
  int batch = 64;
  double lr_hidden = 1e-4;  // first two layers
  double lr_output = 1e-5;  // reconstruction layer
  int patch = 16;
  int stride = 8;
  std::uint64_t seed = 1;
  double final_lr_scale = 1.0;  // cosine decay of both rates down to this fraction; 1 = constant
  double frozen_bn_share = 0.0;  // last share of iterations trained with batch norm fixed at calibrated stats
};

struct TrainReport {
  std::vector<double> loss_trace;
  std::size_t patches = 0;
  double seconds = 0.0;
};

class SrcnnUnit {
 public:
  SrcnnUnit() = default;
  SrcnnUnit(const Architecture& arch, PoiSubset pois, Level input_level, Level target_level, std::uint64_t seed);

  std::size_t in_channels() const { return 1 + pois_.size(); }
  bool trained() const { return trained_; }
  Level input_level() const { return input_level_; }
  Level target_level() const { return target_level_; }
  PoiSubset pois() const { return pois_; }
  const Architecture& architecture() const { return arch_; }

  /// Standardized [N,C,H,W] -> standardized [N,1,H,W].
  nd::Tensor forward(const nd::Tensor& x, bool train);

  TrainReport train(const PairStream& stream, const PoiGrid& pois, const TrainConfig& config);

  /// Full-map inference; output clamped at 0 and masked. Throws StateError when untrained.
  GridMap apply(const GridMap& coarse, const PoiGrid& pois) const;
  std::vector<GridMap> apply(const std::vector<GridMap>& coarse, const PoiGrid& pois) const;

  std::vector<nd::NamedTensor> tensors() const;
  void save(const std::filesystem::path& checkpoint) const;
  void load(const std::filesystem::path& checkpoint);

  ChannelStats input_stats;
  double target_mean = 0.0;
  double target_std = 1.0;
  TrainConfig train_config;

 private:
  std::vector<nd::Adam::Group> parameter_groups(const TrainConfig& config) const;
  nd::Tensor eval_forward(const nd::Tensor& x) const;

  Architecture arch_;
  PoiSubset pois_;
  Level input_level_ = Level::district;
  Level target_level_ = Level::fine;
  nd::BatchNorm2d bn1_, bn2_, bn3_;
  nd::Conv2d conv1_, conv2_, conv3_;
  bool trained_ = false;
};

struct StackConfig {
  Architecture arch;
  TrainConfig stage1;  // units district -> A -> street-block
  TrainConfig stage2;  // units street-block -> B -> fine
  PoiSubset pois = PoiSubset::all();
  std::uint64_t seed = 1;

  static StackConfig desk();
  static StackConfig paper_scale();
};

class StackedMapper {
 public:
  std::array<SrcnnUnit, 4> units;
  PoiSubset pois;
  std::uint64_t seed = 0;

  bool trained() const;
  /// Runs units from the one accepting `coarse.level` up to `target`.
  GridMap map_level(const GridMap& coarse, const PoiGrid& pois, Level target = Level::fine) const;
  PopCube map_cube(const PopCube& coarse, const PoiGrid& pois, Level target = Level::fine) const;

  void save(const std::filesystem::path& dir) const;
  static StackedMapper load(const std::filesystem::path& dir);
};

struct StackReport {
  std::array<TrainReport, 4> units;
};

/// Trains the four units independently on the training frames of `fine_truth`.
StackedMapper train_stacked(const PopCube& fine_truth, const Ladder& ladder, const PoiGrid& pois,
                            const StackConfig& config, StackReport* report = nullptr);

}  // namespace popmap::srcnn
