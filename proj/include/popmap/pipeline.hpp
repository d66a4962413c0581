#pragma once
// Experiment configs, run directories and the staged pipeline behind the CLI.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "popmap/baselines.hpp"
#include "popmap/citygen.hpp"
#include "popmap/metrics.hpp"
#include "popmap/srcnn.hpp"
#include "popmap/temporal.hpp"

namespace popmap::pipeline {

inline constexpr std::string_view kVersion = "0.3.0";

enum class Stage { preprocess, train_spatial, train_temporal, baselines, eval };
inline constexpr std::array<Stage, 5> kStageOrder = {Stage::preprocess, Stage::train_spatial, Stage::train_temporal,
                                                     Stage::baselines, Stage::eval};

std::string_view stage_name(Stage s);  // "train-spatial", ...
Stage parse_stage(std::string_view name);
/// "all" or a comma list; returned in execution order without duplicates.
std::vector<Stage> parse_stages(std::string_view list);

struct ExperimentConfig {
  std::string preset = "desk";
  std::uint64_t seed = 1;  // propagated to every module
  citygen::CityConfig city;
  srcnn::StackConfig spatial;
  temporal::TemporalConfig temporal;
  baselines::Hyper baseline;
  std::vector<baselines::Method> methods = {baselines::Method::lasso, baselines::Method::tree,
                                            baselines::Method::forest, baselines::Method::mlp};
  int folds = 5;
  std::vector<PoiSubset> poi_ablation = {PoiSubset::none()};  // trained on fold 0 besides the main subset
  std::vector<eval::Period> periods = eval::default_periods();
  bool segmented = true;
  std::array<double, 24> activation{};  // share of devices active per hour, for the record simulation

  static ExperimentConfig desk();
  /// 83x114 grid, 1e5 iterations, batch 512. Planned, not run, unless forced.
  static ExperimentConfig paper_scale();
  static ExperimentConfig from_preset(std::string_view name);

  /// Copies `seed` into the module configs and validates ranges. Throws ConfigError.
  void finalize();
};

nlohmann::json to_json(const ExperimentConfig& c);
/// Starts from the preset named in `j` (default desk) and overrides the given keys.
/// Throws ConfigError on unknown keys or bad values.
ExperimentConfig config_from_json(const nlohmann::json& j);
/// FNV-1a over the canonical JSON dump.
std::string config_hash(const ExperimentConfig& c);

/// Worker cap from POPMAP_THREADS; 1 when unset. Throws ConfigError on junk.
int env_threads();

/// Run directory manifest: config hash, per-stage status, wall time and artifact checksums.
class Manifest {
 public:
  static Manifest load_or_new(const std::filesystem::path& dir);
  void save() const;  // atomic

  const std::filesystem::path& dir() const { return dir_; }
  nlohmann::json& data() { return data_; }
  const nlohmann::json& data() const { return data_; }

  bool done(std::string_view stage, const std::string& hash) const;
  /// Records status, wall time and checksums of `artifacts` (paths relative to the run directory).
  void complete(std::string_view stage, const std::string& hash, double seconds,
                const std::vector<std::string>& artifacts);
  void set_status(std::string_view stage, std::string_view status);
  /// True when every recorded artifact still matches its checksum.
  bool verify(std::string_view stage) const;

 private:
  std::filesystem::path dir_;
  nlohmann::json data_;
};

/// Exclusive ownership of a run directory via `run.lock`. Throws StageError when held.
class RunLock {
 public:
  explicit RunLock(const std::filesystem::path& dir);
  ~RunLock();
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  std::filesystem::path path_;
};

struct RunOptions {
  bool force = false;
  int threads = 1;
  std::function<void(const std::string&)> log;  // progress lines; may be empty
};

struct StageOutcome {
  std::string stage;
  std::string status;  // "done", "skipped", "planned"
  double seconds = 0.0;
};

/// Writes city.json, truth.pcb and the manifest. Skipped when already done for this config.
StageOutcome run_gen(const ExperimentConfig& config, const std::filesystem::path& out, const RunOptions& opt);

/// Runs gen if needed, then the requested stages in order. The paper-scale preset only
/// records its plan unless forced. Throws StageError naming the missing stage.
std::vector<StageOutcome> run_pipeline(const ExperimentConfig& config, const std::filesystem::path& out,
                                       const std::vector<Stage>& stages, const RunOptions& opt);

/// Text tables from the metric CSVs of a finished run.
std::string render_report(const std::filesystem::path& out);

/// Files written by export.
std::vector<std::filesystem::path> export_cube(const std::filesystem::path& cube, std::string_view format,
                                               const std::filesystem::path& dir);

/// Mean over (cell, day) of predicted diurnal range / true diurnal range, for cells of one function class.
double range_ratio(const PopCube& pred, const PopCube& truth, const citygen::CityModel& city,
                   citygen::FunctionClass cls);

}  // namespace popmap::pipeline
