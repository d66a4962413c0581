#include "popmap/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include <signal.h>
#include <unistd.h>

#include "popmap/error.hpp"
#include "popmap/io.hpp"
#include "popmap/preprocess.hpp"

namespace popmap::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------- stages

std::string_view stage_name(Stage s) {
  switch (s) {
    case Stage::preprocess:
      return "preprocess";
    case Stage::train_spatial:
      return "train-spatial";
    case Stage::train_temporal:
      return "train-temporal";
    case Stage::baselines:
      return "baselines";
    case Stage::eval:
      return "eval";
  }
  return "?";
}

Stage parse_stage(std::string_view name) {
  for (Stage s : kStageOrder) {
    if (stage_name(s) == name) return s;
  }
  throw ConfigError("unknown stage '" + std::string(name) +
                    "' (expected preprocess, train-spatial, train-temporal, baselines, eval)");
}

std::vector<Stage> parse_stages(std::string_view list) {
  if (list == "all" || list.empty()) return {kStageOrder.begin(), kStageOrder.end()};
  std::set<int> picked;
  std::size_t pos = 0;
  while (pos <= list.size()) {
    const std::size_t comma = std::min(list.find(',', pos), list.size());
    std::string_view item = list.substr(pos, comma - pos);
    while (!item.empty() && item.front() == ' ') item.remove_prefix(1);
    while (!item.empty() && item.back() == ' ') item.remove_suffix(1);
    if (!item.empty()) picked.insert(static_cast<int>(parse_stage(item)));
    pos = comma + 1;
  }
  if (picked.empty()) throw ConfigError("no stages selected");
  std::vector<Stage> out;
  for (Stage s : kStageOrder) {
    if (picked.count(static_cast<int>(s))) out.push_back(s);
  }
  return out;
}

// ---------------------------------------------------------------- config

namespace {

std::array<double, 24> default_activation() {
  // fewer handsets register overnight
  std::array<double, 24> a{};
  for (int h = 0; h < 24; ++h) a[static_cast<std::size_t>(h)] = 0.8 + 0.15 * std::cos(2.0 * 3.14159265358979 * (h - 14) / 24.0);
  return a;
}

}  // namespace

ExperimentConfig ExperimentConfig::desk() {
  ExperimentConfig c;
  c.preset = "desk";
  c.city = citygen::CityConfig::desk();
  c.spatial = srcnn::StackConfig::desk();
  c.temporal.iterations = 1000;
  c.activation = default_activation();
  c.finalize();
  return c;
}

ExperimentConfig ExperimentConfig::paper_scale() {
  ExperimentConfig c;
  c.preset = "paper-scale";
  c.city = citygen::CityConfig::desk();
  c.city.grid_h = 83;
  c.city.grid_w = 114;
  c.city.n_stations = 1500;
  c.city.n_pois = 150000;
  c.city.n_districts = 15;
  c.city.n_street_blocks = 200;
  c.city.days = 30;
  c.spatial = srcnn::StackConfig::paper_scale();
  c.temporal.iterations = 100000;
  c.temporal.batch = 512;
  c.activation = default_activation();
  c.finalize();
  return c;
}

ExperimentConfig ExperimentConfig::from_preset(std::string_view name) {
  if (name == "desk") return desk();
  if (name == "paper-scale") return paper_scale();
  throw ConfigError("unknown preset '" + std::string(name) + "' (expected desk or paper-scale)");
}

void ExperimentConfig::finalize() {
  city.seed = seed;
  spatial.seed = seed;
  temporal.seed = seed;
  baseline.seed = seed;
  city.validate();
  if (folds < 2 || folds > city.days) throw ConfigError("folds must lie in [2, days]");
  eval::validate_periods(periods);
  for (double a : activation) {
    if (!(a > 0.0 && a <= 1.0)) throw ConfigError("activation shares must lie in (0, 1]");
  }
  if (methods.empty()) throw ConfigError("at least one baseline method is required");
  std::set<int> seen;
  for (auto m : methods) {
    if (!seen.insert(static_cast<int>(m)).second) throw ConfigError("duplicate baseline method");
  }
  for (PoiSubset s : poi_ablation) {
    if (s.bits > 0x0F) throw ConfigError("bad PoI subset in ablation list");
  }
  if (baseline.threads < 1) throw ConfigError("threads must be positive");
}

namespace {

json arch_json(const srcnn::Architecture& a) {
  return {{"filters1", a.filters1}, {"filters2", a.filters2}, {"kernel1", a.kernel1},
          {"kernel2", a.kernel2},   {"kernel3", a.kernel3},   {"residual", a.residual}};
}

json train_json(const srcnn::TrainConfig& t) {
  return {{"iterations", t.iterations}, {"batch", t.batch},   {"lr_hidden", t.lr_hidden},
          {"lr_output", t.lr_output},   {"patch", t.patch},   {"stride", t.stride},
          {"final_lr_scale", t.final_lr_scale}, {"frozen_bn_share", t.frozen_bn_share}};
}

json temporal_json(const temporal::TemporalConfig& t) {
  return {{"embedding", t.embedding},   {"hidden", t.hidden},         {"time_embedding", t.time_embedding},
          {"iterations", t.iterations}, {"batch", t.batch},           {"lr", t.lr},
          {"scale_floor", t.scale_floor}, {"loss_weight_power", t.loss_weight_power}, {"mask_rate", t.mask_rate}};
}

json baseline_json(const baselines::Hyper& h, const std::vector<baselines::Method>& methods) {
  json m = json::array();
  for (auto x : methods) m.push_back(baselines::method_name(x));
  return {{"methods", m},
          {"lasso_lambda", h.lasso_lambda},
          {"lasso_sweeps", h.lasso_sweeps},
          {"tree_max_depth", h.tree_max_depth},
          {"tree_min_leaf", h.tree_min_leaf},
          {"forest_trees", h.forest_trees},
          {"forest_min_leaf", h.forest_min_leaf},
          {"forest_max_depth", h.forest_max_depth},
          {"forest_bootstrap_cap", h.forest_bootstrap_cap},
          {"mlp_hidden", h.mlp_hidden},
          {"mlp_iterations", h.mlp_iterations},
          {"mlp_batch", h.mlp_batch},
          {"mlp_lr", h.mlp_lr}};
}

std::string poi_tag(PoiSubset s) {
  if (s.bits == 0) return "none";
  std::string out;
  for (PoiCategory c : s.categories()) {
    if (!out.empty()) out += '+';
    out += std::to_string(static_cast<int>(c) + 1);
  }
  return out;
}

PoiSubset parse_poi_tag(const std::string& tag) {
  if (tag == "none" || tag == "{}") return PoiSubset::none();
  std::string sig = tag;
  std::replace(sig.begin(), sig.end(), '+', ',');
  return PoiSubset::parse(sig);
}

void check_keys(const json& given, const json& known, const std::string& where) {
  if (!given.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, value] : given.items()) {
    if (!known.contains(key)) throw ConfigError("unknown config key '" + where + key + "'");
    if (value.is_object() && known.at(key).is_object() && key != "city") {
      check_keys(value, known.at(key), where + key + ".");
    }
  }
}

}  // namespace

json to_json(const ExperimentConfig& c) {
  json ablation = json::array(), periods = json::array();
  for (PoiSubset s : c.poi_ablation) ablation.push_back(poi_tag(s));
  for (const auto& p : c.periods) periods.push_back({p.begin, p.end});
  json city = io::city_config_to_json(c.city);
  city.erase("seed");
  return {{"preset", c.preset},
          {"seed", c.seed},
          {"folds", c.folds},
          {"poi_ablation", ablation},
          {"periods", periods},
          {"segmented", c.segmented},
          {"activation", c.activation},
          {"city", city},
          {"spatial",
           {{"arch", arch_json(c.spatial.arch)},
            {"stage1", train_json(c.spatial.stage1)},
            {"stage2", train_json(c.spatial.stage2)},
            {"pois", poi_tag(c.spatial.pois)}}},
          {"temporal", temporal_json(c.temporal)},
          {"baselines", baseline_json(c.baseline, c.methods)}};
}

ExperimentConfig config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
  const std::string preset = j.value("preset", std::string("desk"));
  ExperimentConfig c = ExperimentConfig::from_preset(preset);
  json d = to_json(c);
  check_keys(j, d, "");
  d.merge_patch(j);
  try {
    c.seed = d.at("seed").get<std::uint64_t>();
    c.folds = d.at("folds").get<int>();
    c.segmented = d.at("segmented").get<bool>();
    c.activation = d.at("activation").get<std::array<double, 24>>();
    c.poi_ablation.clear();
    for (const auto& s : d.at("poi_ablation")) c.poi_ablation.push_back(parse_poi_tag(s.get<std::string>()));
    c.periods.clear();
    for (const auto& p : d.at("periods")) c.periods.push_back({p.at(0).get<int>(), p.at(1).get<int>()});
    c.city = io::city_config_from_json(d.at("city"), c.city);

    const json& sp = d.at("spatial");
    const json& a = sp.at("arch");
    c.spatial.arch = {a.at("filters1"), a.at("filters2"), a.at("kernel1"), a.at("kernel2"), a.at("kernel3"),
                      a.at("residual")};
    for (auto [key, dst] : {std::pair{"stage1", &c.spatial.stage1}, std::pair{"stage2", &c.spatial.stage2}}) {
      const json& t = sp.at(key);
      dst->iterations = t.at("iterations");
      dst->batch = t.at("batch");
      dst->lr_hidden = t.at("lr_hidden");
      dst->lr_output = t.at("lr_output");
      dst->patch = t.at("patch");
      dst->stride = t.at("stride");
      dst->final_lr_scale = t.at("final_lr_scale");
      dst->frozen_bn_share = t.at("frozen_bn_share");
    }
    c.spatial.pois = parse_poi_tag(sp.at("pois").get<std::string>());

    const json& t = d.at("temporal");
    c.temporal.embedding = t.at("embedding");
    c.temporal.hidden = t.at("hidden");
    c.temporal.time_embedding = t.at("time_embedding");
    c.temporal.iterations = t.at("iterations");
    c.temporal.batch = t.at("batch");
    c.temporal.lr = t.at("lr");
    c.temporal.scale_floor = t.at("scale_floor");
    c.temporal.loss_weight_power = t.at("loss_weight_power");
    c.temporal.mask_rate = t.at("mask_rate");

    const json& b = d.at("baselines");
    c.methods.clear();
    for (const auto& m : b.at("methods")) c.methods.push_back(baselines::parse_method(m.get<std::string>()));
    c.baseline.lasso_lambda = b.at("lasso_lambda");
    c.baseline.lasso_sweeps = b.at("lasso_sweeps");
    c.baseline.tree_max_depth = b.at("tree_max_depth");
    c.baseline.tree_min_leaf = b.at("tree_min_leaf");
    c.baseline.forest_trees = b.at("forest_trees");
    c.baseline.forest_min_leaf = b.at("forest_min_leaf");
    c.baseline.forest_max_depth = b.at("forest_max_depth");
    c.baseline.forest_bootstrap_cap = b.at("forest_bootstrap_cap");
    c.baseline.mlp_hidden = b.at("mlp_hidden");
    c.baseline.mlp_iterations = b.at("mlp_iterations");
    c.baseline.mlp_batch = b.at("mlp_batch");
    c.baseline.mlp_lr = b.at("mlp_lr");
  } catch (const json::exception& e) {
    throw ConfigError("bad experiment config: " + std::string(e.what()));
  } catch (const InputError& e) {
    throw ConfigError(e.what());
  }
  c.finalize();
  return c;
}

std::string config_hash(const ExperimentConfig& c) {
  const std::string s = to_json(c).dump();
  return io::hex64(io::fnv1a(s.data(), s.size()));
}

int env_threads() {
  const char* v = std::getenv("POPMAP_THREADS");
  if (!v || !*v) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1 || n > 1024) throw ConfigError("POPMAP_THREADS must be a positive integer");
  return static_cast<int>(n);
}

// ---------------------------------------------------------------- manifest and lock

Manifest Manifest::load_or_new(const fs::path& dir) {
  Manifest m;
  m.dir_ = dir;
  const fs::path p = dir / "manifest.json";
  if (fs::exists(p)) {
    try {
      m.data_ = json::parse(io::read_text(p));
    } catch (const json::exception& e) {
      throw InputError("corrupt manifest " + p.string() + ": " + e.what());
    }
  } else {
    m.data_ = {{"library_version", kVersion}, {"stages", json::object()}};
  }
  return m;
}

void Manifest::save() const {
  fs::create_directories(dir_);
  io::write_text_atomic(dir_ / "manifest.json", data_.dump(2) + "\n");
}

bool Manifest::done(std::string_view stage, const std::string& hash) const {
  const json& st = data_.at("stages");
  const std::string key(stage);
  if (!st.contains(key)) return false;
  const json& s = st.at(key);
  return s.value("status", "") == "done" && s.value("config_hash", "") == hash && verify(stage);
}

void Manifest::complete(std::string_view stage, const std::string& hash, double seconds,
                        const std::vector<std::string>& artifacts) {
  json sums = json::object();
  for (const auto& a : artifacts) sums[a] = io::hex64(io::fnv1a_file(dir_ / a));
  json& s = data_["stages"][std::string(stage)];
  s["status"] = "done";
  s["config_hash"] = hash;
  s["wall_s"] = seconds;
  s["artifacts"] = sums;
}

void Manifest::set_status(std::string_view stage, std::string_view status) {
  data_["stages"][std::string(stage)]["status"] = status;
}

bool Manifest::verify(std::string_view stage) const {
  const json& s = data_.at("stages").at(std::string(stage));
  if (!s.contains("artifacts")) return false;
  for (const auto& [rel, sum] : s.at("artifacts").items()) {
    const fs::path p = dir_ / rel;
    if (!fs::exists(p) || io::hex64(io::fnv1a_file(p)) != sum.get<std::string>()) return false;
  }
  return true;
}

namespace {

/// Lock file left by a process that no longer exists.
bool owner_gone(const fs::path& lock) {
  long pid = 0;
  if (std::FILE* f = std::fopen(lock.c_str(), "r")) {
    if (std::fscanf(f, "%ld", &pid) != 1) pid = 0;
    std::fclose(f);
  }
  if (pid <= 0) return false;
  return ::kill(static_cast<pid_t>(pid), 0) != 0 && errno == ESRCH;
}

}  // namespace

RunLock::RunLock(const fs::path& dir) : path_(dir / "run.lock") {
  fs::create_directories(dir);
  std::FILE* f = std::fopen(path_.c_str(), "wx");
  if (!f && owner_gone(path_)) {
    std::error_code ec;
    fs::remove(path_, ec);
    f = std::fopen(path_.c_str(), "wx");
  }
  if (!f) {
    throw StageError("run directory " + dir.string() + " is locked (" + path_.string() +
                     " exists); remove it if no other popmap process owns the directory");
  }
  std::fprintf(f, "%ld\n", static_cast<long>(::getpid()));
  std::fclose(f);
}

RunLock::~RunLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

// ---------------------------------------------------------------- run context

namespace {

double now_s() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

constexpr const char* kCity = "city.json";
constexpr const char* kTruth = "truth.pcb";
constexpr const char* kCoarse = "preprocess/coarse.pcb";
constexpr const char* kLevelPair = "district->fine";

std::string fold_cube(const std::string& name, int fold) { return "pred/" + name + "_f" + std::to_string(fold) + ".pcb"; }

std::string period_tag(const eval::Period& p) { return std::to_string(p.begin) + "_" + std::to_string(p.end); }

/// Files under `rel` (file or directory), relative to the run directory, sorted.
std::vector<std::string> list_files(const fs::path& root, const std::string& rel) {
  std::vector<std::string> out;
  const fs::path p = root / rel;
  if (fs::is_regular_file(p)) {
    out.push_back(rel);
  } else if (fs::is_directory(p)) {
    for (const auto& e : fs::recursive_directory_iterator(p)) {
      if (e.is_regular_file()) out.push_back(fs::relative(e.path(), root).generic_string());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

struct Context {
  const ExperimentConfig& config;
  fs::path dir;
  std::string hash;
  const RunOptions& opt;
  Manifest manifest;

  citygen::CityModel city{};
  PopCube truth{};
  PoiGrid pois{};
  bool loaded = false;
  std::vector<std::string> artifacts{};
  json timings = json::object();

  void log(const std::string& line) const {
    if (opt.log) opt.log(line);
  }

  void load_world() {
    if (loaded) return;
    city = io::city_from_json(json::parse(io::read_text(dir / kCity)));
    truth = io::read_cube(dir / kTruth, city.mask);
    pois = citygen::grid_pois(city);
    loaded = true;
  }

  PopCube cube(const std::string& rel) const { return io::read_cube(dir / rel, city.mask); }

  void write(const std::string& rel, const PopCube& c) {
    io::write_cube(dir / rel, c);
    artifacts.push_back(rel);
    artifacts.push_back(rel + ".json");
  }

  void write_text(const std::string& rel, const std::string& text) {
    io::write_text(dir / rel, text);
    artifacts.push_back(rel);
  }

  void save_mapper(const std::string& rel, const srcnn::StackedMapper& m) {
    fs::remove_all(dir / rel);
    m.save(dir / rel);
    for (auto& f : list_files(dir, rel)) artifacts.push_back(f);
  }

  eval::FoldPlan plan() const { return eval::FoldPlan::make(truth.days(), config.folds, config.seed); }

  bool stage_done(Stage s) const { return manifest.done(stage_name(s), hash); }

  void require(Stage s) const {
    if (!stage_done(s)) {
      throw StageError(std::string(stage_name(s)) + " artifacts missing in " + dir.string() +
                       "; run `popmap pipeline --stages " + std::string(stage_name(s)) + "` first");
    }
  }
};

// ---------------------------------------------------------------- stages

void stage_preprocess(Context& cx) {
  cx.load_world();
  const auto& city = cx.city;
  const StationSeries records = citygen::simulate_device_records(cx.truth, city, cx.config.activation, cx.config.seed);
  const StationSeries hourly = preprocess::hourly_average(records, 1);
  const preprocess::Correction corr = preprocess::activation_correct(hourly);
  const auto weights = preprocess::voronoi_weights(city.stations, city.height, city.width, city.mask);
  const PopCube raster = preprocess::rasterize_series(corr, weights, city.mask);
  const PopCube coarse = preprocess::aggregate(cx.truth, city.district);

  double slot_spread = 0.0, raster_err = 0.0, zone_err = 0.0, weight_err = 0.0;
  for (std::size_t t = 0; t < corr.series.slots; ++t) {
    if (!corr.valid(t)) continue;
    slot_spread = std::max(slot_spread, std::abs(corr.series.slot_total(t) / corr.reference_total - 1.0));
  }
  for (std::size_t s = 0; s < weights.stations(); ++s) weight_err = std::max(weight_err, std::abs(weights.row_sum(s) - 1.0));
  std::size_t k = 0;
  for (std::size_t t = 0; t < corr.series.slots; ++t) {
    if (!corr.valid(t)) continue;
    const double total = corr.series.slot_total(t);
    raster_err = std::max(raster_err, std::abs(raster.frames[k++].map.total() - total) / total);
  }
  const auto sizes = city.district.zone_sizes();
  for (std::size_t t = 0; t < coarse.frames.size(); ++t) {
    std::vector<double> a(sizes.size(), 0.0), b(sizes.size(), 0.0);
    for (std::size_t i = 0; i < city.mask.size(); ++i) {
      const int z = city.district.labels[i];
      if (z < 0) continue;
      a[static_cast<std::size_t>(z)] += coarse.frames[t].map.values[i];
      b[static_cast<std::size_t>(z)] += cx.truth.frames[t].map.values[i];
    }
    for (std::size_t z = 0; z < a.size(); ++z) zone_err = std::max(zone_err, std::abs(a[z] - b[z]) / b[z]);
  }
  const json quality = {{"excluded_slots", corr.log.excluded_slots},
                        {"messages", corr.log.messages},
                        {"stations", weights.stations()},
                        {"corrected_total_rel_spread", slot_spread},
                        {"voronoi_row_sum_abs_err", weight_err},
                        {"raster_total_rel_err", raster_err},
                        {"district_zone_total_rel_err", zone_err}};
  cx.write(kCoarse, coarse);
  cx.write("preprocess/rasterized.pcb", raster);
  cx.write_text("preprocess/quality.json", quality.dump(2) + "\n");
  cx.log("preprocess: " + std::to_string(raster.frames.size()) + " frames rasterized, " +
         std::to_string(corr.log.excluded_slots.size()) + " slots excluded");
}

void stage_train_spatial(Context& cx) {
  cx.load_world();
  const ExperimentConfig& cfg = cx.config;
  const PopCube coarse = cx.cube(kCoarse);
  const auto ladder = srcnn::build_ladder(cx.city.district, cx.city.street_block, cx.city.fine, cfg.seed);
  const auto plan = cx.plan();

  auto train = [&](const std::string& name, const PopCube& truth_train, const PopCube& coarse_test,
                   srcnn::StackConfig sc) {
    const double t0 = now_s();
    const auto mapper = srcnn::train_stacked(truth_train, ladder, cx.pois, sc);
    cx.timings[name] = now_s() - t0;
    cx.log("train-spatial: " + name + " " + std::to_string(now_s() - t0) + " s");
    return std::pair{mapper, mapper.map_cube(coarse_test, cx.pois)};
  };

  for (int f = 0; f < cfg.folds; ++f) {
    const auto tr = plan.train_days(static_cast<std::size_t>(f)), te = plan.test_days(static_cast<std::size_t>(f));
    const PopCube truth_train = cx.truth.select_days(tr);
    auto [mapper, pred] = train("static/f" + std::to_string(f), truth_train, coarse.select_days(te), cfg.spatial);
    cx.save_mapper("spatial/fold" + std::to_string(f), mapper);
    cx.write(fold_cube("static", f), pred);
    if (f == 0) cx.write("pred/static_train_f0.pcb", mapper.map_cube(coarse.select_days(tr), cx.pois));
  }

  const auto tr0 = plan.train_days(0), te0 = plan.test_days(0);
  const PopCube truth_train0 = cx.truth.select_days(tr0);
  const PopCube coarse_test0 = coarse.select_days(te0);
  for (PoiSubset s : cfg.poi_ablation) {
    if (s == cfg.spatial.pois) continue;
    srcnn::StackConfig sc = cfg.spatial;
    sc.pois = s;
    auto [mapper, pred] = train("poi_" + poi_tag(s) + "/f0", truth_train0, coarse_test0, sc);
    cx.save_mapper("spatial/poi_" + poi_tag(s), mapper);
    cx.write(fold_cube("poi_" + poi_tag(s), 0), pred);
  }
  if (cfg.segmented) {
    for (const auto& p : cfg.periods) {
      auto [mapper, pred] = train("period_" + period_tag(p) + "/f0", truth_train0.select_hours(p.begin, p.end),
                                  coarse_test0.select_hours(p.begin, p.end), cfg.spatial);
      cx.save_mapper("spatial/period_" + period_tag(p), mapper);
      cx.write(fold_cube("period_" + period_tag(p), 0), pred);
    }
  }
}

void stage_train_temporal(Context& cx) {
  cx.load_world();
  const auto plan = cx.plan();
  const PopCube truth_train = cx.truth.select_days(plan.train_days(0));
  const PopCube static_train = cx.cube("pred/static_train_f0.pcb");
  const PopCube static_test = cx.cube(fold_cube("static", 0));
  for (bool emb : {true, false}) {
    temporal::TemporalConfig tc = cx.config.temporal;
    tc.time_embedding = emb;
    const std::string name = emb ? "lstm_emb" : "lstm_flat";
    const double t0 = now_s();
    const auto model = temporal::train_temporal(static_train, truth_train, tc);
    cx.timings[name + "/f0"] = now_s() - t0;
    cx.log("train-temporal: " + name + " " + std::to_string(now_s() - t0) + " s");
    const std::string rel = std::string("temporal/") + (emb ? "emb" : "flat");
    fs::remove_all(cx.dir / rel);
    model.save(cx.dir / rel);
    for (auto& f : list_files(cx.dir, rel)) cx.artifacts.push_back(f);
    cx.write(fold_cube(name, 0), temporal::smooth_cube(static_test, model));
  }
}

void stage_baselines(Context& cx) {
  cx.load_world();
  const ExperimentConfig& cfg = cx.config;
  const PopCube coarse = cx.cube(kCoarse);
  const auto plan = cx.plan();
  baselines::Hyper hp = cfg.baseline;
  hp.threads = cx.opt.threads;
  for (int f = 0; f < cfg.folds; ++f) {
    const auto tr = plan.train_days(static_cast<std::size_t>(f)), te = plan.test_days(static_cast<std::size_t>(f));
    const PopCube truth_test = cx.truth.select_days(te);
    const auto train = baselines::build_pixel_dataset(coarse.select_days(tr), cx.truth.select_days(tr), cx.pois, true);
    const auto test = baselines::build_pixel_dataset(coarse.select_days(te), truth_test, cx.pois, true);
    for (auto m : cfg.methods) {
      const std::string name(baselines::method_name(m));
      const double t0 = now_s();
      const PopCube pred = baselines::fit_predict(m, train, test, truth_test, hp);
      cx.timings[name + "/f" + std::to_string(f)] = now_s() - t0;
      cx.write(fold_cube(name, f), pred);
    }
    cx.log("baselines: fold " + std::to_string(f) + " done");
  }
}

// ---------------------------------------------------------------- eval

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string metric_cells(const eval::MetricReport& r) {
  return num(r.rmse) + "," + num(r.nrmse) + "," + (r.corr_defined ? num(r.corr) : std::string("nan")) + "," +
         num(r.mae);
}

void stage_eval(Context& cx) {
  cx.load_world();
  const ExperimentConfig& cfg = cx.config;
  const auto plan = cx.plan();
  const bool have_temporal = cx.stage_done(Stage::train_temporal);
  const bool have_baselines = cx.stage_done(Stage::baselines);
  const json& stages = cx.manifest.data().at("stages");
  auto timing = [&](const std::string& key) {
    for (const auto& [name, s] : stages.items()) {
      if (s.contains("timings") && s.at("timings").contains(key)) return s.at("timings").at(key).get<double>();
    }
    return std::nan("");
  };

  std::vector<PopCube> truth_test;
  for (int f = 0; f < cfg.folds; ++f) truth_test.push_back(cx.truth.select_days(plan.test_days(static_cast<std::size_t>(f))));

  std::vector<std::string> methods = {"static"};
  if (have_baselines) {
    for (auto m : cfg.methods) methods.emplace_back(baselines::method_name(m));
  }
  std::string metrics = "method,level_pair,fold,RMSE,NRMSE,Corr,MAE\n";
  std::string results = "method,level_pair,fold,RMSE,NRMSE,Corr,MAE,wall_time_s\n";
  for (const auto& m : methods) {
    std::vector<eval::MetricReport> folds;
    double wall = 0.0;
    for (int f = 0; f < cfg.folds; ++f) {
      auto r = eval::compute_metrics(cx.cube(fold_cube(m, f)), truth_test[static_cast<std::size_t>(f)], cx.city.mask);
      r.method = m;
      r.fold = f;
      folds.push_back(r);
      const double w = timing(m + "/f" + std::to_string(f));
      wall += w;
      const std::string row = m + "," + kLevelPair + "," + std::to_string(f) + "," + metric_cells(r);
      metrics += row + "\n";
      results += row + "," + num(w) + "\n";
    }
    const auto mean = eval::mean_report(folds);
    const std::string row = m + "," + kLevelPair + ",mean," + metric_cells(mean);
    metrics += row + "\n";
    results += row + "," + num(wall / cfg.folds) + "\n";
  }
  cx.write_text("metrics/metrics.csv", metrics);
  cx.write_text("metrics/results.csv", results);

  const PopCube& test0 = truth_test[0];
  const PopCube static0 = cx.cube(fold_cube("static", 0));

  std::string poi = "subset,fold,RMSE,NRMSE,Corr,MAE\n";
  poi += poi_tag(cfg.spatial.pois) + ",0," + metric_cells(eval::compute_metrics(static0, test0, cx.city.mask)) + "\n";
  for (PoiSubset s : cfg.poi_ablation) {
    if (s == cfg.spatial.pois) continue;
    const auto r = eval::compute_metrics(cx.cube(fold_cube("poi_" + poi_tag(s), 0)), test0, cx.city.mask);
    poi += poi_tag(s) + ",0," + metric_cells(r) + "\n";
  }
  cx.write_text("metrics/poi.csv", poi);

  if (cfg.segmented) {
    std::string seg = "period,segmented_RMSE,all_hours_RMSE,segmented_NRMSE,all_hours_NRMSE\n";
    for (const auto& p : cfg.periods) {
      const PopCube tp = test0.select_hours(p.begin, p.end);
      const auto s = eval::compute_metrics(cx.cube(fold_cube("period_" + period_tag(p), 0)), tp, cx.city.mask);
      const auto a = eval::compute_metrics(static0.select_hours(p.begin, p.end), tp, cx.city.mask);
      seg += p.label() + "," + num(s.rmse) + "," + num(a.rmse) + "," + num(s.nrmse) + "," + num(a.nrmse) + "\n";
    }
    cx.write_text("metrics/segmented.csv", seg);
  }

  std::string loc = "method,curve,bin,count,RMSE\n";
  std::vector<std::pair<std::string, PopCube>> local = {{"static", static0}};
  if (have_temporal) local.emplace_back("lstm_emb", cx.cube(fold_cube("lstm_emb", 0)));
  for (const auto& [name, pred] : local) {
    const auto b = eval::locality_breakdown(pred, test0, cx.city, cx.pois);
    for (auto [curve, bins] : {std::pair{"distance", &b.distance}, std::pair{"poi_decile", &b.poi},
                               std::pair{"function", &b.function}}) {
      for (const auto& bin : *bins) {
        loc += name + "," + curve + "," + bin.label + "," + std::to_string(bin.count) + "," + num(bin.rmse) + "\n";
      }
    }
  }
  cx.write_text("metrics/locality.csv", loc);

  if (have_temporal) {
    const PopCube emb = cx.cube(fold_cube("lstm_emb", 0));
    const PopCube flat = cx.cube(fold_cube("lstm_flat", 0));
    std::string tcsv = "method,fold,RMSE,NRMSE,Corr,MAE\n";
    for (const auto& [name, pred] : {std::pair{"static", &static0}, std::pair{"lstm_flat", &flat},
                                     std::pair{"lstm_emb", &emb}}) {
      tcsv += std::string(name) + ",0," + metric_cells(eval::compute_metrics(*pred, test0, cx.city.mask)) + "\n";
    }
    cx.write_text("metrics/temporal.csv", tcsv);

    std::string cs = "class,static_ratio,lstm_flat_ratio,lstm_emb_ratio\n";
    for (std::size_t k = 0; k < citygen::kFunctionClasses; ++k) {
      const auto cls = static_cast<citygen::FunctionClass>(k);
      cs += std::string(citygen::function_class_name(cls)) + "," + num(range_ratio(static0, test0, cx.city, cls)) + "," +
            num(range_ratio(flat, test0, cx.city, cls)) + "," + num(range_ratio(emb, test0, cx.city, cls)) + "\n";
    }
    cx.write_text("metrics/case_study.csv", cs);
  }
  cx.write_text("metrics/report.txt", render_report(cx.dir));
}

void write_config(const ExperimentConfig& config, const fs::path& out, const std::string& hash, Manifest& m) {
  const json cj = to_json(config);
  io::write_text_atomic(out / "config.json", cj.dump(2) + "\n");
  m.data()["library_version"] = kVersion;
  m.data()["config_hash"] = hash;
  m.data()["preset"] = config.preset;
  m.data()["scale"] = {{"grid", {config.city.grid_h, config.city.grid_w}},
                       {"spatial_iterations", config.spatial.stage1.iterations},
                       {"spatial_batch", config.spatial.stage1.batch},
                       {"temporal_iterations", config.temporal.iterations},
                       {"temporal_batch", config.temporal.batch},
                       {"folds", config.folds}};
}

/// Loads the manifest and resolves a config-hash mismatch.
Manifest open_run(const ExperimentConfig& config, const fs::path& out, const std::string& hash, bool force) {
  Manifest m = Manifest::load_or_new(out);
  if (m.data().contains("config_hash") && m.data().at("config_hash") != hash) {
    if (!force) {
      throw StageError("run directory " + out.string() + " holds config " + m.data().at("config_hash").get<std::string>() +
                       ", not " + hash + "; use --force to overwrite or pick another --out");
    }
    m.data()["stages"] = json::object();
  }
  write_config(config, out, hash, m);
  return m;
}

StageOutcome gen_locked(const ExperimentConfig& config, const fs::path& out, const RunOptions& opt, Manifest& m,
                        const std::string& hash) {
  if (!opt.force && m.done("gen", hash)) return {"gen", "skipped", 0.0};
  const double t0 = now_s();
  const auto city = citygen::generate_city(config.city);
  const PopCube truth = citygen::generate_population(city, config.seed);
  io::write_text(out / kCity, io::city_to_json(city).dump() + "\n");
  io::write_cube(out / kTruth, truth);
  const double secs = now_s() - t0;
  // everything downstream depends on the city
  for (auto& [name, s] : m.data()["stages"].items()) {
    if (name != "gen" && s.value("status", "") == "done") s["status"] = "stale";
  }
  m.complete("gen", hash, secs, {kCity, kTruth, std::string(kTruth) + ".json"});
  m.save();
  if (opt.log) opt.log("gen: city " + std::to_string(city.height) + "x" + std::to_string(city.width) + ", " +
                       std::to_string(truth.frames.size()) + " frames");
  return {"gen", "done", secs};
}

std::vector<Stage> prerequisites(Stage s) {
  switch (s) {
    case Stage::preprocess:
      return {};
    case Stage::train_spatial:
    case Stage::baselines:
      return {Stage::preprocess};
    case Stage::train_temporal:
    case Stage::eval:
      return {Stage::train_spatial};
  }
  return {};
}

std::vector<Stage> dependents(Stage s) {
  switch (s) {
    case Stage::preprocess:
      return {Stage::train_spatial, Stage::train_temporal, Stage::baselines, Stage::eval};
    case Stage::train_spatial:
      return {Stage::train_temporal, Stage::eval};
    case Stage::train_temporal:
    case Stage::baselines:
      return {Stage::eval};
    case Stage::eval:
      return {};
  }
  return {};
}

}  // namespace

StageOutcome run_gen(const ExperimentConfig& config, const fs::path& out, const RunOptions& opt) {
  RunLock lock(out);
  const std::string hash = config_hash(config);
  Manifest m = open_run(config, out, hash, opt.force);
  m.save();
  return gen_locked(config, out, opt, m, hash);
}

std::vector<StageOutcome> run_pipeline(const ExperimentConfig& config, const fs::path& out,
                                       const std::vector<Stage>& stages, const RunOptions& opt) {
  RunLock lock(out);
  const std::string hash = config_hash(config);
  Manifest m = open_run(config, out, hash, opt.force);
  std::vector<StageOutcome> outcomes;

  if (config.preset == "paper-scale" && !opt.force) {
    for (Stage s : stages) {
      if (!m.done(stage_name(s), hash)) m.set_status(stage_name(s), "planned");
      outcomes.push_back({std::string(stage_name(s)), "planned", 0.0});
    }
    m.data()["note"] = "paper-scale preset: plan recorded, nothing executed; rerun with --force to execute";
    m.save();
    return outcomes;
  }
  m.save();

  if (!fs::exists(out / kCity) || !m.done("gen", hash)) {
    RunOptions gen_opt = opt;
    gen_opt.force = true;
    outcomes.push_back(gen_locked(config, out, gen_opt, m, hash));
  }

  Context cx{config, out, hash, opt, m};
  for (Stage s : stages) {
    const std::string name(stage_name(s));
    if (!opt.force && cx.manifest.done(name, hash)) {
      outcomes.push_back({name, "skipped", 0.0});
      if (opt.log) opt.log(name + ": up to date");
      continue;
    }
    for (Stage p : prerequisites(s)) cx.require(p);
    cx.artifacts.clear();
    cx.timings = json::object();
    cx.manifest.set_status(name, "running");
    cx.manifest.save();
    const double t0 = now_s();
    switch (s) {
      case Stage::preprocess:
        stage_preprocess(cx);
        break;
      case Stage::train_spatial:
        stage_train_spatial(cx);
        break;
      case Stage::train_temporal:
        stage_train_temporal(cx);
        break;
      case Stage::baselines:
        stage_baselines(cx);
        break;
      case Stage::eval:
        stage_eval(cx);
        break;
    }
    const double secs = now_s() - t0;
    for (Stage d : dependents(s)) {
      json& st = cx.manifest.data()["stages"];
      const std::string dn(stage_name(d));
      if (st.contains(dn) && st[dn].value("status", "") == "done") st[dn]["status"] = "stale";
    }
    cx.manifest.complete(name, hash, secs, cx.artifacts);
    cx.manifest.data()["stages"][name]["timings"] = cx.timings;
    cx.manifest.save();
    outcomes.push_back({name, "done", secs});
  }
  return outcomes;
}

// ---------------------------------------------------------------- report

namespace {

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(io::read_text(p));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(cell);
    rows.push_back(row);
  }
  return rows;
}

std::string table(const std::string& title, const std::vector<std::vector<std::string>>& rows) {
  if (rows.empty()) return "";
  std::vector<std::size_t> width;
  for (const auto& r : rows) {
    width.resize(std::max(width.size(), r.size()), 0);
    for (std::size_t i = 0; i < r.size(); ++i) width[i] = std::max(width[i], r[i].size());
  }
  std::ostringstream out;
  out << title << "\n";
  for (std::size_t k = 0; k < rows.size(); ++k) {
    for (std::size_t i = 0; i < rows[k].size(); ++i) {
      out << "  " << std::left << std::setw(static_cast<int>(width[i])) << rows[k][i];
    }
    out << "\n";
    if (k == 0) {
      std::size_t total = 0;
      for (auto w : width) total += w + 2;
      out << "  " << std::string(total - 2, '-') << "\n";
    }
  }
  return out.str() + "\n";
}

}  // namespace

std::string render_report(const fs::path& out) {
  const fs::path m = out / "metrics";
  if (!fs::exists(m / "metrics.csv")) throw StageError("eval artifacts missing in " + out.string());
  std::string text;
  auto rows = read_csv(m / "metrics.csv");
  std::vector<std::vector<std::string>> mean;
  for (const auto& r : rows) {
    if (r[2] == "fold" || r[2] == "mean") mean.push_back({r[0], r[1], r[3], r[4], r[5], r[6]});
  }
  text += table("Static mapping vs baselines (mean over folds)", mean);
  if (fs::exists(m / "temporal.csv")) text += table("Temporal smoothing (fold 0)", read_csv(m / "temporal.csv"));
  if (fs::exists(m / "segmented.csv")) text += table("Period-segmented models (fold 0)", read_csv(m / "segmented.csv"));
  if (fs::exists(m / "poi.csv")) text += table("PoI channel ablation (fold 0)", read_csv(m / "poi.csv"));
  if (fs::exists(m / "case_study.csv")) {
    text += table("Diurnal range / true range by function class (fold 0)", read_csv(m / "case_study.csv"));
  }
  text += table("Per-fold metrics", rows);
  return text;
}

// ---------------------------------------------------------------- export

std::vector<fs::path> export_cube(const fs::path& cube, std::string_view format, const fs::path& dir) {
  if (format != "csv" && format != "pgm16") throw ConfigError("unknown export format '" + std::string(format) + "' (csv, pgm16)");
  if (!fs::exists(cube)) throw InputError("cube " + cube.string() + " not found");
  // the mask comes from the run directory's city when there is one
  Mask mask;
  for (fs::path p = fs::absolute(cube).parent_path(); !p.empty(); p = p.parent_path()) {
    if (fs::exists(p / kCity)) {
      mask = io::city_from_json(json::parse(io::read_text(p / kCity))).mask;
      break;
    }
    if (p == p.root_path()) break;
  }
  if (mask.empty()) {
    std::ifstream in(cube, std::ios::binary);
    char magic[4];
    std::uint64_t dims[3] = {0, 0, 0};
    in.read(magic, 4);
    in.read(reinterpret_cast<char*>(dims), sizeof dims);
    if (!in) throw InputError(cube.string() + ": not a PCB1 cube");
    mask.assign(dims[1] * dims[2], 1);
  }
  const PopCube c = io::read_cube(cube, mask);
  fs::create_directories(dir);
  std::vector<fs::path> files;
  const std::string stem = cube.stem().string();
  for (std::size_t t = 0; t < c.frames.size(); ++t) {
    const Frame& f = c.frames[t];
    char name[64];
    std::snprintf(name, sizeof name, "_d%02d_h%02d", f.day, f.hour);
    if (format == "csv") {
      const fs::path p = dir / (stem + name + ".csv");
      io::write_grid_csv(p, f.map, f.day, f.hour);
      files.push_back(p);
    } else {
      const fs::path p = dir / (stem + name + ".pgm");
      io::write_pgm16(p, f.map);
      files.push_back(p);
    }
  }
  return files;
}

double range_ratio(const PopCube& pred, const PopCube& truth, const citygen::CityModel& city,
                   citygen::FunctionClass cls) {
  require_aligned(pred, truth, "range_ratio");
  std::map<int, std::vector<std::size_t>> days;
  for (std::size_t t = 0; t < truth.frames.size(); ++t) days[truth.frames[t].day].push_back(t);
  double acc = 0.0;
  std::size_t n = 0;
  for (const auto& [day, frames] : days) {
    for (std::size_t i = 0; i < city.mask.size(); ++i) {
      if (!city.mask[i] || city.cell_class[i] != cls) continue;
      double plo = INFINITY, phi = -INFINITY, tlo = INFINITY, thi = -INFINITY;
      for (std::size_t t : frames) {
        const double a = pred.frames[t].map.values[i], b = truth.frames[t].map.values[i];
        plo = std::min(plo, a);
        phi = std::max(phi, a);
        tlo = std::min(tlo, b);
        thi = std::max(thi, b);
      }
      if (thi - tlo <= 0.0) continue;
      acc += (phi - plo) / (thi - tlo);
      ++n;
    }
  }
  return n ? acc / static_cast<double>(n) : std::nan("");
}

}  // namespace popmap::pipeline
