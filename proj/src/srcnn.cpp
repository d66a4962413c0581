#include "popmap/srcnn.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "popmap/citygen.hpp"
#include "popmap/error.hpp"

namespace popmap::srcnn {

using nd::Tensor;
using preprocess::MultiChannelMap;

const ZonePartition& Ladder::at(Level level) const {
  for (std::size_t i = 0; i < kLadderOrder.size(); ++i) {
    if (kLadderOrder[i] == level) return levels[i];
  }
  throw InputError("ladder has no level " + std::string(level_name(level)));
}

void Ladder::validate() const {
  for (std::size_t i = 0; i + 1 < levels.size(); ++i) {
    levels[i].validate();
    if (!levels[i].contains(levels[i + 1])) {
      throw PartitionError("ladder level " + std::string(level_name(kLadderOrder[i + 1])) + " is not nested in " +
                           std::string(level_name(kLadderOrder[i])));
    }
  }
}

Ladder build_ladder(const ZonePartition& district, const ZonePartition& street_block, const ZonePartition& fine,
                    std::uint64_t seed) {
  if (!district.contains(street_block) || !street_block.contains(fine)) {
    throw PartitionError("build_ladder: district, street-block and fine partitions are not nested");
  }
  std::mt19937_64 rng(seed);
  const auto geo = [](int a, int b) {
    return static_cast<int>(std::lround(std::sqrt(static_cast<double>(a) * static_cast<double>(b))));
  };
  Ladder ladder;
  ladder.levels[0] = district;
  ladder.levels[1] = citygen::group_within(street_block, district, geo(district.zone_count, street_block.zone_count),
                                           Level::intermediate_a, rng);
  ladder.levels[2] = street_block;
  ladder.levels[3] = citygen::group_within(fine, street_block, geo(street_block.zone_count, fine.zone_count),
                                           Level::intermediate_b, rng);
  ladder.levels[4] = fine;
  ladder.levels[0].level = Level::district;
  ladder.levels[2].level = Level::street_block;
  ladder.levels[4].level = Level::fine;
  ladder.validate();
  return ladder;
}

MultiChannelMap build_input(const GridMap& pop, const PoiGrid& pois, PoiSubset selected) {
  const auto cats = selected.categories();
  if (!cats.empty() && (pois.height != pop.height || pois.width != pop.width)) {
    throw ShapeError("build_input: PoI grid " + std::to_string(pois.height) + "x" + std::to_string(pois.width) +
                     " does not match population map " + std::to_string(pop.height) + "x" +
                     std::to_string(pop.width));
  }
  MultiChannelMap m = MultiChannelMap::zeros(static_cast<int>(1 + cats.size()), pop.height, pop.width, pop.mask);
  const std::size_t plane = m.plane();
  std::copy(pop.values.begin(), pop.values.end(), m.values.begin());
  for (std::size_t k = 0; k < cats.size(); ++k) {
    const auto& layer = pois[cats[k]];
    if (layer.size() != plane) throw ShapeError("build_input: PoI layer has the wrong size");
    std::copy(layer.begin(), layer.end(), m.values.begin() + static_cast<std::ptrdiff_t>((k + 1) * plane));
  }
  return m;
}

ChannelStats fit_stats(const std::vector<MultiChannelMap>& maps) {
  if (maps.empty()) throw InputError("fit_stats: no maps");
  const int c = maps.front().channels;
  ChannelStats s;
  s.mean.assign(c, 0.0);
  s.std.assign(c, 0.0);
  std::vector<double> sum_sq(c, 0.0);
  double count = 0.0;
  for (const MultiChannelMap& m : maps) {
    if (m.channels != c) throw ShapeError("fit_stats: maps differ in channel count");
    for (std::size_t i = 0; i < m.plane(); ++i) {
      if (!m.mask[i]) continue;
      count += 1.0;
      for (int k = 0; k < c; ++k) s.mean[k] += m.values[k * m.plane() + i];
    }
  }
  if (count == 0.0) throw InputError("fit_stats: no in-boundary cells");
  for (double& v : s.mean) v /= count;
  for (const MultiChannelMap& m : maps) {
    for (std::size_t i = 0; i < m.plane(); ++i) {
      if (!m.mask[i]) continue;
      for (int k = 0; k < c; ++k) {
        const double d = m.values[k * m.plane() + i] - s.mean[k];
        sum_sq[k] += d * d;
      }
    }
  }
  for (int k = 0; k < c; ++k) s.std[k] = std::max(std::sqrt(sum_sq[k] / count), 1e-12);
  return s;
}

void standardize(MultiChannelMap& map, const ChannelStats& stats) {
  if (stats.mean.size() != static_cast<std::size_t>(map.channels)) {
    throw ShapeError("standardize: stats have " + std::to_string(stats.mean.size()) + " channels, map has " +
                     std::to_string(map.channels));
  }
  for (int k = 0; k < map.channels; ++k) {
    double* p = map.values.data() + k * map.plane();
    for (std::size_t i = 0; i < map.plane(); ++i) p[i] = (p[i] - stats.mean[k]) / stats.std[k];
  }
}

void destandardize(MultiChannelMap& map, const ChannelStats& stats) {
  if (stats.mean.size() != static_cast<std::size_t>(map.channels)) {
    throw ShapeError("destandardize: channel count mismatch");
  }
  for (int k = 0; k < map.channels; ++k) {
    double* p = map.values.data() + k * map.plane();
    for (std::size_t i = 0; i < map.plane(); ++i) p[i] = p[i] * stats.std[k] + stats.mean[k];
  }
}

std::vector<PairStream> make_intermediate_targets(const PopCube& fine_truth, const Ladder& ladder) {
  ladder.validate();
  std::vector<PopCube> levels;
  for (std::size_t i = 0; i < kLadderOrder.size(); ++i) {
    levels.push_back(preprocess::aggregate(fine_truth, ladder.levels[i]));
  }
  std::vector<PairStream> streams;
  for (std::size_t u = 0; u + 1 < kLadderOrder.size(); ++u) {
    PairStream s;
    s.input_level = kLadderOrder[u];
    s.target_level = kLadderOrder[u + 1];
    const std::string tag = "aggregate(truth," + std::string(level_name(s.input_level)) + ")->aggregate(truth," +
                            std::string(level_name(s.target_level)) + ")";
    for (std::size_t t = 0; t < fine_truth.frames.size(); ++t) {
      s.inputs.push_back(levels[u].frames[t].map);
      s.targets.push_back(levels[u + 1].frames[t].map);
      s.provenance.push_back(tag);
    }
    streams.push_back(std::move(s));
  }
  return streams;
}

SrcnnUnit::SrcnnUnit(const Architecture& arch, PoiSubset pois, Level input_level, Level target_level,
                     std::uint64_t seed)
    : arch_(arch), pois_(pois), input_level_(input_level), target_level_(target_level) {
  if (arch.filters1 < 1 || arch.filters2 < 1 || arch.kernel1 % 2 == 0 || arch.kernel2 % 2 == 0 ||
      arch.kernel3 % 2 == 0) {
    throw ConfigError("SRCNN architecture needs positive filter counts and odd kernels");
  }
  nd::Rng rng(seed);
  const std::size_t c = in_channels();
  bn1_ = nd::BatchNorm2d(c);
  conv1_ = nd::Conv2d(c, arch.filters1, arch.kernel1, rng);
  bn2_ = nd::BatchNorm2d(arch.filters1);
  conv2_ = nd::Conv2d(arch.filters1, arch.filters2, arch.kernel2, rng);
  bn3_ = nd::BatchNorm2d(arch.filters2);
  conv3_ = nd::Conv2d(arch.filters2, 1, arch.kernel3, rng);
}

Tensor SrcnnUnit::forward(const Tensor& x, bool train) {
  Tensor h = nd::relu(conv1_(bn1_(x, train)));
  h = nd::relu(conv2_(bn2_(h, train)));
  return conv3_(bn3_(h, train));
}

Tensor SrcnnUnit::eval_forward(const Tensor& x) const {
  Tensor h = nd::relu(conv1_(bn1_.eval(x)));
  h = nd::relu(conv2_(bn2_.eval(h)));
  return conv3_(bn3_.eval(h));
}

std::vector<nd::Adam::Group> SrcnnUnit::parameter_groups(const TrainConfig& config) const {
  return {{{bn1_.gamma, bn1_.beta, conv1_.weight, conv1_.bias, bn2_.gamma, bn2_.beta, conv2_.weight, conv2_.bias},
           config.lr_hidden},
          {{bn3_.gamma, bn3_.beta, conv3_.weight, conv3_.bias}, config.lr_output}};
}

TrainReport SrcnnUnit::train(const PairStream& stream, const PoiGrid& pois, const TrainConfig& config) {
  if (stream.inputs.empty() || stream.inputs.size() != stream.targets.size()) {
    throw InputError("train_unit: need at least one input/target pair");
  }
  if (stream.input_level != input_level_ || stream.target_level != target_level_) {
    throw InputError("train_unit: stream levels do not match the unit");
  }
  if (config.iterations < 1 || config.batch < 1) throw ConfigError("train_unit: iterations and batch must be >= 1");
  if (!(config.final_lr_scale > 0.0 && config.final_lr_scale <= 1.0)) {
    throw ConfigError("train_unit: final_lr_scale must lie in (0,1]");
  }
  if (!(config.frozen_bn_share >= 0.0 && config.frozen_bn_share <= 1.0)) {
    throw ConfigError("train_unit: frozen_bn_share must lie in [0,1]");
  }
  const auto start = std::chrono::steady_clock::now();
  train_config = config;

  std::vector<MultiChannelMap> inputs;
  inputs.reserve(stream.inputs.size());
  for (const GridMap& g : stream.inputs) inputs.push_back(build_input(g, pois, pois_));
  input_stats = fit_stats(inputs);
  for (MultiChannelMap& m : inputs) standardize(m, input_stats);

  const auto target_value = [&](std::size_t f, std::size_t cell) {
    const double t = stream.targets[f].values[cell];
    return arch_.residual ? t - stream.inputs[f].values[cell] : t;
  };
  double sum = 0.0, sum_sq = 0.0, count = 0.0;
  for (std::size_t f = 0; f < stream.targets.size(); ++f) {
    const GridMap& g = stream.targets[f];
    for (std::size_t i = 0; i < g.values.size(); ++i) {
      if (!g.mask[i]) continue;
      const double v = target_value(f, i);
      sum += v;
      sum_sq += v * v;
      count += 1.0;
    }
  }
  target_mean = sum / count;
  target_std = std::max(std::sqrt(std::max(sum_sq / count - target_mean * target_mean, 0.0)), 1e-12);

  const GridMap& ref = stream.targets.front();
  const int p = config.patch;
  std::vector<std::pair<int, int>> windows;
  for (int r : preprocess::window_starts(ref.height, p, config.stride)) {
    for (int c : preprocess::window_starts(ref.width, p, config.stride)) {
      int outside = 0;
      for (int i = 0; i < p; ++i) {
        for (int j = 0; j < p; ++j) outside += ref.mask[static_cast<std::size_t>(r + i) * ref.width + c + j] ? 0 : 1;
      }
      if (outside <= p * p / 2) windows.emplace_back(r, c);
    }
  }
  if (windows.empty()) throw InputError("train_unit: every patch window is mostly outside the boundary");

  TrainReport report;
  report.patches = windows.size() * inputs.size();
  nd::Adam adam(parameter_groups(config));
  nd::Rng rng(config.seed);
  std::uniform_int_distribution<std::size_t> pick_frame(0, inputs.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_window(0, windows.size() - 1);
  const std::size_t cin = in_channels();
  const std::size_t b = static_cast<std::size_t>(config.batch);
  const std::size_t pp = static_cast<std::size_t>(p) * p;
  std::vector<double> xb, tb, mb;
  const auto fill = [&](std::size_t batch) {
    xb.assign(batch * cin * pp, 0.0);
    tb.assign(batch * pp, 0.0);
    mb.assign(batch * pp, 0.0);
    for (std::size_t s = 0; s < batch; ++s) {
      const std::size_t f = pick_frame(rng);
      const auto [r0, c0] = windows[pick_window(rng)];
      const MultiChannelMap& in = inputs[f];
      const GridMap& tg = stream.targets[f];
      for (int i = 0; i < p; ++i) {
        for (int j = 0; j < p; ++j) {
          const std::size_t cell = static_cast<std::size_t>(r0 + i) * ref.width + c0 + j;
          const std::size_t o = static_cast<std::size_t>(i) * p + j;
          for (std::size_t k = 0; k < cin; ++k) xb[(s * cin + k) * pp + o] = in.values[k * in.plane() + cell];
          const bool inside = tg.mask[cell] != 0;
          mb[s * pp + o] = inside ? 1.0 : 0.0;
          tb[s * pp + o] = inside ? (target_value(f, cell) - target_mean) / target_std : 0.0;
        }
      }
    }
    return Tensor::from({batch, cin, static_cast<std::size_t>(p), static_cast<std::size_t>(p)}, xb);
  };
  // running statistics: equal-weight average over fresh calibration batches
  const auto calibrate = [&] {
    nd::NoGradGuard no_grad;
    const std::size_t calib = std::max<std::size_t>(b, 32);
    for (int k = 0; k < 32; ++k) {
      for (auto* bn : {&bn1_, &bn2_, &bn3_}) bn->momentum = static_cast<double>(k) / (k + 1.0);
      forward(fill(calib), true);
    }
    for (auto* bn : {&bn1_, &bn2_, &bn3_}) bn->momentum = 0.9;
  };
  const int frozen_from =
      config.iterations - static_cast<int>(std::lround(config.frozen_bn_share * config.iterations));
  for (int it = 0; it < config.iterations; ++it) {
    if (it == frozen_from) calibrate();
    if (config.final_lr_scale != 1.0) {
      const double progress = static_cast<double>(it) / static_cast<double>(config.iterations);
      adam.set_lr_scale(config.final_lr_scale + (1.0 - config.final_lr_scale) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
    }
    const Tensor x = fill(b);
    const Tensor mask = Tensor::from({b, 1, static_cast<std::size_t>(p), static_cast<std::size_t>(p)}, mb);
    const Tensor target = Tensor::from(mask.shape(), tb);
    Tensor loss = nd::mse_loss(nd::mul(forward(x, it < frozen_from), mask), target);
    const double value = loss.item();
    if (!std::isfinite(value)) {
      double xm = 0.0, xs = 0.0;
      for (double v : xb) {
        xm += v;
        xs += v * v;
      }
      xm /= static_cast<double>(xb.size());
      std::ostringstream msg;
      msg << "SRCNN unit " << level_name(input_level_) << "->" << level_name(target_level_)
          << " diverged at iteration " << it << " (lr " << config.lr_hidden << "/" << config.lr_output
          << ", batch mean " << xm << ", batch rms " << std::sqrt(xs / static_cast<double>(xb.size())) << ")";
      throw TrainingDiverged(msg.str());
    }
    report.loss_trace.push_back(value);
    loss.backward();
    adam.step();
    adam.zero_grad();
  }
  if (frozen_from >= config.iterations) calibrate();
  trained_ = true;
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

std::vector<GridMap> SrcnnUnit::apply(const std::vector<GridMap>& coarse, const PoiGrid& pois) const {
  if (!trained_) {
    throw StateError("SRCNN unit " + std::string(level_name(input_level_)) + "->" +
                     std::string(level_name(target_level_)) + " is not trained");
  }
  nd::NoGradGuard no_grad;
  std::vector<GridMap> out;
  out.reserve(coarse.size());
  constexpr std::size_t chunk = 16;
  for (std::size_t first = 0; first < coarse.size(); first += chunk) {
    const std::size_t n = std::min(chunk, coarse.size() - first);
    const GridMap& ref = coarse[first];
    const std::size_t plane = ref.cells();
    std::vector<double> xb;
    xb.reserve(n * in_channels() * plane);
    for (std::size_t s = 0; s < n; ++s) {
      const GridMap& g = coarse[first + s];
      if (g.level != input_level_) {
        throw InputError("SRCNN unit expects " + std::string(level_name(input_level_)) + " input, got " +
                         std::string(level_name(g.level)));
      }
      if (g.height != ref.height || g.width != ref.width) throw ShapeError("SRCNN apply: frames differ in shape");
      MultiChannelMap m = build_input(g, pois, pois_);
      standardize(m, input_stats);
      xb.insert(xb.end(), m.values.begin(), m.values.end());
    }
    const Tensor y = eval_forward(Tensor::from(
        {n, in_channels(), static_cast<std::size_t>(ref.height), static_cast<std::size_t>(ref.width)},
        std::move(xb)));
    for (std::size_t s = 0; s < n; ++s) {
      const GridMap& g = coarse[first + s];
      GridMap m = GridMap::zeros(g.height, g.width, target_level_, g.mask);
      for (std::size_t i = 0; i < plane; ++i) {
        if (!g.mask[i]) continue;
        const double v = y.data()[s * plane + i] * target_std + target_mean;
        m.values[i] = std::max(0.0, arch_.residual ? g.values[i] + v : v);
      }
      out.push_back(std::move(m));
    }
  }
  return out;
}

GridMap SrcnnUnit::apply(const GridMap& coarse, const PoiGrid& pois) const {
  return std::move(apply(std::vector<GridMap>{coarse}, pois).front());
}

std::vector<nd::NamedTensor> SrcnnUnit::tensors() const {
  std::vector<nd::NamedTensor> out;
  const auto add_bn = [&](const std::string& name, const nd::BatchNorm2d& bn) {
    out.push_back({name + ".gamma", bn.gamma});
    out.push_back({name + ".beta", bn.beta});
    const std::size_t c = bn.gamma.numel();
    std::vector<double> mean = bn.stats.populated ? bn.stats.mean : std::vector<double>(c, 0.0);
    std::vector<double> var = bn.stats.populated ? bn.stats.var : std::vector<double>(c, 1.0);
    out.push_back({name + ".running_mean", Tensor::from({c}, std::move(mean))});
    out.push_back({name + ".running_var", Tensor::from({c}, std::move(var))});
  };
  add_bn("bn1", bn1_);
  out.push_back({"conv1.weight", conv1_.weight});
  out.push_back({"conv1.bias", conv1_.bias});
  add_bn("bn2", bn2_);
  out.push_back({"conv2.weight", conv2_.weight});
  out.push_back({"conv2.bias", conv2_.bias});
  add_bn("bn3", bn3_);
  out.push_back({"conv3.weight", conv3_.weight});
  out.push_back({"conv3.bias", conv3_.bias});
  return out;
}

void SrcnnUnit::save(const std::filesystem::path& checkpoint) const {
  if (!trained_) throw StateError("cannot save an untrained SRCNN unit");
  nd::save_checkpoint(checkpoint, tensors());
}

void SrcnnUnit::load(const std::filesystem::path& checkpoint) {
  const auto loaded = nd::load_checkpoint(checkpoint);
  const auto targets = tensors();
  nd::restore_into(loaded, targets);
  for (auto* bn : {&bn1_, &bn2_, &bn3_}) {
    const std::string name = bn == &bn1_ ? "bn1" : bn == &bn2_ ? "bn2" : "bn3";
    const auto& m = loaded.at(name + ".running_mean");
    const auto& v = loaded.at(name + ".running_var");
    bn->stats.mean.assign(m.data().begin(), m.data().end());
    bn->stats.var.assign(v.data().begin(), v.data().end());
    bn->stats.populated = true;
  }
  trained_ = true;
}

StackConfig StackConfig::desk() {
  StackConfig c;
  c.arch = {16, 8, 9, 1, 5, true};
  c.stage1 = {400, 8, 3e-3, 1e-3, 24, 12, 1, 0.05, 0.5};
  c.stage2 = {400, 8, 3e-3, 1e-3, 16, 8, 1, 0.05, 0.5};
  return c;
}

StackConfig StackConfig::paper_scale() {
  StackConfig c;
  c.arch = {64, 32, 9, 1, 5};
  c.stage1 = {100000, 512, 1e-4, 1e-5, 58, 29, 1};
  c.stage2 = {100000, 512, 1e-4, 1e-5, 38, 19, 1};
  return c;
}

bool StackedMapper::trained() const {
  return std::all_of(units.begin(), units.end(), [](const SrcnnUnit& u) { return u.trained(); });
}

PopCube StackedMapper::map_cube(const PopCube& coarse, const PoiGrid& poi_grid, Level target) const {
  if (!trained()) throw StateError("stacked mapper is not trained");
  if (coarse.frames.empty()) return {};
  std::vector<GridMap> maps;
  maps.reserve(coarse.frames.size());
  for (const Frame& f : coarse.frames) maps.push_back(f.map);
  std::size_t u = 0;
  while (u < units.size() && units[u].input_level() != maps.front().level) ++u;
  if (u == units.size()) {
    throw InputError("no mapping unit accepts " + std::string(level_name(maps.front().level)) + " input");
  }
  bool reached = maps.front().level == target;
  for (; u < units.size() && !reached; ++u) {
    maps = units[u].apply(maps, poi_grid);
    reached = units[u].target_level() == target;
  }
  if (!reached) throw InputError("target level " + std::string(level_name(target)) + " is not reachable");
  PopCube out;
  for (std::size_t t = 0; t < maps.size(); ++t) {
    out.frames.push_back({coarse.frames[t].day, coarse.frames[t].hour, std::move(maps[t])});
  }
  return out;
}

GridMap StackedMapper::map_level(const GridMap& coarse, const PoiGrid& poi_grid, Level target) const {
  PopCube c;
  c.frames.push_back({0, 0, coarse});
  return std::move(map_cube(c, poi_grid, target).frames.front().map);
}

namespace {

nlohmann::json train_config_json(const TrainConfig& c) {
  return {{"iterations", c.iterations}, {"batch", c.batch}, {"lr_hidden", c.lr_hidden}, {"lr_output", c.lr_output},
          {"final_lr_scale", c.final_lr_scale}, {"frozen_bn_share", c.frozen_bn_share},
          {"patch", c.patch},           {"stride", c.stride}, {"seed", c.seed}};
}

TrainConfig train_config_from(const nlohmann::json& j) {
  TrainConfig c;
  c.iterations = j.at("iterations");
  c.batch = j.at("batch");
  c.lr_hidden = j.at("lr_hidden");
  c.lr_output = j.at("lr_output");
  c.final_lr_scale = j.value("final_lr_scale", 1.0);
  c.frozen_bn_share = j.value("frozen_bn_share", 0.0);
  c.patch = j.at("patch");
  c.stride = j.at("stride");
  c.seed = j.at("seed");
  return c;
}

}  // namespace

void StackedMapper::save(const std::filesystem::path& dir) const {
  if (!trained()) throw StateError("cannot save an untrained stacked mapper");
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["kind"] = "stacked_srcnn";
  manifest["pois"] = pois.signature();
  manifest["seed"] = seed;
  for (std::size_t u = 0; u < units.size(); ++u) {
    const SrcnnUnit& unit = units[u];
    const std::string file = "unit" + std::to_string(u) + ".ndt";
    unit.save(dir / file);
    const Architecture& a = unit.architecture();
    manifest["units"].push_back({{"checkpoint", file},
                                 {"input_level", level_name(unit.input_level())},
                                 {"target_level", level_name(unit.target_level())},
                                 {"pois", unit.pois().signature()},
                                 {"architecture", {a.filters1, a.filters2, a.kernel1, a.kernel2, a.kernel3}},
                                 {"residual", a.residual},
                                 {"input_mean", unit.input_stats.mean},
                                 {"input_std", unit.input_stats.std},
                                 {"target_mean", unit.target_mean},
                                 {"target_std", unit.target_std},
                                 {"train", train_config_json(unit.train_config)}});
  }
  std::ofstream out(dir / "mapper.json");
  out << manifest.dump(2) << '\n';
  if (!out) throw InputError("cannot write " + (dir / "mapper.json").string());
}

StackedMapper StackedMapper::load(const std::filesystem::path& dir) {
  std::ifstream in(dir / "mapper.json");
  if (!in) throw InputError("missing mapper manifest in " + dir.string());
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw InputError("bad mapper manifest: " + std::string(e.what()));
  }
  StackedMapper m;
  m.pois = PoiSubset::parse(manifest.at("pois").get<std::string>());
  m.seed = manifest.at("seed");
  const auto& units = manifest.at("units");
  if (units.size() != m.units.size()) throw InputError("mapper manifest must list 4 units");
  for (std::size_t u = 0; u < m.units.size(); ++u) {
    const auto& j = units[u];
    const auto a = j.at("architecture").get<std::vector<int>>();
    SrcnnUnit unit({a.at(0), a.at(1), a.at(2), a.at(3), a.at(4), j.value("residual", false)},
                   PoiSubset::parse(j.at("pois").get<std::string>()),
                   parse_level(j.at("input_level").get<std::string>()),
                   parse_level(j.at("target_level").get<std::string>()), 0);
    unit.load(dir / j.at("checkpoint").get<std::string>());
    unit.input_stats.mean = j.at("input_mean").get<std::vector<double>>();
    unit.input_stats.std = j.at("input_std").get<std::vector<double>>();
    unit.target_mean = j.at("target_mean");
    unit.target_std = j.at("target_std");
    unit.train_config = train_config_from(j.at("train"));
    m.units[u] = std::move(unit);
  }
  return m;
}

StackedMapper train_stacked(const PopCube& fine_truth, const Ladder& ladder, const PoiGrid& pois,
                            const StackConfig& config, StackReport* report) {
  const auto streams = make_intermediate_targets(fine_truth, ladder);
  StackedMapper mapper;
  mapper.pois = config.pois;
  mapper.seed = config.seed;
  for (std::size_t u = 0; u < mapper.units.size(); ++u) {
    const std::uint64_t unit_seed = config.seed * 1000003ULL + u;
    mapper.units[u] =
        SrcnnUnit(config.arch, config.pois, streams[u].input_level, streams[u].target_level, unit_seed);
    TrainConfig tc = u < 2 ? config.stage1 : config.stage2;
    tc.seed = unit_seed ^ 0x5bd1e995ULL;
    TrainReport r = mapper.units[u].train(streams[u], pois, tc);
    if (report) report->units[u] = std::move(r);
  }
  return mapper;
}

}  // namespace popmap::srcnn
