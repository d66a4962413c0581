#include "popmap/temporal.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "popmap/error.hpp"

namespace popmap::temporal {

using nd::Tensor;

TimeEmbedding::TimeEmbedding(std::size_t width, nd::Rng& rng) : table(kHours, width, false, rng) {}

Tensor TimeEmbedding::one_hot(int hour) {
  if (hour < 0 || hour >= kHours) throw InputError("hour " + std::to_string(hour) + " is outside 0..23");
  std::vector<double> v(kHours, 0.0);
  v[static_cast<std::size_t>(hour)] = 1.0;
  return Tensor::from({static_cast<std::size_t>(kHours)}, std::move(v));
}

Tensor TimeEmbedding::embed(int hour) const { return table(one_hot(hour)); }

Tensor TimeEmbedding::embed_batch(int hour, std::size_t batch) const {
  if (hour < 0 || hour >= kHours) throw InputError("hour " + std::to_string(hour) + " is outside 0..23");
  std::vector<double> v(batch * kHours, 0.0);
  for (std::size_t b = 0; b < batch; ++b) v[b * kHours + static_cast<std::size_t>(hour)] = 1.0;
  return table(Tensor::from({batch, static_cast<std::size_t>(kHours)}, std::move(v)));
}

RegionSeries RegionSeries::full(std::size_t cell, int day, const std::array<double, kHours>& values) {
  RegionSeries s;
  s.cell = cell;
  s.day = day;
  s.values = values;
  s.known.fill(1);
  return s;
}

TemporalModel::TemporalModel(const TemporalConfig& config) : config_(config) {
  if (config.embedding < 1 || config.hidden < 1) throw ConfigError("temporal model sizes must be positive");
  nd::Rng rng(config.seed);
  embedding_ = TimeEmbedding(static_cast<std::size_t>(config.embedding), rng);
  const std::size_t in = 1 + (config.time_embedding ? static_cast<std::size_t>(config.embedding) : 0);
  cell_ = nd::LstmCell(in, static_cast<std::size_t>(config.hidden), rng);
  head_ = nd::Linear(static_cast<std::size_t>(config.hidden), 1, true, rng);
}

std::size_t TemporalModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors()) n += t.tensor.numel();
  return n;
}

Tensor TemporalModel::forward(const Tensor& values, const std::vector<std::uint8_t>& known) const {
  if (values.rank() != 2 || values.dim(1) != kHours || known.size() != values.numel()) {
    throw ShapeError("temporal forward expects [B,24] values with matching known flags, got " +
                     nd::to_string(values.shape()));
  }
  const std::size_t b = values.dim(0);
  const std::size_t hidden = static_cast<std::size_t>(config_.hidden);
  Tensor h = Tensor::zeros({b, hidden});
  Tensor c = Tensor::zeros({b, hidden});
  std::vector<Tensor> outputs;
  outputs.reserve(kHours);
  const auto v = values.data();
  for (int t = 0; t < kHours; ++t) {
    std::vector<double> step(b);
    for (std::size_t r = 0; r < b; ++r) {
      const std::size_t k = r * kHours + static_cast<std::size_t>(t);
      step[r] = known[k] ? v[k] : 0.0;
    }
    Tensor x = Tensor::from({b, 1}, std::move(step));
    if (config_.time_embedding) x = nd::concat_last({x, embedding_.embed_batch(t, b)});
    nd::LstmState s = nd::lstm_cell(x, h, c, cell_);
    h = s.h;
    c = s.c;
    outputs.push_back(head_(h));
  }
  return nd::concat_last(outputs);
}

namespace {

// Mean of the known input values.
double series_mean(const RegionSeries& s) {
  double sum = 0.0;
  int n = 0;
  for (int t = 0; t < kHours; ++t) {
    if (!s.known[t]) continue;
    sum += s.values[t];
    ++n;
  }
  return n > 0 ? sum / n : 0.0;
}

}  // namespace

TemporalReport TemporalModel::train(const std::vector<RegionSeries>& inputs,
                                    const std::vector<RegionSeries>& targets) {
  if (inputs.empty() || inputs.size() != targets.size()) {
    throw InputError("train_temporal: need matching, non-empty input and target series");
  }
  if (config_.iterations < 1 || config_.batch < 1 || !(config_.lr > 0.0)) {
    throw ConfigError("train_temporal: iterations, batch and lr must be positive");
  }
  if (config_.mask_rate < 0.0 || config_.mask_rate >= 1.0) throw ConfigError("train_temporal: mask_rate must lie in [0,1)");
  const auto start = std::chrono::steady_clock::now();
  std::vector<std::size_t> usable;
  std::vector<double> scale(inputs.size(), 0.0);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (inputs[i].cell != targets[i].cell || inputs[i].day != targets[i].day) {
      throw InputError("train_temporal: input and target series are not aligned");
    }
    scale[i] = series_mean(inputs[i]);
    if (scale[i] > 0.0) usable.push_back(i);
  }
  if (usable.empty()) throw InputError("train_temporal: every input series is zero");
  double level = 0.0;
  for (std::size_t i : usable) level += scale[i];
  level /= static_cast<double>(usable.size());
  scale_floor_ = config_.scale_floor * level;
  for (double& s : scale) s = std::max(s, scale_floor_);

  TemporalReport report;
  report.series = usable.size();
  std::vector<nd::Tensor> params;
  for (const auto& t : tensors()) params.push_back(t.tensor);
  nd::Adam adam({{params, config_.lr}});
  nd::Rng rng(config_.seed ^ 0x2545F4914F6CDD1DULL);
  std::uniform_int_distribution<std::size_t> pick(0, usable.size() - 1);
  std::uniform_real_distribution<double> drop(0.0, 1.0);
  const std::size_t b = static_cast<std::size_t>(config_.batch);
  std::vector<double> xb(b * kHours), yb(b * kHours), wb(b * kHours), weight(b);
  std::vector<std::uint8_t> kb(b * kHours);
  for (int it = 0; it < config_.iterations; ++it) {
    for (std::size_t r = 0; r < b; ++r) {
      const std::size_t i = usable[pick(rng)];
      weight[r] = std::pow(scale[i] / level, config_.loss_weight_power);
      for (int t = 0; t < kHours; ++t) {
        const std::size_t k = r * kHours + static_cast<std::size_t>(t);
        xb[k] = inputs[i].values[t] / scale[i];
        kb[k] = inputs[i].known[t] && !(config_.mask_rate > 0.0 && drop(rng) < config_.mask_rate);
        yb[k] = targets[i].values[t] / scale[i];
      }
    }
    double wsum = 0.0;
    for (std::size_t r = 0; r < b; ++r) wsum += weight[r];
    for (std::size_t r = 0; r < b; ++r) {
      const double w = std::sqrt(weight[r] * static_cast<double>(b) / wsum);
      for (int t = 0; t < kHours; ++t) {
        wb[r * kHours + static_cast<std::size_t>(t)] = w;
        yb[r * kHours + static_cast<std::size_t>(t)] *= w;
      }
    }
    const Tensor wt = Tensor::from({b, static_cast<std::size_t>(kHours)}, wb);
    Tensor loss = nd::mse_loss(nd::mul(forward(Tensor::from({b, static_cast<std::size_t>(kHours)}, xb), kb), wt),
                               Tensor::from({b, static_cast<std::size_t>(kHours)}, yb));
    const double value = loss.item();
    if (!std::isfinite(value)) {
      std::ostringstream msg;
      msg << "temporal model diverged at iteration " << it << " (lr " << config_.lr << ", hidden " << config_.hidden
          << ")";
      throw TrainingDiverged(msg.str());
    }
    report.loss_trace.push_back(value);
    loss.backward();
    adam.step();
    adam.zero_grad();
  }
  trained_ = true;
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

std::vector<std::array<double, kHours>> TemporalModel::smooth(const std::vector<RegionSeries>& series) const {
  if (!trained_) throw StateError("temporal model used before training");
  nd::NoGradGuard guard;
  std::vector<std::array<double, kHours>> out(series.size());
  constexpr std::size_t kChunk = 256;
  for (std::size_t s0 = 0; s0 < series.size(); s0 += kChunk) {
    const std::size_t n = std::min(kChunk, series.size() - s0);
    std::vector<double> xb(n * kHours);
    std::vector<std::uint8_t> kb(n * kHours);
    std::vector<double> scale(n);
    for (std::size_t r = 0; r < n; ++r) {
      const RegionSeries& s = series[s0 + r];
      scale[r] = std::max(series_mean(s), scale_floor_);
      for (int t = 0; t < kHours; ++t) {
        const std::size_t k = r * kHours + static_cast<std::size_t>(t);
        xb[k] = scale[r] > 0.0 ? s.values[t] / scale[r] : 0.0;
        kb[k] = s.known[t];
      }
    }
    const Tensor y = forward(Tensor::from({n, static_cast<std::size_t>(kHours)}, xb), kb);
    const auto yv = y.data();
    for (std::size_t r = 0; r < n; ++r) {
      for (int t = 0; t < kHours; ++t) {
        out[s0 + r][t] = std::max(0.0, yv[r * kHours + static_cast<std::size_t>(t)] * scale[r]);
      }
    }
  }
  return out;
}

std::array<double, kHours> TemporalModel::smooth_series(const RegionSeries& series) const {
  return smooth(std::vector<RegionSeries>{series}).front();
}

std::vector<nd::NamedTensor> TemporalModel::tensors() const {
  std::vector<nd::NamedTensor> out;
  if (config_.time_embedding) out.push_back({"embedding.weight", embedding_.table.weight});
  out.push_back({"lstm.w_ih", cell_.w_ih});
  out.push_back({"lstm.w_hh", cell_.w_hh});
  out.push_back({"lstm.bias", cell_.bias});
  out.push_back({"head.weight", head_.weight});
  out.push_back({"head.bias", head_.bias});
  return out;
}

void TemporalModel::save(const std::filesystem::path& dir) const {
  if (!trained_) throw StateError("cannot save an untrained temporal model");
  std::filesystem::create_directories(dir);
  nd::save_checkpoint(dir / "temporal.ndt", tensors());
  nlohmann::json manifest = {{"embedding", config_.embedding},
                             {"hidden", config_.hidden},
                             {"time_embedding", config_.time_embedding},
                             {"iterations", config_.iterations},
                             {"batch", config_.batch},
                             {"lr", config_.lr},
                             {"seed", config_.seed},
                             {"scaling", "per-series mean"},
                             {"scale_floor", config_.scale_floor},
                             {"loss_weight_power", config_.loss_weight_power},
                             {"mask_rate", config_.mask_rate},
                             {"scale_floor_value", scale_floor_},
                             {"checkpoint", "temporal.ndt"}};
  std::ofstream out(dir / "temporal.json");
  out << manifest.dump(2) << "\n";
  if (!out) throw InputError("cannot write " + (dir / "temporal.json").string());
}

TemporalModel TemporalModel::load(const std::filesystem::path& dir) {
  std::ifstream in(dir / "temporal.json");
  if (!in) throw InputError("missing temporal manifest in " + dir.string());
  TemporalConfig c;
  std::string checkpoint;
  double floor = 0.0;
  try {
    nlohmann::json j;
    in >> j;
    c.embedding = j.at("embedding").get<int>();
    c.hidden = j.at("hidden").get<int>();
    c.time_embedding = j.at("time_embedding").get<bool>();
    c.iterations = j.at("iterations").get<int>();
    c.batch = j.at("batch").get<int>();
    c.lr = j.at("lr").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.scale_floor = j.at("scale_floor").get<double>();
    c.loss_weight_power = j.at("loss_weight_power").get<double>();
    c.mask_rate = j.at("mask_rate").get<double>();
    floor = j.at("scale_floor_value").get<double>();
    checkpoint = j.at("checkpoint").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw InputError("bad temporal manifest in " + dir.string() + ": " + e.what());
  }
  TemporalModel model(c);
  nd::restore_into(nd::load_checkpoint(dir / checkpoint), model.tensors());
  model.scale_floor_ = floor;
  model.trained_ = true;
  return model;
}

std::vector<RegionSeries> extract_series(const PopCube& cube) {
  if (cube.frames.empty() || cube.frames.size() % kHours != 0) {
    throw InputError("temporal series need whole days of 24 hourly frames, got " +
                     std::to_string(cube.frames.size()) + " frames");
  }
  const Mask& mask = cube.mask();
  std::vector<RegionSeries> out;
  for (std::size_t d0 = 0; d0 < cube.frames.size(); d0 += kHours) {
    const int day = cube.frames[d0].day;
    for (int t = 0; t < kHours; ++t) {
      const Frame& f = cube.frames[d0 + static_cast<std::size_t>(t)];
      if (f.day != day || f.hour != t) {
        throw InputError("day " + std::to_string(day) + " does not hold hours 0..23 in order");
      }
    }
    for (std::size_t cell = 0; cell < mask.size(); ++cell) {
      if (!mask[cell]) continue;
      std::array<double, kHours> v{};
      for (int t = 0; t < kHours; ++t) v[t] = cube.frames[d0 + static_cast<std::size_t>(t)].map.values[cell];
      out.push_back(RegionSeries::full(cell, day, v));
    }
  }
  return out;
}

TemporalModel train_temporal(const PopCube& static_outputs, const PopCube& truth, const TemporalConfig& config,
                             TemporalReport* report) {
  require_aligned(static_outputs, truth, "train_temporal");
  TemporalModel model(config);
  TemporalReport r = model.train(extract_series(static_outputs), extract_series(truth));
  if (report != nullptr) *report = std::move(r);
  return model;
}

PopCube smooth_cube(const PopCube& static_cube, const TemporalModel& model) {
  const auto series = extract_series(static_cube);
  const auto smoothed = model.smooth(series);
  PopCube out = static_cube;
  for (Frame& f : out.frames) std::fill(f.map.values.begin(), f.map.values.end(), 0.0);
  std::size_t day_index = 0;
  int current_day = series.empty() ? 0 : series.front().day;
  for (std::size_t i = 0; i < series.size(); ++i) {
    if (series[i].day != current_day) {
      current_day = series[i].day;
      ++day_index;
    }
    for (int t = 0; t < kHours; ++t) {
      out.frames[day_index * kHours + static_cast<std::size_t>(t)].map.values[series[i].cell] = smoothed[i][t];
    }
  }
  return out;
}

}  // namespace popmap::temporal
