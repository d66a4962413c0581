#include "popmap/baselines.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <optional>
#include <random>
#include <thread>

#include "popmap/error.hpp"
#include "popmap/nn.hpp"

namespace popmap::baselines {

double forward_transform(double x, bool log_transform) { return log_transform ? std::log1p(x) : x; }

double inverse_transform(double y, bool log_transform) {
  return std::max(0.0, log_transform ? std::expm1(y) : y);
}

PixelDataset build_pixel_dataset(const PopCube& coarse, const PopCube& fine, const PoiGrid& pois,
                                 bool log_transform) {
  if (!fine.frames.empty()) require_aligned(coarse, fine, "build_pixel_dataset");
  PixelDataset d;
  d.log_transform = log_transform;
  for (std::size_t f = 0; f < coarse.frames.size(); ++f) {
    const GridMap& c = coarse.frames[f].map;
    if (pois.height != c.height || pois.width != c.width) {
      throw InputError("build_pixel_dataset: PoI grid does not match the cube");
    }
    for (std::size_t i = 0; i < c.values.size(); ++i) {
      if (!c.mask[i]) continue;
      d.features.push_back(forward_transform(c.values[i], log_transform));
      for (const auto& layer : pois.counts) d.features.push_back(layer[i]);
      d.targets.push_back(fine.frames.empty() ? 0.0 : forward_transform(fine.frames[f].map.values[i], log_transform));
      d.frame.push_back(f);
      d.cell.push_back(i);
    }
  }
  return d;
}

std::string_view method_name(Method m) {
  switch (m) {
    case Method::lasso:
      return "lasso";
    case Method::tree:
      return "tree";
    case Method::forest:
      return "forest";
    case Method::mlp:
      return "mlp";
  }
  return "unknown";
}

Method parse_method(std::string_view name) {
  for (Method m : {Method::lasso, Method::tree, Method::forest, Method::mlp}) {
    if (method_name(m) == name) return m;
  }
  throw ConfigError("unknown baseline method '" + std::string(name) + "'");
}

namespace {

struct Scaler {
  std::vector<double> mean, scale;

  static Scaler fit(const PixelDataset& d) {
    Scaler s;
    s.mean.assign(d.width, 0.0);
    s.scale.assign(d.width, 0.0);
    const double n = static_cast<double>(d.rows());
    for (std::size_t r = 0; r < d.rows(); ++r) {
      for (std::size_t j = 0; j < d.width; ++j) s.mean[j] += d.row(r)[j] / n;
    }
    for (std::size_t r = 0; r < d.rows(); ++r) {
      for (std::size_t j = 0; j < d.width; ++j) {
        const double v = d.row(r)[j] - s.mean[j];
        s.scale[j] += v * v / n;
      }
    }
    for (double& v : s.scale) v = std::sqrt(v);
    return s;
  }
  double apply(const double* row, std::size_t j) const {
    return scale[j] > 0.0 ? (row[j] - mean[j]) / scale[j] : 0.0;
  }
};

class Lasso final : public Regressor {
 public:
  Lasso(const PixelDataset& d, double lambda, int sweeps) : scaler_(Scaler::fit(d)) {
    const std::size_t n = d.rows(), p = d.width;
    intercept_ = std::accumulate(d.targets.begin(), d.targets.end(), 0.0) / static_cast<double>(n);
    std::vector<double> x(n * p);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t j = 0; j < p; ++j) x[j * n + r] = scaler_.apply(d.row(r), j);
    }
    std::vector<double> resid(n);
    for (std::size_t r = 0; r < n; ++r) resid[r] = d.targets[r] - intercept_;
    beta_.assign(p, 0.0);
    for (int sweep = 0; sweep < sweeps; ++sweep) {
      double max_change = 0.0;
      for (std::size_t j = 0; j < p; ++j) {
        const double* xj = x.data() + j * n;
        double sq = 0.0, rho = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
          sq += xj[r] * xj[r];
          rho += xj[r] * (resid[r] + xj[r] * beta_[j]);
        }
        sq /= static_cast<double>(n);
        rho /= static_cast<double>(n);
        if (sq == 0.0) continue;
        const double shrunk = std::copysign(std::max(std::abs(rho) - lambda, 0.0), rho) / sq;
        const double delta = shrunk - beta_[j];
        if (delta != 0.0) {
          for (std::size_t r = 0; r < n; ++r) resid[r] -= delta * xj[r];
          beta_[j] = shrunk;
        }
        max_change = std::max(max_change, std::abs(delta));
      }
      if (max_change < 1e-10) break;
    }
  }

  double predict(const double* row) const override {
    double y = intercept_;
    for (std::size_t j = 0; j < beta_.size(); ++j) y += beta_[j] * scaler_.apply(row, j);
    return y;
  }

 private:
  Scaler scaler_;
  double intercept_ = 0.0;
  std::vector<double> beta_;
};

class Tree final : public Regressor {
 public:
  struct Node {
    int feature = -1;  // -1 = leaf
    double threshold = 0.0;
    int left = -1, right = -1;
    double value = 0.0;
  };

  Tree(const PixelDataset& d, std::vector<std::size_t> rows, int max_depth, int min_leaf, std::size_t mtry,
       std::uint64_t seed)
      : data_(&d), max_depth_(max_depth), min_leaf_(std::max(1, min_leaf)), mtry_(mtry), rng_(seed) {
    build(rows, 0, rows.size(), 0);
    data_ = nullptr;
  }

  double predict(const double* row) const override {
    int n = 0;
    while (nodes_[n].feature >= 0) {
      n = row[nodes_[n].feature] <= nodes_[n].threshold ? nodes_[n].left : nodes_[n].right;
    }
    return nodes_[n].value;
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  int build(std::vector<std::size_t>& rows, std::size_t begin, std::size_t end, int depth) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    const std::size_t n = end - begin;
    double sum = 0.0;
    for (std::size_t i = begin; i < end; ++i) sum += data_->targets[rows[i]];
    nodes_[id].value = sum / static_cast<double>(n);
    if (depth >= max_depth_ || n < 2 * static_cast<std::size_t>(min_leaf_)) return id;

    std::vector<std::size_t> features(data_->width);
    std::iota(features.begin(), features.end(), 0);
    if (mtry_ < features.size()) {
      std::shuffle(features.begin(), features.end(), rng_);
      features.resize(mtry_);
      std::sort(features.begin(), features.end());
    }
    const double parent_score = sum * sum / static_cast<double>(n);
    double best_gain = 1e-12 * std::max(1.0, std::abs(parent_score));
    int best_feature = -1;
    double best_threshold = 0.0;
    std::vector<std::pair<double, std::size_t>> order(n);
    for (std::size_t f : features) {
      for (std::size_t i = 0; i < n; ++i) order[i] = {data_->row(rows[begin + i])[f], rows[begin + i]};
      std::sort(order.begin(), order.end());
      if (order.front().first == order.back().first) continue;
      double left = 0.0;
      for (std::size_t i = 0; i + 1 < n; ++i) {
        left += data_->targets[order[i].second];
        const std::size_t nl = i + 1, nr = n - nl;
        if (order[i].first == order[i + 1].first) continue;
        if (nl < static_cast<std::size_t>(min_leaf_) || nr < static_cast<std::size_t>(min_leaf_)) continue;
        const double right = sum - left;
        const double gain = left * left / static_cast<double>(nl) + right * right / static_cast<double>(nr) -
                            parent_score;
        if (gain > best_gain) {
          best_gain = gain;
          best_feature = static_cast<int>(f);
          best_threshold = 0.5 * (order[i].first + order[i + 1].first);
        }
      }
    }
    if (best_feature < 0) return id;

    const auto mid = std::partition(rows.begin() + static_cast<std::ptrdiff_t>(begin),
                                    rows.begin() + static_cast<std::ptrdiff_t>(end), [&](std::size_t r) {
                                      return data_->row(r)[best_feature] <= best_threshold;
                                    });
    const std::size_t split = static_cast<std::size_t>(mid - rows.begin());
    const int l = build(rows, begin, split, depth + 1);
    const int r = build(rows, split, end, depth + 1);
    nodes_[id].feature = best_feature;
    nodes_[id].threshold = best_threshold;
    nodes_[id].left = l;
    nodes_[id].right = r;
    return id;
  }

  const PixelDataset* data_;
  int max_depth_;
  int min_leaf_;
  std::size_t mtry_;
  std::mt19937_64 rng_;
  std::vector<Node> nodes_;
};

class Forest final : public Regressor {
 public:
  Forest(const PixelDataset& d, const Hyper& hp) {
    std::mt19937_64 rng(hp.seed);
    const std::size_t n = d.rows();
    const std::size_t sample = std::min(n, hp.forest_bootstrap_cap);
    const std::size_t mtry = std::max<std::size_t>(1, static_cast<std::size_t>(std::sqrt(static_cast<double>(d.width))));
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    const auto count = static_cast<std::size_t>(hp.forest_trees);
    std::vector<std::vector<std::size_t>> rows(count, std::vector<std::size_t>(sample));
    std::vector<std::uint64_t> seeds(count);
    for (std::size_t t = 0; t < count; ++t) {
      for (auto& r : rows[t]) r = pick(rng);
      seeds[t] = rng();
    }
    // trees are independent given their rows and seed, so the worker count does not change the result
    std::vector<std::optional<Tree>> built(count);
    std::atomic<std::size_t> next{0};
    auto work = [&] {
      for (std::size_t t = next++; t < count; t = next++) {
        built[t].emplace(d, std::move(rows[t]), hp.forest_max_depth, hp.forest_min_leaf, mtry, seeds[t]);
      }
    };
    {
      std::vector<std::jthread> pool;
      for (int w = 1; w < std::min<int>(hp.threads, hp.forest_trees); ++w) pool.emplace_back(work);
      work();
    }
    trees_.reserve(count);
    for (auto& t : built) trees_.push_back(std::move(*t));
  }

  double predict(const double* row) const override {
    double s = 0.0;
    for (const Tree& t : trees_) s += t.predict(row);
    return s / static_cast<double>(trees_.size());
  }

 private:
  std::vector<Tree> trees_;
};

class Mlp final : public Regressor {
 public:
  Mlp(const PixelDataset& d, const Hyper& hp) : scaler_(Scaler::fit(d)) {
    const std::size_t n = d.rows(), p = d.width, h = static_cast<std::size_t>(hp.mlp_hidden);
    y_mean_ = std::accumulate(d.targets.begin(), d.targets.end(), 0.0) / static_cast<double>(n);
    double v = 0.0;
    for (double t : d.targets) v += (t - y_mean_) * (t - y_mean_);
    y_scale_ = std::max(std::sqrt(v / static_cast<double>(n)), 1e-12);

    nd::Rng rng(hp.seed);
    l1_ = nd::Linear(p, h, true, rng);
    l2_ = nd::Linear(h, h, true, rng);
    l3_ = nd::Linear(h, 1, true, rng);
    nd::Adam adam({{{l1_.weight, l1_.bias, l2_.weight, l2_.bias, l3_.weight, l3_.bias}, hp.mlp_lr}});
    const std::size_t b = static_cast<std::size_t>(hp.mlp_batch);
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    std::vector<double> xb(b * p), yb(b);
    for (int it = 0; it < hp.mlp_iterations; ++it) {
      for (std::size_t s = 0; s < b; ++s) {
        const std::size_t r = pick(rng);
        for (std::size_t j = 0; j < p; ++j) xb[s * p + j] = scaler_.apply(d.row(r), j);
        yb[s] = (d.targets[r] - y_mean_) / y_scale_;
      }
      nd::Tensor out = l3_(nd::relu(l2_(nd::relu(l1_(nd::Tensor::from({b, p}, xb))))));
      nd::Tensor loss = nd::mse_loss(out, nd::Tensor::from({b, 1}, yb));
      if (!std::isfinite(loss.item())) throw TrainingDiverged("mlp baseline diverged at iteration " + std::to_string(it));
      loss.backward();
      adam.step();
      adam.zero_grad();
    }
  }

  double predict(const double* row) const override {
    const std::size_t p = scaler_.mean.size();
    const auto dense = [](const nd::Linear& l, const std::vector<double>& x, bool act) {
      const std::size_t out = l.weight.dim(0), in = l.weight.dim(1);
      std::vector<double> y(out);
      for (std::size_t o = 0; o < out; ++o) {
        double s = l.bias.data()[o];
        for (std::size_t i = 0; i < in; ++i) s += l.weight.data()[o * in + i] * x[i];
        y[o] = act ? std::max(s, 0.0) : s;
      }
      return y;
    };
    std::vector<double> x(p);
    for (std::size_t j = 0; j < p; ++j) x[j] = scaler_.apply(row, j);
    return dense(l3_, dense(l2_, dense(l1_, x, true), true), false)[0] * y_scale_ + y_mean_;
  }

 private:
  Scaler scaler_;
  double y_mean_ = 0.0, y_scale_ = 1.0;
  nd::Linear l1_, l2_, l3_;
};

}  // namespace

std::unique_ptr<Regressor> fit(Method method, const PixelDataset& data, const Hyper& hp) {
  if (data.rows() == 0) throw InputError("fit: empty dataset");
  for (double v : data.features) {
    if (!std::isfinite(v)) throw InputError("fit: non-finite feature");
  }
  switch (method) {
    case Method::lasso:
      if (hp.lasso_lambda < 0.0) throw ConfigError("lasso lambda must be non-negative");
      return std::make_unique<Lasso>(data, hp.lasso_lambda, hp.lasso_sweeps);
    case Method::tree: {
      std::vector<std::size_t> rows(data.rows());
      std::iota(rows.begin(), rows.end(), 0);
      return std::make_unique<Tree>(data, std::move(rows), hp.tree_max_depth, hp.tree_min_leaf, data.width, hp.seed);
    }
    case Method::forest:
      if (hp.forest_trees < 1) throw ConfigError("forest needs at least one tree");
      if (hp.threads < 1) throw ConfigError("threads must be positive");
      return std::make_unique<Forest>(data, hp);
    case Method::mlp:
      return std::make_unique<Mlp>(data, hp);
  }
  throw ConfigError("unknown method");
}

std::vector<double> predict(const Regressor& model, const PixelDataset& data) {
  std::vector<double> out(data.rows());
  for (std::size_t r = 0; r < data.rows(); ++r) out[r] = inverse_transform(model.predict(data.row(r)), data.log_transform);
  return out;
}

PopCube fit_predict(Method method, const PixelDataset& train, const PixelDataset& test, const PopCube& like,
                    const Hyper& hp) {
  const auto model = fit(method, train, hp);
  const auto values = predict(*model, test);
  PopCube out;
  for (const Frame& f : like.frames) {
    out.frames.push_back({f.day, f.hour, GridMap::zeros(f.map.height, f.map.width, Level::fine, f.map.mask)});
  }
  for (std::size_t r = 0; r < test.rows(); ++r) out.frames.at(test.frame[r]).map.values.at(test.cell[r]) = values[r];
  return out;
}

}  // namespace popmap::baselines
