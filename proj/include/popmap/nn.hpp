#pragma once
// Layers, the Adam optimizer and the parameter checkpoint format.

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "popmap/ops.hpp"
#include "popmap/tensor.hpp"

namespace popmap::nd {

using Rng = std::mt19937_64;

/// Centered normal initialization with std = sqrt(2 / fan_in).
Tensor he_normal(Shape shape, std::size_t fan_in, Rng& rng);

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, Rng& rng);

  Tensor operator()(const Tensor& x) const { return conv2d(x, weight, bias); }
  std::size_t in_channels() const { return weight.dim(1); }
  std::size_t out_channels() const { return weight.dim(0); }
  std::size_t kernel() const { return weight.dim(2); }

  Tensor weight;
  Tensor bias;
};

class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  explicit BatchNorm2d(std::size_t channels, double eps = 1e-5, double momentum = 0.9);

  Tensor operator()(const Tensor& x, bool train) { return batchnorm2d(x, gamma, beta, stats, train, eps, momentum); }
  /// Eval-mode forward; never touches the running statistics.
  Tensor eval(const Tensor& x) const;

  Tensor gamma;
  Tensor beta;
  BatchNormStats stats;
  double eps = 1e-5;
  double momentum = 0.9;
};

class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in_features, std::size_t out_features, bool with_bias, Rng& rng);

  Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }

  Tensor weight;
  Tensor bias;  // undefined when the layer has no bias
};

/// One LSTM step. Gate rows of the stacked weights are ordered input, forget, candidate, output.
class LstmCell {
 public:
  LstmCell() = default;
  LstmCell(std::size_t input_size, std::size_t hidden_size, Rng& rng);

  std::size_t input_size() const { return w_ih.dim(1); }
  std::size_t hidden_size() const { return w_hh.dim(1); }

  Tensor w_ih;  // [4H, F]
  Tensor w_hh;  // [4H, H]
  Tensor bias;  // [4H]
};

struct LstmState {
  Tensor h;
  Tensor c;
};

/// x [B,F] or [F]; h_prev, c_prev [B,H] or [H].
LstmState lstm_cell(const Tensor& x, const Tensor& h_prev, const Tensor& c_prev, const LstmCell& params);

struct AdamState {
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::int64_t step_count = 0;
  std::vector<double> lr;  // one entry per parameter group
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Bias-corrected Adam with one learning rate per parameter group.
class Adam {
 public:
  struct Group {
    std::vector<Tensor> params;
    double lr;
  };

  explicit Adam(std::vector<Group> groups, double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8);

  /// Applies one update; throws StateError if a parameter has no gradient.
  void step();
  void zero_grad();
  /// Sets every group's rate to its base rate times `scale`.
  void set_lr_scale(double scale);
  const AdamState& state() const { return state_; }

 private:
  std::vector<Group> groups_;
  AdamState state_;
};

/// Writes "NDT1" followed by one record per tensor (u64 name length, name bytes,
/// u64 rank, u64 dims, f64 data), all little-endian.
void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::map<std::string, Tensor> load_checkpoint(const std::filesystem::path& path);
/// Copies values from a loaded checkpoint into existing tensors, checking names and shapes.
void restore_into(const std::map<std::string, Tensor>& loaded, const std::vector<NamedTensor>& targets);

}  // namespace popmap::nd
