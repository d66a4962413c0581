#include "popmap/nn.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "popmap/error.hpp"

namespace popmap::nd {

namespace {

Tensor uniform(Shape shape, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> values(numel(shape));
  for (double& v : values) v = dist(rng);
  return Tensor::from(std::move(shape), std::move(values), true);
}

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void write_u64(std::ostream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }

bool read_u64(std::istream& in, std::uint64_t& v) {
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  return static_cast<bool>(in);
}

}  // namespace

Tensor he_normal(Shape shape, std::size_t fan_in, Rng& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  std::vector<double> values(numel(shape));
  for (double& v : values) v = dist(rng);
  return Tensor::from(std::move(shape), std::move(values), true);
}

Conv2d::Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, Rng& rng)
    : weight(he_normal({out_channels, in_channels, kernel, kernel}, in_channels * kernel * kernel, rng)),
      bias(Tensor::zeros({out_channels}, true)) {}

BatchNorm2d::BatchNorm2d(std::size_t channels, double eps_, double momentum_)
    : gamma(Tensor::full({channels}, 1.0, true)),
      beta(Tensor::zeros({channels}, true)),
      eps(eps_),
      momentum(momentum_) {}

Tensor BatchNorm2d::eval(const Tensor& x) const {
  BatchNormStats frozen = stats;
  return batchnorm2d(x, gamma, beta, frozen, false, eps, momentum);
}

Linear::Linear(std::size_t in_features, std::size_t out_features, bool with_bias, Rng& rng)
    : weight(he_normal({out_features, in_features}, in_features, rng)),
      bias(with_bias ? Tensor::zeros({out_features}, true) : Tensor()) {}

LstmCell::LstmCell(std::size_t input_size, std::size_t hidden_size, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden_size));
  w_ih = uniform({4 * hidden_size, input_size}, bound, rng);
  w_hh = uniform({4 * hidden_size, hidden_size}, bound, rng);
  bias = uniform({4 * hidden_size}, bound, rng);
}

LstmState lstm_cell(const Tensor& x, const Tensor& h_prev, const Tensor& c_prev, const LstmCell& params) {
  const std::size_t hidden = params.hidden_size();
  if (h_prev.shape() != c_prev.shape() || h_prev.shape().back() != hidden) {
    throw ShapeError("lstm_cell: state shape " + to_string(h_prev.shape()) + " does not match hidden size " +
                     std::to_string(hidden));
  }
  const Tensor gates = add(linear(x, params.w_ih, params.bias), linear(h_prev, params.w_hh));
  const Tensor in_gate = sigmoid(slice_last(gates, 0, hidden));
  const Tensor forget_gate = sigmoid(slice_last(gates, hidden, hidden));
  const Tensor candidate = tanh(slice_last(gates, 2 * hidden, hidden));
  const Tensor out_gate = sigmoid(slice_last(gates, 3 * hidden, hidden));
  Tensor c = add(mul(forget_gate, c_prev), mul(in_gate, candidate));
  Tensor h = mul(out_gate, tanh(c));
  return {std::move(h), std::move(c)};
}

Adam::Adam(std::vector<Group> groups, double beta1, double beta2, double epsilon) : groups_(std::move(groups)) {
  state_.beta1 = beta1;
  state_.beta2 = beta2;
  state_.epsilon = epsilon;
  for (const Group& g : groups_) {
    if (!(g.lr > 0.0)) {
      throw ConfigError("Adam: learning rate must be positive");
    }
    state_.lr.push_back(g.lr);
    for (const Tensor& p : g.params) {
      state_.first_moment.emplace_back(p.numel(), 0.0);
      state_.second_moment.emplace_back(p.numel(), 0.0);
    }
  }
}

void Adam::set_lr_scale(double scale) {
  if (!(scale > 0.0)) throw ConfigError("Adam: learning-rate scale must be positive");
  for (std::size_t gi = 0; gi < groups_.size(); ++gi) state_.lr[gi] = groups_[gi].lr * scale;
}

void Adam::step() {
  for (const Group& g : groups_) {
    for (const Tensor& p : g.params) {
      if (!p.has_grad()) {
        throw StateError("Adam: parameter of shape " + to_string(p.shape()) + " has no gradient");
      }
    }
  }
  ++state_.step_count;
  const double t = static_cast<double>(state_.step_count);
  const double correction1 = 1.0 - std::pow(state_.beta1, t);
  const double correction2 = 1.0 - std::pow(state_.beta2, t);
  std::size_t slot = 0;
  for (std::size_t gi = 0; gi < groups_.size(); ++gi) {
    const double lr = state_.lr[gi];
    for (Tensor p : groups_[gi].params) {
      auto& m = state_.first_moment[slot];
      auto& v = state_.second_moment[slot];
      ++slot;
      auto data = p.data();
      const auto grad = p.grad();
      for (std::size_t i = 0; i < data.size(); ++i) {
        m[i] = state_.beta1 * m[i] + (1.0 - state_.beta1) * grad[i];
        v[i] = state_.beta2 * v[i] + (1.0 - state_.beta2) * grad[i] * grad[i];
        const double m_hat = m[i] / correction1;
        const double v_hat = v[i] / correction2;
        data[i] -= lr * m_hat / (std::sqrt(v_hat) + state_.epsilon);
      }
    }
  }
}

void Adam::zero_grad() {
  for (Group& g : groups_) {
    for (Tensor& p : g.params) p.zero_grad();
  }
}

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw InputError("cannot write checkpoint " + path.string());
  }
  out.write("NDT1", 4);
  for (const NamedTensor& t : tensors) {
    write_u64(out, t.name.size());
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    write_u64(out, t.tensor.rank());
    for (std::size_t d : t.tensor.shape()) write_u64(out, d);
    out.write(reinterpret_cast<const char*>(t.tensor.data().data()),
              static_cast<std::streamsize>(t.tensor.numel() * sizeof(double)));
  }
  if (!out) {
    throw InputError("failed writing checkpoint " + path.string());
  }
}

std::map<std::string, Tensor> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw InputError("cannot open checkpoint " + path.string());
  }
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "NDT1", 4) != 0) {
    throw InputError("not an NDT1 checkpoint: " + path.string());
  }
  std::map<std::string, Tensor> result;
  std::uint64_t name_len = 0;
  while (read_u64(in, name_len)) {
    if (name_len > 4096) throw InputError("corrupt checkpoint record in " + path.string());
    std::string name(name_len, '\0');
    in.read(name.data(), static_cast<std::streamsize>(name_len));
    std::uint64_t rank = 0;
    if (!in || !read_u64(in, rank) || rank > 8) throw InputError("corrupt checkpoint record in " + path.string());
    Shape shape(rank);
    for (auto& d : shape) {
      std::uint64_t v = 0;
      if (!read_u64(in, v)) throw InputError("truncated checkpoint " + path.string());
      d = v;
    }
    std::vector<double> values(numel(shape));
    in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)));
    if (!in) throw InputError("truncated checkpoint " + path.string());
    result.emplace(std::move(name), Tensor::from(std::move(shape), std::move(values)));
  }
  return result;
}

void restore_into(const std::map<std::string, Tensor>& loaded, const std::vector<NamedTensor>& targets) {
  for (const NamedTensor& t : targets) {
    auto it = loaded.find(t.name);
    if (it == loaded.end()) {
      throw InputError("checkpoint is missing tensor '" + t.name + "'");
    }
    if (it->second.shape() != t.tensor.shape()) {
      throw ShapeError("checkpoint tensor '" + t.name + "' has shape " + to_string(it->second.shape()) +
                       ", expected " + to_string(t.tensor.shape()));
    }
    Tensor dst = t.tensor;
    std::copy(it->second.data().begin(), it->second.data().end(), dst.data().begin());
  }
}

}  // namespace popmap::nd
