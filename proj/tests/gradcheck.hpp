#pragma once
// Central finite-difference oracle for the autodiff tests.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "popmap/tensor.hpp"

namespace popmap::testing {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

/// Relative error |a - n| / max(|a|, |n|, floor). The floor keeps entries whose
/// true gradient is ~0 from turning FD round-off into a huge ratio.
inline double rel_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares d loss / d inputs from backward() against central differences with step h.
inline GradCheckResult grad_check(std::vector<nd::Tensor> inputs, const std::function<nd::Tensor()>& loss_fn,
                                  double h = 1e-5) {
  for (auto& t : inputs) t.zero_grad();
  nd::Tensor loss = loss_fn();
  loss.backward();
  std::vector<std::vector<double>> analytic;
  for (auto& t : inputs) {
    analytic.emplace_back(t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end())
                                       : std::vector<double>(t.numel(), 0.0));
  }
  GradCheckResult result;
  nd::NoGradGuard guard;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto data = inputs[k].data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + h;
      const double up = loss_fn().item();
      data[i] = saved - h;
      const double down = loss_fn().item();
      data[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      result.max_rel_error = std::max(result.max_rel_error, rel_error(analytic[k][i], numeric));
      ++result.checked;
    }
  }
  return result;
}

inline nd::Tensor random_tensor(nd::Shape shape, std::mt19937_64& rng, bool requires_grad = true,
                                double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(nd::numel(shape));
  for (double& x : v) x = dist(rng);
  return nd::Tensor::from(std::move(shape), std::move(v), requires_grad);
}

}  // namespace popmap::testing
