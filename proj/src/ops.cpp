#include "popmap/ops.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <memory>

#include "popmap/error.hpp"
#include "popmap/kernels.hpp"

namespace popmap::nd {

using Node = Tensor::Node;
using detail::make_result;

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) {
    throw ShapeError(what);
  }
}

// Unfolds one [C,H,W] image into a [C*k*k, H*W] block (row stride ld) for same-size convolution.
void im2col(const double* img, std::size_t channels, std::size_t height, std::size_t width,
            std::size_t k, double* col, std::size_t ld) {
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k / 2);
  const auto h = static_cast<std::ptrdiff_t>(height);
  const auto w = static_cast<std::ptrdiff_t>(width);
  for (std::size_t c = 0; c < channels; ++c) {
    const double* plane = img + c * height * width;
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        double* row = col + ((c * k + ki) * k + kj) * ld;
        const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ki) - pad;
        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kj) - pad;
        const std::ptrdiff_t x_lo = std::max<std::ptrdiff_t>(0, -dx);
        const std::ptrdiff_t x_hi = std::min<std::ptrdiff_t>(w, w - dx);
        for (std::ptrdiff_t y = 0; y < h; ++y) {
          double* dst = row + y * w;
          const std::ptrdiff_t sy = y + dy;
          if (sy < 0 || sy >= h || x_lo >= x_hi) {
            std::fill(dst, dst + w, 0.0);
            continue;
          }
          std::fill(dst, dst + x_lo, 0.0);
          std::memcpy(dst + x_lo, plane + sy * w + x_lo + dx,
                      static_cast<std::size_t>(x_hi - x_lo) * sizeof(double));
          std::fill(dst + x_hi, dst + w, 0.0);
        }
      }
    }
  }
}

// Adjoint of im2col: scatters a [C*k*k, H*W] block back into an image, accumulating.
void col2im_add(const double* col, std::size_t channels, std::size_t height, std::size_t width,
                std::size_t k, double* img, std::size_t ld) {
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k / 2);
  const auto h = static_cast<std::ptrdiff_t>(height);
  const auto w = static_cast<std::ptrdiff_t>(width);
  for (std::size_t c = 0; c < channels; ++c) {
    double* plane = img + c * height * width;
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        const double* row = col + ((c * k + ki) * k + kj) * ld;
        const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ki) - pad;
        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kj) - pad;
        const std::ptrdiff_t x_lo = std::max<std::ptrdiff_t>(0, -dx);
        const std::ptrdiff_t x_hi = std::min<std::ptrdiff_t>(w, w - dx);
        for (std::ptrdiff_t y = 0; y < h; ++y) {
          const std::ptrdiff_t sy = y + dy;
          if (sy < 0 || sy >= h) {
            continue;
          }
          const double* src = row + y * w;
          double* dst = plane + sy * w + dx;
          for (std::ptrdiff_t x = x_lo; x < x_hi; ++x) {
            dst[x] += src[x];
          }
        }
      }
    }
  }
}

template <typename Fwd, typename Bwd>
Tensor unary(const Tensor& x, Fwd fwd, Bwd dfdx_from_y) {
  std::vector<double> out(x.numel());
  const auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = fwd(in[i]);
  }
  Node* xn = &x.node();
  return make_result(x.shape(), std::move(out), {x}, [xn, dfdx_from_y](Node& self) {
    if (!xn->requires_grad) {
      return;
    }
    auto dx = xn->ensure_grad();
    for (std::size_t i = 0; i < dx.size(); ++i) {
      dx[i] += self.grad[i] * dfdx_from_y(self.data[i], xn->data[i]);
    }
  });
}

// Reusable per-thread buffers; contents are overwritten by every user.
std::vector<double>& scratch(int slot, std::size_t size) {
  thread_local std::array<std::vector<double>, 2> buffers;
  auto& buf = buffers[static_cast<std::size_t>(slot)];
  if (buf.size() < size) buf.resize(size);
  return buf;
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor& bias) {
  require(kernels.rank() == 4, "conv2d: kernels must be [C_out,C_in,k,k], got " + to_string(kernels.shape()));
  const std::size_t c_out = kernels.dim(0);
  const std::size_t c_in = kernels.dim(1);
  const std::size_t k = kernels.dim(2);
  require(kernels.dim(3) == k && k % 2 == 1, "conv2d: kernel must be square with odd size");
  require(input.rank() == 3 || input.rank() == 4, "conv2d: input must be [N,C,H,W] or [C,H,W]");
  const bool batched = input.rank() == 4;
  const std::size_t n = batched ? input.dim(0) : 1;
  const std::size_t off = batched ? 1 : 0;
  require(input.dim(off) == c_in, "conv2d: input has " + std::to_string(input.dim(off)) +
                                      " channels, kernels expect " + std::to_string(c_in));
  const std::size_t height = input.dim(off + 1);
  const std::size_t width = input.dim(off + 2);
  require(bias.defined() && bias.numel() == c_out, "conv2d: bias must have C_out entries");

  const std::size_t kk = c_in * k * k;
  const std::size_t hw = height * width;
  std::vector<double>& col = scratch(0, kk * hw);
  std::vector<double> out(n * c_out * hw);
  const double* x = input.data().data();
  const double* w = kernels.data().data();
  const double* b = bias.data().data();
  for (std::size_t s = 0; s < n; ++s) {
    im2col(x + s * c_in * hw, c_in, height, width, k, col.data(), hw);
    double* o = out.data() + s * c_out * hw;
    kernels::gemm(c_out, hw, kk, {w, kk}, {col.data(), hw}, o, hw, false);
    for (std::size_t co = 0; co < c_out; ++co) {
      double* plane = o + co * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        plane[i] += b[co];
      }
    }
  }

  Shape shape = batched ? Shape{n, c_out, height, width} : Shape{c_out, height, width};
  Node* xn = &input.node();
  Node* wn = &kernels.node();
  Node* bn = &bias.node();
  return make_result(std::move(shape), std::move(out), {input, kernels, bias},
                     [=](Node& self) {
                       std::vector<double>& col = scratch(0, kk * hw);
                       std::vector<double>& dcol = scratch(1, xn->requires_grad ? kk * hw : 0);
                       for (std::size_t s = 0; s < n; ++s) {
                         const double* dout = self.grad.data() + s * c_out * hw;
                         if (bn->requires_grad) {
                           auto db = bn->ensure_grad();
                           for (std::size_t co = 0; co < c_out; ++co) {
                             double acc = 0.0;
                             for (std::size_t i = 0; i < hw; ++i) {
                               acc += dout[co * hw + i];
                             }
                             db[co] += acc;
                           }
                         }
                         if (wn->requires_grad) {
                           im2col(xn->data.data() + s * c_in * hw, c_in, height, width, k, col.data(), hw);
                           kernels::gemm(c_out, kk, hw, {dout, hw}, {col.data(), hw, true},
                                         wn->ensure_grad().data(), kk, true);
                         }
                         if (xn->requires_grad) {
                           kernels::gemm(kk, hw, c_out, {wn->data.data(), kk, true}, {dout, hw},
                                         dcol.data(), hw, false);
                           col2im_add(dcol.data(), c_in, height, width, k,
                                      xn->ensure_grad().data() + s * c_in * hw, hw);
                         }
                       }
                     });
}

Tensor batchnorm2d(const Tensor& input, const Tensor& gamma, const Tensor& beta, BatchNormStats& stats,
                   bool train, double eps, double momentum) {
  require(input.rank() == 4, "batchnorm2d: input must be [N,C,H,W], got " + to_string(input.shape()));
  const std::size_t n = input.dim(0);
  const std::size_t c = input.dim(1);
  const std::size_t hw = input.dim(2) * input.dim(3);
  require(gamma.numel() == c && beta.numel() == c, "batchnorm2d: gamma/beta must have C entries");
  const std::size_t m = n * hw;
  const auto x = input.data();

  std::vector<double> mean(c, 0.0);
  std::vector<double> inv_std(c, 0.0);
  if (train) {
    std::vector<double> var(c, 0.0);
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const double* p = x.data() + (b * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          s += p[i];
        }
      }
      mean[ch] = s / static_cast<double>(m);
      double v = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const double* p = x.data() + (b * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          const double d = p[i] - mean[ch];
          v += d * d;
        }
      }
      var[ch] = v / static_cast<double>(m);
      inv_std[ch] = 1.0 / std::sqrt(var[ch] + eps);
    }
    const double unbias = m > 1 ? static_cast<double>(m) / static_cast<double>(m - 1) : 1.0;
    if (!stats.populated) {
      stats.mean = mean;
      stats.var.resize(c);
      for (std::size_t ch = 0; ch < c; ++ch) {
        stats.var[ch] = var[ch] * unbias;
      }
      stats.populated = true;
    } else {
      require(stats.mean.size() == c, "batchnorm2d: running stats have wrong channel count");
      for (std::size_t ch = 0; ch < c; ++ch) {
        stats.mean[ch] = momentum * stats.mean[ch] + (1.0 - momentum) * mean[ch];
        stats.var[ch] = momentum * stats.var[ch] + (1.0 - momentum) * var[ch] * unbias;
      }
    }
  } else {
    if (!stats.populated) {
      throw StateError("batchnorm2d: eval mode requires populated running statistics");
    }
    require(stats.mean.size() == c, "batchnorm2d: running stats have wrong channel count");
    mean = stats.mean;
    for (std::size_t ch = 0; ch < c; ++ch) {
      inv_std[ch] = 1.0 / std::sqrt(stats.var[ch] + eps);
    }
  }

  auto xhat = std::make_shared<std::vector<double>>(x.size());
  std::vector<double> out(x.size());
  const auto g = gamma.data();
  const auto bt = beta.data();
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t base = (b * c + ch) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        const double xh = (x[base + i] - mean[ch]) * inv_std[ch];
        (*xhat)[base + i] = xh;
        out[base + i] = g[ch] * xh + bt[ch];
      }
    }
  }

  Node* xn = &input.node();
  Node* gn = &gamma.node();
  Node* bn = &beta.node();
  return make_result(input.shape(), std::move(out), {input, gamma, beta},
                     [=](Node& self) {
                       const auto& dy = self.grad;
                       std::vector<double> sum_dy(c, 0.0);
                       std::vector<double> sum_dy_xhat(c, 0.0);
                       for (std::size_t b = 0; b < n; ++b) {
                         for (std::size_t ch = 0; ch < c; ++ch) {
                           const std::size_t base = (b * c + ch) * hw;
                           for (std::size_t i = 0; i < hw; ++i) {
                             sum_dy[ch] += dy[base + i];
                             sum_dy_xhat[ch] += dy[base + i] * (*xhat)[base + i];
                           }
                         }
                       }
                       if (gn->requires_grad) {
                         auto dg = gn->ensure_grad();
                         for (std::size_t ch = 0; ch < c; ++ch) dg[ch] += sum_dy_xhat[ch];
                       }
                       if (bn->requires_grad) {
                         auto db = bn->ensure_grad();
                         for (std::size_t ch = 0; ch < c; ++ch) db[ch] += sum_dy[ch];
                       }
                       if (!xn->requires_grad) {
                         return;
                       }
                       auto dx = xn->ensure_grad();
                       const double inv_m = 1.0 / static_cast<double>(m);
                       for (std::size_t b = 0; b < n; ++b) {
                         for (std::size_t ch = 0; ch < c; ++ch) {
                           const std::size_t base = (b * c + ch) * hw;
                           const double scale = gn->data[ch] * inv_std[ch];
                           for (std::size_t i = 0; i < hw; ++i) {
                             if (train) {
                               dx[base + i] += scale * (dy[base + i] - inv_m * sum_dy[ch] -
                                                        (*xhat)[base + i] * inv_m * sum_dy_xhat[ch]);
                             } else {
                               dx[base + i] += scale * dy[base + i];
                             }
                           }
                         }
                       }
                     });
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  require(weight.rank() == 2, "linear: weight must be [F_out,F_in]");
  const std::size_t f_out = weight.dim(0);
  const std::size_t f_in = weight.dim(1);
  require(input.rank() >= 1 && input.shape().back() == f_in,
          "linear: input " + to_string(input.shape()) + " does not end in F_in=" + std::to_string(f_in));
  require(!bias.defined() || bias.numel() == f_out, "linear: bias must have F_out entries");
  const std::size_t rows = input.numel() / f_in;

  std::vector<double> out(rows * f_out);
  kernels::gemm(rows, f_out, f_in, {input.data().data(), f_in}, {weight.data().data(), f_in, true},
                out.data(), f_out, false);
  if (bias.defined()) {
    const auto b = bias.data();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < f_out; ++j) {
        out[r * f_out + j] += b[j];
      }
    }
  }
  Shape shape = input.shape();
  shape.back() = f_out;
  Node* xn = &input.node();
  Node* wn = &weight.node();
  Node* bn = bias.defined() ? &bias.node() : nullptr;
  return make_result(std::move(shape), std::move(out), {input, weight, bias},
                     [=](Node& self) {
                       const double* dy = self.grad.data();
                       if (xn->requires_grad) {
                         kernels::gemm(rows, f_in, f_out, {dy, f_out}, {wn->data.data(), f_in},
                                       xn->ensure_grad().data(), f_in, true);
                       }
                       if (wn->requires_grad) {
                         kernels::gemm(f_out, f_in, rows, {dy, f_out, true}, {xn->data.data(), f_in},
                                       wn->ensure_grad().data(), f_in, true);
                       }
                       if (bn != nullptr && bn->requires_grad) {
                         auto db = bn->ensure_grad();
                         for (std::size_t r = 0; r < rows; ++r) {
                           for (std::size_t j = 0; j < f_out; ++j) {
                             db[j] += dy[r * f_out + j];
                           }
                         }
                       }
                     });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double, double in) { return in > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double y, double) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary(
      x, [](double v) { return std::tanh(v); }, [](double y, double) { return 1.0 - y * y; });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "add: shapes " + to_string(a.shape()) + " and " + to_string(b.shape()));
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = a.data()[i] + b.data()[i];
  }
  Node* an = &a.node();
  Node* bn = &b.node();
  return make_result(a.shape(), std::move(out), {a, b}, [an, bn](Node& self) {
    for (Node* p : {an, bn}) {
      if (p->requires_grad) {
        kernels::axpy(1.0, self.grad, p->ensure_grad());
      }
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "mul: shapes " + to_string(a.shape()) + " and " + to_string(b.shape()));
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = a.data()[i] * b.data()[i];
  }
  Node* an = &a.node();
  Node* bn = &b.node();
  return make_result(a.shape(), std::move(out), {a, b}, [an, bn](Node& self) {
    if (an->requires_grad) {
      auto da = an->ensure_grad();
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += self.grad[i] * bn->data[i];
    }
    if (bn->requires_grad) {
      auto db = bn->ensure_grad();
      for (std::size_t i = 0; i < db.size(); ++i) db[i] += self.grad[i] * an->data[i];
    }
  });
}

Tensor concat_last(const std::vector<Tensor>& parts) {
  require(!parts.empty(), "concat_last: no inputs");
  const std::size_t rank = parts.front().rank();
  require(rank == 1 || rank == 2, "concat_last: inputs must be rank 1 or 2");
  const std::size_t rows = rank == 2 ? parts.front().dim(0) : 1;
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    require(p.rank() == rank && (rank == 1 || p.dim(0) == rows), "concat_last: mismatched leading dims");
    widths.push_back(p.shape().back());
    total += widths.back();
  }
  std::vector<double> out(rows * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto src = parts[k].data();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(src.data() + r * widths[k], widths[k], out.data() + r * total + offset);
    }
    offset += widths[k];
  }
  std::vector<Node*> nodes;
  for (const Tensor& p : parts) nodes.push_back(&p.node());
  Shape shape = rank == 2 ? Shape{rows, total} : Shape{total};
  return make_result(std::move(shape), std::move(out), parts, [=](Node& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      if (nodes[k]->requires_grad) {
        auto d = nodes[k]->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < widths[k]; ++j) {
            d[r * widths[k] + j] += self.grad[r * total + off + j];
          }
        }
      }
      off += widths[k];
    }
  });
}

Tensor slice_last(const Tensor& x, std::size_t start, std::size_t length) {
  require(x.rank() == 1 || x.rank() == 2, "slice_last: input must be rank 1 or 2");
  const std::size_t width = x.shape().back();
  require(start + length <= width, "slice_last: range out of bounds");
  const std::size_t rows = x.rank() == 2 ? x.dim(0) : 1;
  std::vector<double> out(rows * length);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(x.data().data() + r * width + start, length, out.data() + r * length);
  }
  Node* xn = &x.node();
  Shape shape = x.rank() == 2 ? Shape{rows, length} : Shape{length};
  return make_result(std::move(shape), std::move(out), {x}, [=](Node& self) {
    if (!xn->requires_grad) return;
    auto d = xn->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < length; ++j) {
        d[r * width + start + j] += self.grad[r * length + j];
      }
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  require(numel(shape) == x.numel(), "reshape: " + to_string(x.shape()) + " -> " + to_string(shape));
  std::vector<double> out(x.data().begin(), x.data().end());
  Node* xn = &x.node();
  return make_result(std::move(shape), std::move(out), {x}, [xn](Node& self) {
    if (xn->requires_grad) {
      kernels::axpy(1.0, self.grad, xn->ensure_grad());
    }
  });
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  require(pred.shape() == target.shape(),
          "mse_loss: shapes " + to_string(pred.shape()) + " and " + to_string(target.shape()));
  const std::size_t n = pred.numel();
  require(n > 0, "mse_loss: empty tensors");
  const double loss = kernels::sum_sq_diff(pred.data(), target.data()) / static_cast<double>(n);
  Node* pn = &pred.node();
  Node* tn = &target.node();
  return make_result({1}, {loss}, {pred, target}, [=](Node& self) {
    const double scale = 2.0 * self.grad[0] / static_cast<double>(n);
    if (pn->requires_grad) {
      auto dp = pn->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) dp[i] += scale * (pn->data[i] - tn->data[i]);
    }
    if (tn->requires_grad) {
      auto dt = tn->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) dt[i] -= scale * (pn->data[i] - tn->data[i]);
    }
  });
}

}  // namespace popmap::nd
