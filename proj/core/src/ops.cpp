#include "grtrack/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <utility>

namespace grtrack::ops {

namespace {

using detail::Node;
using Backward = std::function<void(Node&)>;

bool should_record(std::span<const Tensor> inputs) {
  if (!grad_enabled()) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.defined() && t.requires_grad(); });
}

Tensor make_result(Shape shape, std::vector<double> value, std::span<const Tensor> inputs, Backward backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  if (should_record(inputs)) {
    node->requires_grad = true;
    for (const auto& t : inputs) {
      if (t.defined()) node->parents.push_back(t.node());
    }
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

Tensor make_result(Shape shape, std::vector<double> value, std::initializer_list<Tensor> inputs, Backward backward) {
  return make_result(std::move(shape), std::move(value), std::span<const Tensor>(inputs.begin(), inputs.size()),
                     std::move(backward));
}

// Returns the parent's grad buffer when it wants one, otherwise nullptr.
double* grad_of(Node* p) {
  if (p == nullptr || !p->requires_grad) return nullptr;
  p->ensure_grad();
  return p->grad.data();
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

void require_rank(const Tensor& a, std::size_t rank, const char* op) {
  if (a.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(a.shape()));
  }
}

// C[M,N] += A[M,K] * B[K,N]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[M,K] += A[M,N] * B[K,N]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * n;
    double* crow = c + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += arow[j] * brow[j];
      crow[p] += s;
    }
  }
}

// C[K,N] += A[M,K]^T * B[M,N]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      double* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename F, typename D>
Tensor unary(const Tensor& a, F forward, D derivative) {
  const auto x = a.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = forward(x[i]);
  Node* pa = a.node().get();
  return make_result(a.shape(), std::move(out), {a}, [pa, derivative](Node& self) {
    double* ga = grad_of(pa);
    if (!ga) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i] * derivative(pa->value[i], self.value[i]);
  });
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dims disagree " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  detail::add_macs(static_cast<std::uint64_t>(m) * k * n);
  Node* pa = a.node().get();
  Node* pb = b.node().get();
  return make_result({m, n}, std::move(out), {a, b}, [pa, pb, m, k, n](Node& self) {
    if (double* ga = grad_of(pa)) gemm_nt(self.grad.data(), pb->value.data(), ga, m, n, k);
    if (double* gb = grad_of(pb)) gemm_tn(pa->value.data(), self.grad.data(), gb, m, k, n);
  });
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<double> out(r * c);
  const auto x = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
  Node* pa = a.node().get();
  return make_result({c, r}, std::move(out), {a}, [pa, r, c](Node& self) {
    double* ga = grad_of(pa);
    if (!ga) return;
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += self.grad[j * r + i];
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() != 2 || weight.rank() != 2 || x.dim(1) != weight.dim(0)) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                         shape_str(weight.shape()));
  }
  auto y = matmul(x, weight);
  return bias.defined() ? add_bias(y, bias) : y;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  const auto x = a.data(), y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
  Node* pa = a.node().get();
  Node* pb = b.node().get();
  return make_result(a.shape(), std::move(out), {a, b}, [pa, pb](Node& self) {
    if (double* ga = grad_of(pa))
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
    if (double* gb = grad_of(pb))
      for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i] += self.grad[i];
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  const auto x = a.data(), y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i];
  Node* pa = a.node().get();
  Node* pb = b.node().get();
  return make_result(a.shape(), std::move(out), {a, b}, [pa, pb](Node& self) {
    if (double* ga = grad_of(pa))
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
    if (double* gb = grad_of(pb))
      for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i] -= self.grad[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  const auto x = a.data(), y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  Node* pa = a.node().get();
  Node* pb = b.node().get();
  return make_result(a.shape(), std::move(out), {a, b}, [pa, pb](Node& self) {
    if (double* ga = grad_of(pa))
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i] * pb->value[i];
    if (double* gb = grad_of(pb))
      for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i] += self.grad[i] * pa->value[i];
  });
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "div");
  const auto x = a.data(), y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] / y[i];
  Node* pa = a.node().get();
  Node* pb = b.node().get();
  return make_result(a.shape(), std::move(out), {a, b}, [pa, pb](Node& self) {
    if (double* ga = grad_of(pa))
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i] / pb->value[i];
    if (double* gb = grad_of(pb))
      for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i] -= self.grad[i] * self.value[i] / pb->value[i];
  });
}

Tensor minimum(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "minimum");
  const auto x = a.data(), y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::min(x[i], y[i]);
  Node* pa = a.node().get();
  Node* pb = b.node().get();
  // Ties route the gradient to `a`.
  return make_result(a.shape(), std::move(out), {a, b}, [pa, pb](Node& self) {
    double* ga = grad_of(pa);
    double* gb = grad_of(pb);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const bool take_a = pa->value[i] <= pb->value[i];
      if (take_a && ga) ga[i] += self.grad[i];
      if (!take_a && gb) gb[i] += self.grad[i];
    }
  });
}

Tensor maximum(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "maximum");
  const auto x = a.data(), y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::max(x[i], y[i]);
  Node* pa = a.node().get();
  Node* pb = b.node().get();
  return make_result(a.shape(), std::move(out), {a, b}, [pa, pb](Node& self) {
    double* ga = grad_of(pa);
    double* gb = grad_of(pb);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const bool take_a = pa->value[i] >= pb->value[i];
      if (take_a && ga) ga[i] += self.grad[i];
      if (!take_a && gb) gb[i] += self.grad[i];
    }
  });
}

Tensor scale(const Tensor& a, double s) {
  return unary(a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor square(const Tensor& a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor abs(const Tensor& a) {
  return unary(
      a, [](double x) { return std::fabs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor exp(const Tensor& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); }, [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& a) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
  return unary(
      a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
      [inv_sqrt_2pi](double x, double) {
        return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
      });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  return unary(
      a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_rank(x, 2, "add_bias");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (bias.numel() != n) throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " vs " + shape_str(x.shape()));
  std::vector<double> out(x.data().begin(), x.data().end());
  const auto b = bias.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += b[j];
  Node* px = x.node().get();
  Node* pb = bias.node().get();
  return make_result(x.shape(), std::move(out), {x, bias}, [px, pb, m, n](Node& self) {
    if (double* gx = grad_of(px))
      for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
    if (double* gb = grad_of(pb))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += self.grad[i * n + j];
  });
}

Tensor mul_cols(const Tensor& x, const Tensor& v) {
  require_rank(x, 2, "mul_cols");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (v.numel() != n) throw DimensionError("mul_cols: vector " + shape_str(v.shape()) + " vs " + shape_str(x.shape()));
  std::vector<double> out(m * n);
  const auto xv = x.data();
  const auto vv = v.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = xv[i * n + j] * vv[j];
  Node* px = x.node().get();
  Node* pv = v.node().get();
  return make_result(x.shape(), std::move(out), {x, v}, [px, pv, m, n](Node& self) {
    if (double* gx = grad_of(px))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += self.grad[i * n + j] * pv->value[j];
    if (double* gv = grad_of(pv))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gv[j] += self.grad[i * n + j] * px->value[i * n + j];
  });
}

Tensor mul_rows(const Tensor& x, const Tensor& v) {
  require_rank(x, 2, "mul_rows");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (v.numel() != m) throw DimensionError("mul_rows: vector " + shape_str(v.shape()) + " vs " + shape_str(x.shape()));
  std::vector<double> out(m * n);
  const auto xv = x.data();
  const auto vv = v.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = xv[i * n + j] * vv[i];
  Node* px = x.node().get();
  Node* pv = v.node().get();
  return make_result(x.shape(), std::move(out), {x, v}, [px, pv, m, n](Node& self) {
    if (double* gx = grad_of(px))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += self.grad[i * n + j] * pv->value[i];
    if (double* gv = grad_of(pv))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gv[i] += self.grad[i * n + j] * px->value[i * n + j];
  });
}

Tensor row_sums(const Tensor& x) {
  require_rank(x, 2, "row_sums");
  return scale(mean_lastdim(x), static_cast<double>(x.dim(1)));
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) throw DimensionError("softmax: axis out of range for " + shape_str(x.shape()));
  const auto& shape = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t n = shape[axis];
  const auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t r = 0; r < inner; ++r) {
      const std::size_t base = o * n * inner + r;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < n; ++j) {
        const double v = in[base + j * inner];
        if (std::isnan(v)) throw NumericError("softmax: NaN input");
        mx = std::max(mx, v);
      }
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double e = std::exp(in[base + j * inner] - mx);
        out[base + j * inner] = e;
        s += e;
      }
      for (std::size_t j = 0; j < n; ++j) out[base + j * inner] /= s;
    }
  }
  Node* px = x.node().get();
  return make_result(shape, std::move(out), {x}, [px, outer, inner, n](Node& self) {
    double* gx = grad_of(px);
    if (!gx) return;
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t r = 0; r < inner; ++r) {
        const std::size_t base = o * n * inner + r;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += self.grad[base + j * inner] * self.value[base + j * inner];
        for (std::size_t j = 0; j < n; ++j) {
          const std::size_t idx = base + j * inner;
          gx[idx] += self.value[idx] * (self.grad[idx] - dot);
        }
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_rank(x, 2, "layer_norm");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (gamma.numel() != n || beta.numel() != n) {
    throw DimensionError("layer_norm: affine params do not match last dim of " + shape_str(x.shape()));
  }
  const auto in = x.data();
  const auto g = gamma.data();
  const auto b = beta.data();
  std::vector<double> out(m * n);
  std::vector<double> xhat(m * n);
  std::vector<double> inv_std(m);
  for (std::size_t i = 0; i < m; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += in[i * n + j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = in[i * n + j] - mu;
      var += d * d;
    }
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (in[i * n + j] - mu) * inv_std[i];
      xhat[i * n + j] = h;
      out[i * n + j] = h * g[j] + b[j];
    }
  }
  Node* px = x.node().get();
  Node* pg = gamma.node().get();
  Node* pb = beta.node().get();
  return make_result(x.shape(), std::move(out), {x, gamma, beta},
                     [px, pg, pb, m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                       double* gx = grad_of(px);
                       double* gg = grad_of(pg);
                       double* gb = grad_of(pb);
                       const double inv_n = 1.0 / static_cast<double>(n);
                       for (std::size_t i = 0; i < m; ++i) {
                         const double* dy = self.grad.data() + i * n;
                         const double* h = xhat.data() + i * n;
                         if (gg)
                           for (std::size_t j = 0; j < n; ++j) gg[j] += dy[j] * h[j];
                         if (gb)
                           for (std::size_t j = 0; j < n; ++j) gb[j] += dy[j];
                         if (!gx) continue;
                         double mean_dh = 0.0, mean_dh_h = 0.0;
                         for (std::size_t j = 0; j < n; ++j) {
                           const double dh = dy[j] * pg->value[j];
                           mean_dh += dh;
                           mean_dh_h += dh * h[j];
                         }
                         mean_dh *= inv_n;
                         mean_dh_h *= inv_n;
                         for (std::size_t j = 0; j < n; ++j) {
                           const double dh = dy[j] * pg->value[j];
                           gx[i * n + j] += inv_std[i] * (dh - mean_dh - h[j] * mean_dh_h);
                         }
                       }
                     });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  Node* px = x.node().get();
  return make_result({1}, {s}, {x}, [px](Node& self) {
    if (double* gx = grad_of(px))
      for (std::size_t i = 0; i < px->value.size(); ++i) gx[i] += self.grad[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor mean_lastdim(const Tensor& x) {
  if (x.rank() < 1) throw DimensionError("mean_lastdim: scalar input");
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  if (out_shape.empty()) out_shape = {1};
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  std::vector<double> out(rows, 0.0);
  const auto in = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += in[r * n + j];
    out[r] = s / static_cast<double>(n);
  }
  Node* px = x.node().get();
  return make_result(std::move(out_shape), std::move(out), {x}, [px, rows, n](Node& self) {
    double* gx = grad_of(px);
    if (!gx) return;
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += self.grad[r] * inv;
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  Node* px = x.node().get();
  return make_result(std::move(shape), std::move(out), {x}, [px](Node& self) {
    if (double* gx = grad_of(px))
      for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
  });
}

Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t count) {
  require_rank(x, 2, "slice_rows");
  const std::size_t n = x.dim(1);
  if (start + count > x.dim(0)) throw DimensionError("slice_rows: range out of bounds for " + shape_str(x.shape()));
  const auto in = x.data();
  std::vector<double> out(in.begin() + static_cast<std::ptrdiff_t>(start * n),
                          in.begin() + static_cast<std::ptrdiff_t>((start + count) * n));
  Node* px = x.node().get();
  return make_result({count, n}, std::move(out), {x}, [px, start, n](Node& self) {
    if (double* gx = grad_of(px))
      for (std::size_t i = 0; i < self.grad.size(); ++i) gx[start * n + i] += self.grad[i];
  });
}

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count) {
  require_rank(x, 2, "slice_cols");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (start + count > n) throw DimensionError("slice_cols: range out of bounds for " + shape_str(x.shape()));
  const auto in = x.data();
  std::vector<double> out(m * count);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < count; ++j) out[i * count + j] = in[i * n + start + j];
  Node* px = x.node().get();
  return make_result({m, count}, std::move(out), {x}, [px, start, m, n, count](Node& self) {
    if (double* gx = grad_of(px))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < count; ++j) gx[i * n + start + j] += self.grad[i * count + j];
  });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t n = parts[0].dim(1);
  std::size_t rows = 0;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_rows");
    if (p.dim(1) != n) throw DimensionError("concat_rows: column count mismatch");
    rows += p.dim(0);
  }
  std::vector<double> out;
  out.reserve(rows * n);
  std::vector<Node*> nodes;
  for (const auto& p : parts) {
    out.insert(out.end(), p.data().begin(), p.data().end());
    nodes.push_back(p.node().get());
  }
  return make_result({rows, n}, std::move(out), parts, [nodes](Node& self) {
    std::size_t offset = 0;
    for (Node* p : nodes) {
      if (double* g = grad_of(p))
        for (std::size_t i = 0; i < p->value.size(); ++i) g[i] += self.grad[offset + i];
      offset += p->value.size();
    }
  });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t m = parts[0].dim(0);
  std::size_t cols = 0;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_cols");
    if (p.dim(0) != m) throw DimensionError("concat_cols: row count mismatch");
    cols += p.dim(1);
  }
  std::vector<double> out(m * cols);
  std::vector<Node*> nodes;
  std::size_t c0 = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.dim(1);
    const auto in = p.data();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) out[i * cols + c0 + j] = in[i * w + j];
    c0 += w;
    nodes.push_back(p.node().get());
  }
  return make_result({m, cols}, std::move(out), parts, [nodes, m, cols](Node& self) {
    std::size_t c = 0;
    for (Node* p : nodes) {
      const std::size_t w = p->shape[1];
      if (double* g = grad_of(p))
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < w; ++j) g[i * w + j] += self.grad[i * cols + c + j];
      c += w;
    }
  });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  require_rank(x, 2, "gather_rows");
  const std::size_t n = x.dim(1);
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  std::vector<double> out(idx.size() * n);
  const auto in = x.data();
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= x.dim(0)) throw DimensionError("gather_rows: index out of range");
    std::copy_n(in.begin() + static_cast<std::ptrdiff_t>(idx[r] * n), n, out.begin() + static_cast<std::ptrdiff_t>(r * n));
  }
  Node* px = x.node().get();
  const std::size_t count = idx.size();
  return make_result({count, n}, std::move(out), {x}, [px, idx = std::move(idx), n](Node& self) {
    if (double* gx = grad_of(px))
      for (std::size_t r = 0; r < idx.size(); ++r)
        for (std::size_t j = 0; j < n; ++j) gx[idx[r] * n + j] += self.grad[r * n + j];
  });
}

Tensor stack(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("stack: no inputs");
  const Shape& inner = parts[0].shape();
  Shape shape{parts.size()};
  shape.insert(shape.end(), inner.begin(), inner.end());
  std::vector<double> out;
  out.reserve(shape_numel(shape));
  std::vector<Node*> nodes;
  for (const auto& p : parts) {
    if (p.shape() != inner) throw DimensionError("stack: shape mismatch");
    out.insert(out.end(), p.data().begin(), p.data().end());
    nodes.push_back(p.node().get());
  }
  return make_result(std::move(shape), std::move(out), parts, [nodes](Node& self) {
    std::size_t offset = 0;
    for (Node* p : nodes) {
      if (double* g = grad_of(p))
        for (std::size_t i = 0; i < p->value.size(); ++i) g[i] += self.grad[offset + i];
      offset += p->value.size();
    }
  });
}

Tensor element(const Tensor& x, std::size_t flat_index) {
  if (flat_index >= x.numel()) throw DimensionError("element: index out of range");
  Node* px = x.node().get();
  return make_result({1}, {x.data()[flat_index]}, {x}, [px, flat_index](Node& self) {
    if (double* gx = grad_of(px)) gx[flat_index] += self.grad[0];
  });
}

Tensor pack(std::span<const Tensor> parts) {
  std::size_t total = 0;
  for (const auto& p : parts) total += p.numel();
  std::vector<double> out;
  out.reserve(total);
  std::vector<Node*> nodes;
  for (const auto& p : parts) {
    out.insert(out.end(), p.data().begin(), p.data().end());
    nodes.push_back(p.node().get());
  }
  return make_result({total}, std::move(out), parts, [nodes](Node& self) {
    std::size_t offset = 0;
    for (Node* p : nodes) {
      if (double* g = grad_of(p))
        for (std::size_t i = 0; i < p->value.size(); ++i) g[i] += self.grad[offset + i];
      offset += p->value.size();
    }
  });
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t pad) {
  require_rank(x, 3, "conv2d");
  require_rank(weight, 4, "conv2d");
  const std::size_t cin = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t cout = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != cin || weight.dim(3) != k) {
    throw DimensionError("conv2d: weight " + shape_str(weight.shape()) + " vs input " + shape_str(x.shape()));
  }
  if (bias.defined() && bias.numel() != cout) throw DimensionError("conv2d: bias size mismatch");
  if (h + 2 * pad < k || w + 2 * pad < k) throw DimensionError("conv2d: kernel larger than padded input");
  const std::size_t oh = h + 2 * pad - k + 1, ow = w + 2 * pad - k + 1;
  const std::size_t patch = cin * k * k, npos = oh * ow;

  // im2col: cols[patch, npos]
  std::vector<double> cols(patch * npos, 0.0);
  const auto in = x.data();
  for (std::size_t c = 0; c < cin; ++c)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        const std::size_t row = (c * k + ky) * k + kx;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy + ky) - static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox + kx) - static_cast<std::ptrdiff_t>(pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
            cols[row * npos + oy * ow + ox] = in[(c * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)];
          }
        }
      }

  std::vector<double> out(cout * npos, 0.0);
  gemm_nn(weight.data().data(), cols.data(), out.data(), cout, patch, npos);
  detail::add_macs(static_cast<std::uint64_t>(cout) * patch * npos);
  if (bias.defined()) {
    const auto b = bias.data();
    for (std::size_t o = 0; o < cout; ++o)
      for (std::size_t p = 0; p < npos; ++p) out[o * npos + p] += b[o];
  }

  Node* px = x.node().get();
  Node* pw = weight.node().get();
  Node* pb = bias.defined() ? bias.node().get() : nullptr;
  return make_result({cout, oh, ow}, std::move(out), {x, weight, bias},
                     [=, cols = std::move(cols)](Node& self) {
                       if (double* gw = grad_of(pw)) gemm_nt(self.grad.data(), cols.data(), gw, cout, npos, patch);
                       if (double* gb = grad_of(pb))
                         for (std::size_t o = 0; o < cout; ++o)
                           for (std::size_t p = 0; p < npos; ++p) gb[o] += self.grad[o * npos + p];
                       double* gx = grad_of(px);
                       if (!gx) return;
                       std::vector<double> dcols(patch * npos, 0.0);
                       gemm_tn(pw->value.data(), self.grad.data(), dcols.data(), cout, patch, npos);
                       for (std::size_t c = 0; c < cin; ++c)
                         for (std::size_t ky = 0; ky < k; ++ky)
                           for (std::size_t kx = 0; kx < k; ++kx) {
                             const std::size_t row = (c * k + ky) * k + kx;
                             for (std::size_t oy = 0; oy < oh; ++oy) {
                               const auto iy = static_cast<std::ptrdiff_t>(oy + ky) - static_cast<std::ptrdiff_t>(pad);
                               if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                               for (std::size_t ox = 0; ox < ow; ++ox) {
                                 const auto ix = static_cast<std::ptrdiff_t>(ox + kx) - static_cast<std::ptrdiff_t>(pad);
                                 if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                                 gx[(c * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)] +=
                                     dcols[row * npos + oy * ow + ox];
                               }
                             }
                           }
                     });
}

Tensor straight_through(std::vector<double> hard, const Tensor& soft) {
  if (hard.size() != soft.numel()) throw DimensionError("straight_through: size mismatch");
  Node* ps = soft.node().get();
  return make_result(soft.shape(), std::move(hard), {soft}, [ps](Node& self) {
    if (double* gs = grad_of(ps))
      for (std::size_t i = 0; i < self.grad.size(); ++i) gs[i] += self.grad[i];
  });
}

}  // namespace grtrack::ops
