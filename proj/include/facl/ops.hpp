#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "facl/graph.hpp"
#include "facl/tensor.hpp"

namespace facl {

namespace kernel {

/// C[m,n] += A[m,k] * B[k,n]
inline void mm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                  std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      const double* brow = b + p * n;
      double* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
}

/// C[m,n] += A[m,k] * B[n,k]^T
inline void mm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                  std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double* arow = a + i * k;
      const double* brow = b + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      c[i * n + j] += s;
    }
}

/// C[k,n] += A[m,k]^T * B[m,n]
inline void mm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                  std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      const double* brow = b + i * n;
      double* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
}

}  // namespace kernel

// ---- elementwise ----

inline Val add(const Val& a, const Val& b) {
  require(a->v.same_shape(b->v), "add: shape mismatch");
  Tensor out = a->v;
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] += b->v.data[i];
  return detail::make_op(std::move(out), {a, b}, [a, b](Node& self) {
    const Tensor& g = self.grad();
    if (a->needs_grad)
      for (std::size_t i = 0; i < g.numel(); ++i) a->grad().data[i] += g.data[i];
    if (b->needs_grad)
      for (std::size_t i = 0; i < g.numel(); ++i) b->grad().data[i] += g.data[i];
  });
}

inline Val sub(const Val& a, const Val& b) {
  require(a->v.same_shape(b->v), "sub: shape mismatch");
  Tensor out = a->v;
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] -= b->v.data[i];
  return detail::make_op(std::move(out), {a, b}, [a, b](Node& self) {
    const Tensor& g = self.grad();
    if (a->needs_grad)
      for (std::size_t i = 0; i < g.numel(); ++i) a->grad().data[i] += g.data[i];
    if (b->needs_grad)
      for (std::size_t i = 0; i < g.numel(); ++i) b->grad().data[i] -= g.data[i];
  });
}

inline Val mul(const Val& a, const Val& b) {
  require(a->v.same_shape(b->v), "mul: shape mismatch");
  Tensor out = a->v;
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] *= b->v.data[i];
  return detail::make_op(std::move(out), {a, b}, [a, b](Node& self) {
    const Tensor& g = self.grad();
    if (a->needs_grad)
      for (std::size_t i = 0; i < g.numel(); ++i) a->grad().data[i] += g.data[i] * b->v.data[i];
    if (b->needs_grad)
      for (std::size_t i = 0; i < g.numel(); ++i) b->grad().data[i] += g.data[i] * a->v.data[i];
  });
}

inline Val scale(const Val& a, double c) {
  Tensor out = a->v;
  for (double& v : out.data) v *= c;
  return detail::make_op(std::move(out), {a}, [a, c](Node& self) {
    const Tensor& g = self.grad();
    if (a->needs_grad)
      for (std::size_t i = 0; i < g.numel(); ++i) a->grad().data[i] += c * g.data[i];
  });
}

inline Val add_scalar(const Val& a, double c) {
  Tensor out = a->v;
  for (double& v : out.data) v += c;
  return detail::make_op(std::move(out), {a}, [a](Node& self) {
    const Tensor& g = self.grad();
    if (a->needs_grad)
      for (std::size_t i = 0; i < g.numel(); ++i) a->grad().data[i] += g.data[i];
  });
}

inline Val relu(const Val& a) {
  Tensor out = a->v;
  for (double& v : out.data) v = v > 0.0 ? v : 0.0;
  return detail::make_op(std::move(out), {a}, [a](Node& self) {
    if (!a->needs_grad) return;
    const Tensor& g = self.grad();
    for (std::size_t i = 0; i < g.numel(); ++i)
      if (a->v.data[i] > 0.0) a->grad().data[i] += g.data[i];
  });
}

/// x[b×d] + bias[d], broadcast over rows.
inline Val add_bias(const Val& x, const Val& bias) {
  require(x->v.ndim() == 2 && bias->v.ndim() == 1 && x->v.size(1) == bias->v.size(0),
          "add_bias: expects [b x d] + [d]");
  const std::size_t b = x->v.size(0), d = x->v.size(1);
  Tensor out = x->v;
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < d; ++j) out.data[i * d + j] += bias->v.data[j];
  return detail::make_op(std::move(out), {x, bias}, [x, bias, b, d](Node& self) {
    const Tensor& g = self.grad();
    if (x->needs_grad)
      for (std::size_t i = 0; i < g.numel(); ++i) x->grad().data[i] += g.data[i];
    if (bias->needs_grad)
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < d; ++j) bias->grad().data[j] += g.data[i * d + j];
  });
}

/// Row i of x scaled by the constant col[i]; col does not receive gradients.
inline Val mul_rows(const Val& x, const Tensor& col) {
  require(x->v.ndim() == 2 && col.numel() == x->v.size(0), "mul_rows: col length != batch");
  const std::size_t b = x->v.size(0), d = x->v.size(1);
  Tensor out = x->v;
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < d; ++j) out.data[i * d + j] *= col.data[i];
  return detail::make_op(std::move(out), {x}, [x, col, b, d](Node& self) {
    if (!x->needs_grad) return;
    const Tensor& g = self.grad();
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < d; ++j) x->grad().data[i * d + j] += g.data[i * d + j] * col.data[i];
  });
}

// ---- matrix products ----

inline Val matmul(const Val& a, const Val& b) {
  require(a->v.ndim() == 2 && b->v.ndim() == 2 && a->v.size(1) == b->v.size(0),
          "matmul: inner dimensions differ");
  const std::size_t m = a->v.size(0), k = a->v.size(1), n = b->v.size(1);
  Tensor out({m, n});
  kernel::mm_nn(a->v.data.data(), b->v.data.data(), out.data.data(), m, k, n);
  return detail::make_op(std::move(out), {a, b}, [a, b, m, k, n](Node& self) {
    const Tensor& g = self.grad();
    if (a->needs_grad)  // dA = dC * B^T
      kernel::mm_nt(g.data.data(), b->v.data.data(), a->grad().data.data(), m, n, k);
    if (b->needs_grad)  // dB = A^T * dC
      kernel::mm_tn(a->v.data.data(), g.data.data(), b->grad().data.data(), m, k, n);
  });
}

/// a[m×k] * b[n×k]^T -> [m×n]; the similarity-logits product.
inline Val matmul_nt(const Val& a, const Val& b) {
  require(a->v.ndim() == 2 && b->v.ndim() == 2 && a->v.size(1) == b->v.size(1),
          "matmul_nt: feature dimensions differ");
  const std::size_t m = a->v.size(0), k = a->v.size(1), n = b->v.size(0);
  Tensor out({m, n});
  kernel::mm_nt(a->v.data.data(), b->v.data.data(), out.data.data(), m, k, n);
  return detail::make_op(std::move(out), {a, b}, [a, b, m, k, n](Node& self) {
    const Tensor& g = self.grad();
    if (a->needs_grad)  // dA = dC * B
      kernel::mm_nn(g.data.data(), b->v.data.data(), a->grad().data.data(), m, n, k);
    if (b->needs_grad)  // dB = dC^T * A
      kernel::mm_tn(g.data.data(), a->v.data.data(), b->grad().data.data(), m, n, k);
  });
}

inline Val reshape(const Val& x, std::vector<std::size_t> shape) {
  require(Tensor::count(shape) == x->v.numel(), "reshape: element count differs");
  Tensor out = x->v;
  out.shape = std::move(shape);
  return detail::make_op(std::move(out), {x}, [x](Node& self) {
    if (!x->needs_grad) return;
    const Tensor& g = self.grad();
    for (std::size_t i = 0; i < g.numel(); ++i) x->grad().data[i] += g.data[i];
  });
}

// ---- reductions ----

inline Val sum_all(const Val& x) {
  double s = 0.0;
  for (double v : x->v.data) s += v;
  return detail::make_op(Tensor::from({1}, {s}), {x}, [x](Node& self) {
    if (!x->needs_grad) return;
    const double g = self.grad().data[0];
    for (std::size_t i = 0; i < x->v.numel(); ++i) x->grad().data[i] += g;
  });
}

inline Val mean_all(const Val& x) {
  const double inv = 1.0 / static_cast<double>(x->v.numel());
  double s = 0.0;
  for (double v : x->v.data) s += v;
  return detail::make_op(Tensor::from({1}, {s * inv}), {x}, [x, inv](Node& self) {
    if (!x->needs_grad) return;
    const double g = self.grad().data[0] * inv;
    for (std::size_t i = 0; i < x->v.numel(); ++i) x->grad().data[i] += g;
  });
}

/// out[i] = x[idx[i]]; backward scatter-adds into the gathered rows.
inline Val gather_rows(const Val& x, std::vector<std::size_t> idx) {
  require(x->v.ndim() == 2, "gather_rows: expects [b x d]");
  const std::size_t d = x->v.size(1);
  for (std::size_t r : idx) require(r < x->v.size(0), "gather_rows: index out of range");
  Tensor out({idx.size(), d});
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (std::size_t j = 0; j < d; ++j) out.data[i * d + j] = x->v.data[idx[i] * d + j];
  return detail::make_op(std::move(out), {x}, [x, idx, d](Node& self) {
    if (!x->needs_grad) return;
    const Tensor& g = self.grad();
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) x->grad().data[idx[i] * d + j] += g.data[i * d + j];
  });
}

/// Row-wise dot product of two [b×d] tensors -> [b×1].
inline Val row_dot(const Val& a, const Val& b) {
  require(a->v.same_shape(b->v) && a->v.ndim() == 2, "row_dot: expects matching [b x d]");
  const std::size_t bn = a->v.size(0), d = a->v.size(1);
  Tensor out({bn, 1});
  for (std::size_t i = 0; i < bn; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += a->v.data[i * d + j] * b->v.data[i * d + j];
    out.data[i] = s;
  }
  return detail::make_op(std::move(out), {a, b}, [a, b, bn, d](Node& self) {
    const Tensor& g = self.grad();
    if (a->needs_grad)
      for (std::size_t i = 0; i < bn; ++i)
        for (std::size_t j = 0; j < d; ++j) a->grad().data[i * d + j] += g.data[i] * b->v.data[i * d + j];
    if (b->needs_grad)
      for (std::size_t i = 0; i < bn; ++i)
        for (std::size_t j = 0; j < d; ++j) b->grad().data[i * d + j] += g.data[i] * a->v.data[i * d + j];
  });
}

// ---- normalization ----

/// Each row divided by max(its l2 norm, eps).
inline Val l2_normalize_rows(const Val& x, double eps = 1e-12) {
  require(x->v.ndim() == 2, "l2_normalize_rows: expects [b x d]");
  const std::size_t b = x->v.size(0), d = x->v.size(1);
  Tensor out = x->v;
  std::vector<double> norms(b);
  for (std::size_t i = 0; i < b; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += x->v.data[i * d + j] * x->v.data[i * d + j];
    norms[i] = std::max(std::sqrt(s), eps);
    for (std::size_t j = 0; j < d; ++j) out.data[i * d + j] /= norms[i];
  }
  return detail::make_op(std::move(out), {x}, [x, norms, b, d, eps](Node& self) {
    if (!x->needs_grad) return;
    const Tensor& g = self.grad();
    const Tensor& y = self.v;
    for (std::size_t i = 0; i < b; ++i) {
      double raw = 0.0;
      for (std::size_t j = 0; j < d; ++j) raw += x->v.data[i * d + j] * x->v.data[i * d + j];
      if (std::sqrt(raw) <= eps) {
        // clamped branch: y = x / eps is linear
        for (std::size_t j = 0; j < d; ++j) x->grad().data[i * d + j] += g.data[i * d + j] / eps;
        continue;
      }
      double gy = 0.0;
      for (std::size_t j = 0; j < d; ++j) gy += g.data[i * d + j] * y.data[i * d + j];
      for (std::size_t j = 0; j < d; ++j)
        x->grad().data[i * d + j] += (g.data[i * d + j] - gy * y.data[i * d + j]) / norms[i];
    }
  });
}

/// Running statistics owned by one batch_norm layer.
struct BnState {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  explicit BnState(std::size_t d = 1)
      : running_mean(Tensor({d}, 0.0)), running_var(Tensor({d}, 1.0)) {}
};

/// Train mode normalizes by batch statistics and (optionally) updates the
/// running estimates; eval mode normalizes by the stored running estimates.
inline Val batch_norm(const Val& x, const Val& gamma, const Val& beta, BnState& state, bool train,
                      bool update_stats = true) {
  require(x->v.ndim() == 2, "batch_norm: expects [b x d]");
  const std::size_t b = x->v.size(0), d = x->v.size(1);
  require(gamma->v.numel() == d && beta->v.numel() == d, "batch_norm: parameter size mismatch");
  require(state.running_mean.numel() == d, "batch_norm: state size mismatch");
  if (train) require(b >= 2, "batch_norm: train mode needs batch >= 2");

  std::vector<double> mean(d, 0.0), var(d, 0.0), ivstd(d);
  if (train) {
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < d; ++j) mean[j] += x->v.data[i * d + j];
    for (std::size_t j = 0; j < d; ++j) mean[j] /= static_cast<double>(b);
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        const double c = x->v.data[i * d + j] - mean[j];
        var[j] += c * c;
      }
    for (std::size_t j = 0; j < d; ++j) var[j] /= static_cast<double>(b);
    if (update_stats) {
      const double m = state.momentum;
      const double unbias = static_cast<double>(b) / static_cast<double>(b - 1);
      for (std::size_t j = 0; j < d; ++j) {
        state.running_mean.data[j] = stored((1.0 - m) * state.running_mean.data[j] + m * mean[j]);
        state.running_var.data[j] =
            stored((1.0 - m) * state.running_var.data[j] + m * var[j] * unbias);
      }
    }
  } else {
    for (std::size_t j = 0; j < d; ++j) {
      mean[j] = state.running_mean.data[j];
      var[j] = state.running_var.data[j];
    }
  }
  for (std::size_t j = 0; j < d; ++j) ivstd[j] = 1.0 / std::sqrt(var[j] + state.eps);

  Tensor xhat({b, d});
  Tensor out({b, d});
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (x->v.data[i * d + j] - mean[j]) * ivstd[j];
      xhat.data[i * d + j] = h;
      out.data[i * d + j] = gamma->v.data[j] * h + beta->v.data[j];
    }

  return detail::make_op(
      std::move(out), {x, gamma, beta}, [x, gamma, beta, xhat, ivstd, b, d, train](Node& self) {
        const Tensor& g = self.grad();
        if (gamma->needs_grad)
          for (std::size_t i = 0; i < b; ++i)
            for (std::size_t j = 0; j < d; ++j)
              gamma->grad().data[j] += g.data[i * d + j] * xhat.data[i * d + j];
        if (beta->needs_grad)
          for (std::size_t i = 0; i < b; ++i)
            for (std::size_t j = 0; j < d; ++j) beta->grad().data[j] += g.data[i * d + j];
        if (!x->needs_grad) return;
        if (!train) {
          for (std::size_t i = 0; i < b; ++i)
            for (std::size_t j = 0; j < d; ++j)
              x->grad().data[i * d + j] += g.data[i * d + j] * gamma->v.data[j] * ivstd[j];
          return;
        }
        const double invb = 1.0 / static_cast<double>(b);
        for (std::size_t j = 0; j < d; ++j) {
          double sum_dy = 0.0, sum_dy_h = 0.0;
          for (std::size_t i = 0; i < b; ++i) {
            const double dy = g.data[i * d + j] * gamma->v.data[j];
            sum_dy += dy;
            sum_dy_h += dy * xhat.data[i * d + j];
          }
          for (std::size_t i = 0; i < b; ++i) {
            const double dy = g.data[i * d + j] * gamma->v.data[j];
            x->grad().data[i * d + j] +=
                ivstd[j] * (dy - invb * sum_dy - invb * xhat.data[i * d + j] * sum_dy_h);
          }
        }
      });
}

// ---- spatial ----

/// 3x3 cross-correlation, stride 1, zero padding 1.
inline Val conv2d(const Val& x, const Val& k) {
  require(x->v.ndim() == 4 && k->v.ndim() == 4, "conv2d: expects [b x c x h x w] and [o x c x 3 x 3]");
  require(k->v.size(2) == 3 && k->v.size(3) == 3, "conv2d: kernel must be 3x3");
  require(x->v.size(1) == k->v.size(1), "conv2d: channel mismatch");
  const std::size_t b = x->v.size(0), c = x->v.size(1), h = x->v.size(2), w = x->v.size(3);
  const std::size_t o = k->v.size(0);
  const auto xi = [c, h, w](std::size_t bi, std::size_t ci, std::size_t yi, std::size_t xj) {
    return ((bi * c + ci) * h + yi) * w + xj;
  };
  const auto oi = [o, h, w](std::size_t bi, std::size_t ci, std::size_t yi, std::size_t xj) {
    return ((bi * o + ci) * h + yi) * w + xj;
  };
  const auto ki = [c](std::size_t oc, std::size_t ic, std::size_t p, std::size_t q) {
    return ((oc * c + ic) * 3 + p) * 3 + q;
  };

  Tensor out({b, o, h, w});
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t oc = 0; oc < o; ++oc)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t xw = 0; xw < w; ++xw) {
          double s = 0.0;
          for (std::size_t ic = 0; ic < c; ++ic)
            for (std::size_t p = 0; p < 3; ++p) {
              const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + p) - 1;
              if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
              for (std::size_t q = 0; q < 3; ++q) {
                const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(xw + q) - 1;
                if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) continue;
                s += x->v.data[xi(bi, ic, sy, sx)] * k->v.data[ki(oc, ic, p, q)];
              }
            }
          out.data[oi(bi, oc, y, xw)] = s;
        }

  return detail::make_op(std::move(out), {x, k}, [x, k, b, c, h, w, o, xi, oi, ki](Node& self) {
    const Tensor& g = self.grad();
    for (std::size_t bi = 0; bi < b; ++bi)
      for (std::size_t oc = 0; oc < o; ++oc)
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t xw = 0; xw < w; ++xw) {
            const double gv = g.data[oi(bi, oc, y, xw)];
            if (gv == 0.0) continue;
            for (std::size_t ic = 0; ic < c; ++ic)
              for (std::size_t p = 0; p < 3; ++p) {
                const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + p) - 1;
                if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
                for (std::size_t q = 0; q < 3; ++q) {
                  const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(xw + q) - 1;
                  if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) continue;
                  if (x->needs_grad)
                    x->grad().data[xi(bi, ic, sy, sx)] += gv * k->v.data[ki(oc, ic, p, q)];
                  if (k->needs_grad)
                    k->grad().data[ki(oc, ic, p, q)] += gv * x->v.data[xi(bi, ic, sy, sx)];
                }
              }
          }
  });
}

/// 2x2 window mean, stride 2; spatial extents must be even.
inline Val avg_pool2(const Val& x) {
  require(x->v.ndim() == 4, "avg_pool2: expects [b x c x h x w]");
  const std::size_t b = x->v.size(0), c = x->v.size(1), h = x->v.size(2), w = x->v.size(3);
  require(h % 2 == 0 && w % 2 == 0, "avg_pool2: odd spatial extent");
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor out({b, c, oh, ow});
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xw = 0; xw < ow; ++xw) {
          const std::size_t base = ((bi * c + ci) * h + 2 * y) * w + 2 * xw;
          out.data[((bi * c + ci) * oh + y) * ow + xw] =
              0.25 * (x->v.data[base] + x->v.data[base + 1] + x->v.data[base + w] +
                      x->v.data[base + w + 1]);
        }
  return detail::make_op(std::move(out), {x}, [x, b, c, h, w, oh, ow](Node& self) {
    if (!x->needs_grad) return;
    const Tensor& g = self.grad();
    for (std::size_t bi = 0; bi < b; ++bi)
      for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t y = 0; y < oh; ++y)
          for (std::size_t xw = 0; xw < ow; ++xw) {
            const double gv = 0.25 * g.data[((bi * c + ci) * oh + y) * ow + xw];
            const std::size_t base = ((bi * c + ci) * h + 2 * y) * w + 2 * xw;
            x->grad().data[base] += gv;
            x->grad().data[base + 1] += gv;
            x->grad().data[base + w] += gv;
            x->grad().data[base + w + 1] += gv;
          }
  });
}

// ---- fused losses ----

/// Mean cross-entropy of row-softmax against integer targets, computed with
/// row-max subtraction for stability.
inline Val cross_entropy_rows(const Val& logits, std::vector<std::size_t> targets) {
  require(logits->v.ndim() == 2, "cross_entropy_rows: expects [b x n]");
  const std::size_t b = logits->v.size(0), n = logits->v.size(1);
  require(targets.size() == b, "cross_entropy_rows: target count != batch");
  for (std::size_t t : targets) require(t < n, "cross_entropy_rows: target out of range");

  double total = 0.0;
  std::vector<double> lse(b);
  for (std::size_t i = 0; i < b; ++i) {
    const double* row = logits->v.data.data() + i * n;
    double mx = row[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += std::exp(row[j] - mx);
    lse[i] = mx + std::log(s);
    total += lse[i] - row[targets[i]];
  }
  total /= static_cast<double>(b);

  return detail::make_op(
      Tensor::from({1}, {total}), {logits}, [logits, targets, lse, b, n](Node& self) {
        if (!logits->needs_grad) return;
        const double g = self.grad().data[0] / static_cast<double>(b);
        for (std::size_t i = 0; i < b; ++i) {
          const double* row = logits->v.data.data() + i * n;
          double* gr = logits->grad().data.data() + i * n;
          for (std::size_t j = 0; j < n; ++j) {
            const double p = std::exp(row[j] - lse[i]);
            gr[j] += g * (p - (j == targets[i] ? 1.0 : 0.0));
          }
        }
      });
}

}  // namespace facl
