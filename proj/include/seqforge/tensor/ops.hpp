#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "seqforge/tensor/tensor.hpp"

namespace seqforge {

namespace detail {

/// Attaches `out` to the active tape when any input is tracked. The
/// backward closure is only built in that case.
template <typename T, typename MakeBackward>
Tensor<T> finish(Tensor<T> out, std::initializer_list<const Tensor<T>*> inputs,
                 MakeBackward&& make_backward) {
  Tape<T>* tape = Tape<T>::active();
  if (!tape) return out;
  bool tracked = false;
  for (const auto* in : inputs) tracked = tracked || tape->tracks(*in);
  if (!tracked) return out;
  return tape->record(std::move(out), inputs, make_backward());
}

template <typename T, typename MakeBackward>
Tensor<T> finish_n(Tensor<T> out, const std::vector<const Tensor<T>*>& inputs,
                   MakeBackward&& make_backward) {
  Tape<T>* tape = Tape<T>::active();
  if (!tape) return out;
  bool tracked = false;
  for (const auto* in : inputs) tracked = tracked || tape->tracks(*in);
  if (!tracked) return out;
  return tape->record(std::move(out), std::span<const Tensor<T>* const>(inputs), make_backward());
}

inline bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.begin(), small.end(), big.end() - static_cast<std::ptrdiff_t>(small.size()));
}

inline std::size_t normalize_axis(std::ptrdiff_t axis, std::size_t rank, const char* op) {
  const auto r = static_cast<std::ptrdiff_t>(rank);
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r)
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for rank " + std::to_string(rank));
  return static_cast<std::size_t>(axis);
}

/// outer x extent x inner decomposition around `axis`.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

inline AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

// C[m x n] += A[m x k] * B[k x n]
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m x n] += A[m x k] * B[n x k]^T
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T* brow = b + j * k;
      T acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      c[i * n + j] += acc;
    }
  }
}

// C[k x n] += A[m x k]^T * B[m x n]
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      T* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T, typename F, typename DF>
Tensor<T> unary(const Tensor<T>& x, F f, DF df_from_xy) {
  std::vector<T> y(x.size());
  const auto xs = x.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(xs[i]);
  Tensor<T> out(x.shape(), std::move(y));
  return finish(out, {&x}, [x, out, df_from_xy]() {
    return [xd = x, yd = out, df_from_xy](std::span<const T> g, std::span<T* const> gi) {
      if (!gi[0]) return;
      const auto xv = xd.data();
      const auto yv = yd.data();
      for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i] * df_from_xy(xv[i], yv[i]);
    };
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic. The second operand may be broadcast over leading
// axes: its shape must be a suffix of the first operand's shape.

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (!detail::is_suffix(b.shape(), a.shape())) {
    if (detail::is_suffix(a.shape(), b.shape())) return add(b, a);
    throw DimensionError("add: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const auto n = a.size(), nb = b.size();
  std::vector<T> y(n);
  const auto av = a.data(), bv = b.data();
  for (std::size_t i = 0; i < n; ++i) y[i] = av[i] + bv[i % nb];
  return detail::finish(Tensor<T>(a.shape(), std::move(y)), {&a, &b}, [nb]() {
    return [nb](std::span<const T> g, std::span<T* const> gi) {
      if (gi[0])
        for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i];
      if (gi[1])
        for (std::size_t i = 0; i < g.size(); ++i) gi[1][i % nb] += g[i];
    };
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (!detail::is_suffix(b.shape(), a.shape())) {
    if (detail::is_suffix(a.shape(), b.shape())) return mul(b, a);
    throw DimensionError("mul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const auto n = a.size(), nb = b.size();
  std::vector<T> y(n);
  const auto av = a.data(), bv = b.data();
  for (std::size_t i = 0; i < n; ++i) y[i] = av[i] * bv[i % nb];
  return detail::finish(Tensor<T>(a.shape(), std::move(y)), {&a, &b}, [a, b, nb]() {
    return [a, b, nb](std::span<const T> g, std::span<T* const> gi) {
      const auto av = a.data(), bv = b.data();
      if (gi[0])
        for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i] * bv[i % nb];
      if (gi[1])
        for (std::size_t i = 0; i < g.size(); ++i) gi[1][i % nb] += g[i] * av[i];
    };
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T c) {
  return detail::unary(x, [c](T v) { return v * c; }, [c](T, T) { return c; });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& x) {
  return scale(x, T(-1));
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return add(a, neg(b));
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T c) {
  return detail::unary(x, [c](T v) { return v + c; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return detail::unary(x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary(
      x,
      [](T v) {
        if (v >= 0) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  return detail::unary(x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
  return detail::unary(x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return detail::unary(x, [](T v) { return v > 0 ? v : T(0); },
                       [](T v, T) { return v > 0 ? T(1) : T(0); });
}

template <typename T>
Tensor<T> square(const Tensor<T>& x) {
  return detail::unary(x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

/// Gradient passes only strictly inside (lo, hi).
template <typename T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi) {
  return detail::unary(x, [lo, hi](T v) { return std::clamp(v, lo, hi); },
                       [lo, hi](T v, T) { return (v > lo && v < hi) ? T(1) : T(0); });
}

// ---------------------------------------------------------------------------
// Linear algebra

/// a: [..., m, k]; b: [k, n] (shared across leading axes) or [..., k, n]
/// with the same leading axes as a.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const auto fail = [&]() {
    return DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                          shape_str(b.shape()));
  };
  if (a.rank() < 2 || b.rank() < 2) throw fail();
  const std::size_t m = a.dim(a.rank() - 2), k = a.dim(a.rank() - 1);
  const std::size_t kb = b.dim(b.rank() - 2), n = b.dim(b.rank() - 1);
  if (k != kb) throw fail();
  const bool shared_b = b.rank() == 2;
  if (!shared_b && (b.rank() != a.rank() ||
                    !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin())))
    throw fail();
  const std::size_t batch = a.size() / (m * k == 0 ? 1 : m * k);
  Shape out_shape = a.shape();
  out_shape.back() = n;
  std::vector<T> y(numel(out_shape), T(0));
  if (shared_b) {
    detail::gemm_nn(a.data().data(), b.data().data(), y.data(), batch * m, k, n);
  } else {
    for (std::size_t s = 0; s < batch; ++s)
      detail::gemm_nn(a.data().data() + s * m * k, b.data().data() + s * k * n,
                      y.data() + s * m * n, m, k, n);
  }
  return detail::finish(Tensor<T>(out_shape, std::move(y)), {&a, &b}, [=]() {
    return [=](std::span<const T> g, std::span<T* const> gi) {
      const T* ad = a.data().data();
      const T* bd = b.data().data();
      if (shared_b) {
        if (gi[0]) detail::gemm_nt(g.data(), bd, gi[0], batch * m, n, k);
        if (gi[1]) detail::gemm_tn(ad, g.data(), gi[1], batch * m, k, n);
        return;
      }
      for (std::size_t s = 0; s < batch; ++s) {
        const T* gs = g.data() + s * m * n;
        if (gi[0]) detail::gemm_nt(gs, bd + s * k * n, gi[0] + s * m * k, m, n, k);
        if (gi[1]) detail::gemm_tn(ad + s * m * k, gs, gi[1] + s * k * n, m, k, n);
      }
    };
  });
}

/// Arbitrary axis permutation: out.shape[i] = x.shape[perm[i]].
template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& perm) {
  const auto r = x.rank();
  if (perm.size() != r) throw DimensionError("permute: rank mismatch for " + shape_str(x.shape()));
  std::vector<bool> seen(r, false);
  for (auto p : perm) {
    if (p >= r || seen[p]) throw DimensionError("permute: invalid permutation");
    seen[p] = true;
  }
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = x.dim(perm[i]);
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * x.dim(i);
  // src[flat_out] gives the input offset of each output element.
  std::vector<std::size_t> src(x.size());
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t o = 0; o < src.size(); ++o) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < r; ++i) off += idx[i] * in_strides[perm[i]];
    src[o] = off;
    for (std::size_t i = r; i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  std::vector<T> y(x.size());
  const auto xv = x.data();
  for (std::size_t o = 0; o < y.size(); ++o) y[o] = xv[src[o]];
  return detail::finish(Tensor<T>(out_shape, std::move(y)), {&x}, [src = std::move(src)]() {
    return [src](std::span<const T> g, std::span<T* const> gi) {
      if (!gi[0]) return;
      for (std::size_t o = 0; o < g.size(); ++o) gi[0][src[o]] += g[o];
    };
  });
}

/// Swaps the last two axes.
template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
  if (x.rank() < 2) throw DimensionError("transpose: rank < 2 for " + shape_str(x.shape()));
  std::vector<std::size_t> perm(x.rank());
  std::iota(perm.begin(), perm.end(), 0);
  std::swap(perm[x.rank() - 1], perm[x.rank() - 2]);
  return permute(x, perm);
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  Tensor<T> out = x.reshaped(std::move(shape));
  return detail::finish(out, {&x}, []() {
    return [](std::span<const T> g, std::span<T* const> gi) {
      if (!gi[0]) return;
      for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i];
    };
  });
}

// ---------------------------------------------------------------------------
// Normalizations

/// Numerically stable softmax along `axis` (max-subtracted). Entries equal
/// to -inf get probability 0 as long as one entry per slice is finite.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::ptrdiff_t axis = -1) {
  const auto ax = detail::normalize_axis(axis, x.rank(), "softmax");
  const auto s = detail::split_at(x.shape(), ax);
  std::vector<T> y(x.size());
  const auto xv = x.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.extent * s.inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < s.extent; ++j) mx = std::max(mx, xv[base + j * s.inner]);
      T total = 0;
      for (std::size_t j = 0; j < s.extent; ++j) {
        const T e = std::exp(xv[base + j * s.inner] - mx);
        y[base + j * s.inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < s.extent; ++j) y[base + j * s.inner] /= total;
    }
  Tensor<T> out(x.shape(), std::move(y));
  return detail::finish(out, {&x}, [out, s]() {
    return [out, s](std::span<const T> g, std::span<T* const> gi) {
      if (!gi[0]) return;
      const auto yv = out.data();
      for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t in = 0; in < s.inner; ++in) {
          const std::size_t base = o * s.extent * s.inner + in;
          T dot = 0;
          for (std::size_t j = 0; j < s.extent; ++j) {
            const auto p = base + j * s.inner;
            dot += g[p] * yv[p];
          }
          for (std::size_t j = 0; j < s.extent; ++j) {
            const auto p = base + j * s.inner;
            gi[0][p] += yv[p] * (g[p] - dot);
          }
        }
    };
  });
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x, std::ptrdiff_t axis = -1) {
  const auto ax = detail::normalize_axis(axis, x.rank(), "log_softmax");
  const auto s = detail::split_at(x.shape(), ax);
  std::vector<T> y(x.size());
  const auto xv = x.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.extent * s.inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < s.extent; ++j) mx = std::max(mx, xv[base + j * s.inner]);
      T total = 0;
      for (std::size_t j = 0; j < s.extent; ++j) total += std::exp(xv[base + j * s.inner] - mx);
      const T lse = mx + std::log(total);
      for (std::size_t j = 0; j < s.extent; ++j)
        y[base + j * s.inner] = xv[base + j * s.inner] - lse;
    }
  Tensor<T> out(x.shape(), std::move(y));
  return detail::finish(out, {&x}, [out, s]() {
    return [out, s](std::span<const T> g, std::span<T* const> gi) {
      if (!gi[0]) return;
      const auto yv = out.data();
      for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t in = 0; in < s.inner; ++in) {
          const std::size_t base = o * s.extent * s.inner + in;
          T gsum = 0;
          for (std::size_t j = 0; j < s.extent; ++j) gsum += g[base + j * s.inner];
          for (std::size_t j = 0; j < s.extent; ++j) {
            const auto p = base + j * s.inner;
            gi[0][p] += g[p] - std::exp(yv[p]) * gsum;
          }
        }
    };
  });
}

/// Layer normalization over the last axis with learned gain and bias.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                     T eps = T(1e-5)) {
  const std::size_t d = x.rank() ? x.shape().back() : 1;
  if (gain.size() != d || bias.size() != d)
    throw DimensionError("layer_norm: input " + shape_str(x.shape()) + " vs gain " +
                         shape_str(gain.shape()) + " and bias " + shape_str(bias.shape()));
  const std::size_t rows = x.size() / d;
  std::vector<T> xhat(x.size()), inv_std(rows), y(x.size());
  const auto xv = x.data(), gv = gain.data(), bv = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv.data() + r * d;
    T mean = 0;
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<T>(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<T>(d);
    inv_std[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (row[j] - mean) * inv_std[r];
      y[r * d + j] = xhat[r * d + j] * gv[j] + bv[j];
    }
  }
  return detail::finish(
      Tensor<T>(x.shape(), std::move(y)), {&x, &gain, &bias},
      [gain, d, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)]() {
        return [gain, d, rows, xhat, inv_std](std::span<const T> g, std::span<T* const> gi) {
          const auto gv = gain.data();
          for (std::size_t r = 0; r < rows; ++r) {
            const T* gr = g.data() + r * d;
            const T* xh = xhat.data() + r * d;
            if (gi[1])
              for (std::size_t j = 0; j < d; ++j) gi[1][j] += gr[j] * xh[j];
            if (gi[2])
              for (std::size_t j = 0; j < d; ++j) gi[2][j] += gr[j];
            if (!gi[0]) continue;
            T mean_dxh = 0, mean_dxh_xh = 0;
            for (std::size_t j = 0; j < d; ++j) {
              const T dxh = gr[j] * gv[j];
              mean_dxh += dxh;
              mean_dxh_xh += dxh * xh[j];
            }
            mean_dxh /= static_cast<T>(d);
            mean_dxh_xh /= static_cast<T>(d);
            for (std::size_t j = 0; j < d; ++j) {
              const T dxh = gr[j] * gv[j];
              gi[0][r * d + j] += inv_std[r] * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
            }
          }
        };
      });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Tensor<T> reduce_sum(const Tensor<T>& x) {
  T total = 0;
  for (T v : x.data()) total += v;
  const std::size_t n = x.size();
  return detail::finish(Tensor<T>::scalar(total), {&x}, [n]() {
    return [n](std::span<const T> g, std::span<T* const> gi) {
      if (!gi[0]) return;
      for (std::size_t i = 0; i < n; ++i) gi[0][i] += g[0];
    };
  });
}

template <typename T>
Tensor<T> reduce_mean(const Tensor<T>& x) {
  if (x.size() == 0) throw ContractError("reduce_mean: empty tensor");
  return scale(reduce_sum(x), T(1) / static_cast<T>(x.size()));
}

/// Sums out `axis`, which is removed from the result shape.
template <typename T>
Tensor<T> reduce_sum(const Tensor<T>& x, std::ptrdiff_t axis) {
  const auto ax = detail::normalize_axis(axis, x.rank(), "reduce_sum");
  const auto s = detail::split_at(x.shape(), ax);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(ax));
  std::vector<T> y(s.outer * s.inner, T(0));
  const auto xv = x.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t j = 0; j < s.extent; ++j)
      for (std::size_t in = 0; in < s.inner; ++in)
        y[o * s.inner + in] += xv[(o * s.extent + j) * s.inner + in];
  return detail::finish(Tensor<T>(out_shape, std::move(y)), {&x}, [s]() {
    return [s](std::span<const T> g, std::span<T* const> gi) {
      if (!gi[0]) return;
      for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t j = 0; j < s.extent; ++j)
          for (std::size_t in = 0; in < s.inner; ++in)
            gi[0][(o * s.extent + j) * s.inner + in] += g[o * s.inner + in];
    };
  });
}

template <typename T>
Tensor<T> reduce_mean(const Tensor<T>& x, std::ptrdiff_t axis) {
  const auto ax = detail::normalize_axis(axis, x.rank(), "reduce_mean");
  if (x.dim(ax) == 0) throw ContractError("reduce_mean: empty axis");
  return scale(reduce_sum(x, axis), T(1) / static_cast<T>(x.dim(ax)));
}

// ---------------------------------------------------------------------------
// Structural ops

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::ptrdiff_t axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  const auto ax = detail::normalize_axis(axis, parts[0].rank(), "concat");
  Shape out_shape = parts[0].shape();
  out_shape[ax] = 0;
  for (const auto& p : parts) {
    bool ok = p.rank() == out_shape.size();
    for (std::size_t i = 0; ok && i < p.rank(); ++i)
      ok = i == ax || p.dim(i) == parts[0].dim(i);
    if (!ok)
      throw DimensionError("concat: shape " + shape_str(p.shape()) + " incompatible with " +
                           shape_str(parts[0].shape()) + " along axis " + std::to_string(ax));
    out_shape[ax] += p.dim(ax);
  }
  const auto outer = detail::split_at(out_shape, ax).outer;
  std::size_t inner = 1;
  for (std::size_t i = ax + 1; i < out_shape.size(); ++i) inner *= out_shape[i];
  const std::size_t row = out_shape[ax] * inner;
  std::vector<std::size_t> chunk(parts.size()), offset(parts.size());
  std::size_t acc = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    chunk[k] = parts[k].dim(ax) * inner;
    offset[k] = acc;
    acc += chunk[k];
  }
  std::vector<T> y(numel(out_shape));
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto pv = parts[k].data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(pv.data() + o * chunk[k], chunk[k], y.data() + o * row + offset[k]);
  }
  std::vector<const Tensor<T>*> inputs;
  for (const auto& p : parts) inputs.push_back(&p);
  return detail::finish_n(Tensor<T>(out_shape, std::move(y)), inputs, [=]() {
    return [=](std::span<const T> g, std::span<T* const> gi) {
      for (std::size_t k = 0; k < chunk.size(); ++k) {
        if (!gi[k]) continue;
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t j = 0; j < chunk[k]; ++j)
            gi[k][o * chunk[k] + j] += g[o * row + offset[k] + j];
      }
    };
  });
}

/// Stacks equally shaped tensors along a new axis.
template <typename T>
Tensor<T> stack(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("stack: no inputs");
  std::vector<Tensor<T>> expanded;
  expanded.reserve(parts.size());
  for (const auto& p : parts) {
    if (p.shape() != parts[0].shape())
      throw DimensionError("stack: shape " + shape_str(p.shape()) + " differs from " +
                           shape_str(parts[0].shape()));
    Shape s = p.shape();
    if (axis > s.size()) throw DimensionError("stack: axis out of range");
    s.insert(s.begin() + static_cast<std::ptrdiff_t>(axis), 1);
    expanded.push_back(reshape(p, s));
  }
  return concat(expanded, static_cast<std::ptrdiff_t>(axis));
}

/// Elements [begin, end) along `axis`.
template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::ptrdiff_t axis, std::size_t begin, std::size_t end) {
  const auto ax = detail::normalize_axis(axis, x.rank(), "slice");
  if (begin > end || end > x.dim(ax))
    throw DimensionError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") out of bounds for axis " + std::to_string(ax) + " of " +
                         shape_str(x.shape()));
  const auto s = detail::split_at(x.shape(), ax);
  Shape out_shape = x.shape();
  out_shape[ax] = end - begin;
  const std::size_t len = (end - begin) * s.inner;
  std::vector<T> y(s.outer * len);
  const auto xv = x.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(xv.data() + (o * s.extent + begin) * s.inner, len, y.data() + o * len);
  return detail::finish(Tensor<T>(out_shape, std::move(y)), {&x}, [=]() {
    return [=](std::span<const T> g, std::span<T* const> gi) {
      if (!gi[0]) return;
      for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t j = 0; j < len; ++j)
          gi[0][(o * s.extent + begin) * s.inner + j] += g[o * len + j];
    };
  });
}

/// Rows of a [V x D] table selected by `ids`; result shape ids_shape + [D].
template <typename T>
Tensor<T> embedding_gather(const Tensor<T>& table, std::span<const std::int32_t> ids,
                           Shape ids_shape) {
  if (table.rank() != 2) throw DimensionError("embedding_gather: table must be rank 2, got " +
                                              shape_str(table.shape()));
  if (numel(ids_shape) != ids.size())
    throw DimensionError("embedding_gather: ids shape " + shape_str(ids_shape) +
                         " does not match " + std::to_string(ids.size()) + " ids");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  for (auto id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= vocab)
      throw ContractError("embedding_gather: id " + std::to_string(id) +
                          " out of range for table of " + std::to_string(vocab) + " rows");
  std::vector<T> y(ids.size() * d);
  const auto tv = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::copy_n(tv.data() + static_cast<std::size_t>(ids[i]) * d, d, y.data() + i * d);
  Shape out_shape = std::move(ids_shape);
  out_shape.push_back(d);
  return detail::finish(Tensor<T>(out_shape, std::move(y)), {&table},
                        [d, idv = std::vector<std::int32_t>(ids.begin(), ids.end())]() {
                          return [d, idv](std::span<const T> g, std::span<T* const> gi) {
                            if (!gi[0]) return;
                            for (std::size_t i = 0; i < idv.size(); ++i) {
                              T* row = gi[0] + static_cast<std::size_t>(idv[i]) * d;
                              for (std::size_t j = 0; j < d; ++j) row[j] += g[i * d + j];
                            }
                          };
                        });
}

/// x[..., ids[...]]: one entry of the last axis per leading position.
template <typename T>
Tensor<T> pick(const Tensor<T>& x, std::span<const std::int32_t> ids) {
  if (x.rank() < 1) throw DimensionError("pick: scalar input");
  const std::size_t v = x.shape().back();
  const std::size_t rows = x.size() / (v == 0 ? 1 : v);
  if (ids.size() != rows)
    throw DimensionError("pick: " + std::to_string(ids.size()) + " ids for input " +
                         shape_str(x.shape()));
  for (auto id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= v)
      throw ContractError("pick: id " + std::to_string(id) + " out of range " + std::to_string(v));
  std::vector<T> y(rows);
  const auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r) y[r] = xv[r * v + static_cast<std::size_t>(ids[r])];
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  return detail::finish(Tensor<T>(out_shape, std::move(y)), {&x},
                        [v, idv = std::vector<std::int32_t>(ids.begin(), ids.end())]() {
                          return [v, idv](std::span<const T> g, std::span<T* const> gi) {
                            if (!gi[0]) return;
                            for (std::size_t r = 0; r < idv.size(); ++r)
                              gi[0][r * v + static_cast<std::size_t>(idv[r])] += g[r];
                          };
                        });
}

/// Gathers slices along axis 0 (rows may repeat).
template <typename T>
Tensor<T> select_rows(const Tensor<T>& x, std::span<const std::size_t> rows) {
  if (x.rank() < 1) throw DimensionError("select_rows: scalar input");
  const std::size_t n = x.dim(0);
  const std::size_t stride = n ? x.size() / n : 0;
  for (auto r : rows)
    if (r >= n) throw ContractError("select_rows: row " + std::to_string(r) + " out of range");
  Shape out_shape = x.shape();
  out_shape[0] = rows.size();
  std::vector<T> y(rows.size() * stride);
  const auto xv = x.data();
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(xv.data() + rows[i] * stride, stride, y.data() + i * stride);
  return detail::finish(Tensor<T>(out_shape, std::move(y)), {&x},
                        [stride, rv = std::vector<std::size_t>(rows.begin(), rows.end())]() {
                          return [stride, rv](std::span<const T> g, std::span<T* const> gi) {
                            if (!gi[0]) return;
                            for (std::size_t i = 0; i < rv.size(); ++i)
                              for (std::size_t j = 0; j < stride; ++j)
                                gi[0][rv[i] * stride + j] += g[i * stride + j];
                          };
                        });
}

/// Per leading index r: take a[r] where keep[r] is set, else b[r].
template <typename T>
Tensor<T> where_rows(std::span<const std::uint8_t> keep, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape() || a.rank() < 1 || keep.size() != a.dim(0))
    throw DimensionError("where_rows: shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " with " + std::to_string(keep.size()) + " flags");
  const std::size_t stride = a.dim(0) ? a.size() / a.dim(0) : 0;
  std::vector<T> y(a.size());
  const auto av = a.data(), bv = b.data();
  for (std::size_t r = 0; r < keep.size(); ++r)
    std::copy_n((keep[r] ? av : bv).data() + r * stride, stride, y.data() + r * stride);
  return detail::finish(Tensor<T>(a.shape(), std::move(y)), {&a, &b},
                        [stride, kv = std::vector<std::uint8_t>(keep.begin(), keep.end())]() {
                          return [stride, kv](std::span<const T> g, std::span<T* const> gi) {
                            for (std::size_t r = 0; r < kv.size(); ++r) {
                              T* dst = gi[kv[r] ? 0 : 1];
                              if (!dst) continue;
                              for (std::size_t j = 0; j < stride; ++j)
                                dst[r * stride + j] += g[r * stride + j];
                            }
                          };
                        });
}

template <typename T>
Tensor<T> detach(const Tensor<T>& x) {
  return x.detached();
}

template <typename T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }

}  // namespace seqforge
