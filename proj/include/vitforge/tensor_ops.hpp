#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "vitforge/tensor.hpp"

namespace vitforge {

namespace detail {

template <typename T>
void require_rank(const Tensor<T>& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " +
                     std::to_string(rank) + ", got " + shape_str(t.shape()));
  }
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b,
                        const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

}  // namespace detail

/// c = a·b for a (m×k), b (k×n).
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions disagree, " +
                     shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Tensor<T> c({m, n});
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  T* pc = c.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = pc + i * n;
    for (std::size_t t = 0; t < k; ++t) {
      const T av = pa[i * k + t];
      const T* brow = pb + t * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  require_finite(c, "matmul");
  return c;
}

/// aᵀ·b for a (k×m), b (k×n).
template <typename T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank(a, 2, "matmul_tn");
  detail::require_rank(b, 2, "matmul_tn");
  const std::size_t k = a.dim(0), m = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul_tn: leading dimensions disagree, " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Tensor<T> c({m, n});
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  T* pc = c.data().data();
  for (std::size_t t = 0; t < k; ++t) {
    const T* brow = pb + t * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = pa[t * m + i];
      T* crow = pc + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

/// a·bᵀ for a (m×k), b (n×k).
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank(a, 2, "matmul_nt");
  detail::require_rank(b, 2, "matmul_nt");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) {
    throw ShapeError("matmul_nt: trailing dimensions disagree, " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Tensor<T> c({m, n});
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  T* pc = c.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = pa + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T* brow = pb + j * k;
      T acc{0};
      for (std::size_t t = 0; t < k; ++t) acc += arow[t] * brow[t];
      pc[i * n + j] = acc;
    }
  }
  require_finite(c, "matmul_nt");
  return c;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  detail::require_rank(a, 2, "transpose");
  const std::size_t r = a.dim(0), c = a.dim(1);
  Tensor<T> out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(j, i) = a.at(i, j);
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  Tensor<T> out = a;
  auto o = out.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bd[i];
  return out;
}

/// a += b in place.
template <typename T>
void accumulate(Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "accumulate");
  auto o = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bd[i];
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  Tensor<T> out = a;
  for (T& v : out.data()) v *= s;
  return out;
}

template <typename T>
Tensor<T> hadamard(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "hadamard");
  Tensor<T> out = a;
  auto o = out.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bd[i];
  return out;
}

/// Adds a length-n vector to every row of an m×n matrix.
template <typename T>
Tensor<T> add_row_vector(const Tensor<T>& m, const Tensor<T>& v) {
  detail::require_rank(m, 2, "add_row_vector");
  if (v.size() != m.dim(1)) {
    throw ShapeError("add_row_vector: bias " + shape_str(v.shape()) +
                     " does not match " + shape_str(m.shape()));
  }
  Tensor<T> out = m;
  const std::size_t cols = m.dim(1);
  for (std::size_t i = 0; i < m.dim(0); ++i)
    for (std::size_t j = 0; j < cols; ++j) out.at(i, j) += v[j];
  return out;
}

/// Column sums of an m×n matrix as a length-n vector.
template <typename T>
Tensor<T> sum_rows(const Tensor<T>& m) {
  detail::require_rank(m, 2, "sum_rows");
  Tensor<T> out({m.dim(1)});
  for (std::size_t i = 0; i < m.dim(0); ++i)
    for (std::size_t j = 0; j < m.dim(1); ++j) out[j] += m.at(i, j);
  return out;
}

/// Row-wise softmax with max subtraction.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& m) {
  detail::require_rank(m, 2, "softmax_rows");
  require_finite(m, "softmax_rows input");
  const std::size_t rows = m.dim(0), cols = m.dim(1);
  Tensor<T> out({rows, cols});
  for (std::size_t i = 0; i < rows; ++i) {
    T mx = m.at(i, 0);
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, m.at(i, j));
    T sum{0};
    for (std::size_t j = 0; j < cols; ++j) {
      const T e = std::exp(m.at(i, j) - mx);
      out.at(i, j) = e;
      sum += e;
    }
    for (std::size_t j = 0; j < cols; ++j) out.at(i, j) /= sum;
  }
  return out;
}

/// Given y = softmax_rows(x) and dL/dy, returns dL/dx.
template <typename T>
Tensor<T> softmax_rows_backward(const Tensor<T>& y, const Tensor<T>& dy) {
  detail::require_same_shape(y, dy, "softmax_rows_backward");
  Tensor<T> dx(y.shape());
  for (std::size_t i = 0; i < y.dim(0); ++i) {
    T dot{0};
    for (std::size_t j = 0; j < y.dim(1); ++j) dot += y.at(i, j) * dy.at(i, j);
    for (std::size_t j = 0; j < y.dim(1); ++j)
      dx.at(i, j) = y.at(i, j) * (dy.at(i, j) - dot);
  }
  return dx;
}

/// Per-row statistics kept from the forward pass of layer_norm.
template <typename T>
struct LayerNormCache {
  Tensor<T> normalized;  // (x - mean) * inv_std
  std::vector<T> inv_std;
};

/// Normalizes every last-axis vector with population variance, then applies
/// the affine scale/shift. Works on any rank >= 1.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, T eps,
                     LayerNormCache<T>* cache = nullptr) {
  if (x.rank() < 1) throw ShapeError("layer_norm: rank-0 input");
  const std::size_t d = x.shape().back();
  if (gamma.size() != d || beta.size() != d) {
    throw ShapeError("layer_norm: parameter length " +
                     std::to_string(gamma.size()) + "/" +
                     std::to_string(beta.size()) + " does not match last axis " +
                     std::to_string(d));
  }
  if (!(eps > T{0})) throw ValidationError("layer_norm: eps must be positive");
  const std::size_t rows = x.size() / d;
  Tensor<T> out(x.shape());
  LayerNormCache<T> local;
  if (cache) {
    local.normalized = Tensor<T>(x.shape());
    local.inv_std.resize(rows);
  }
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.data().data() + r * d;
    T mean{0};
    for (std::size_t j = 0; j < d; ++j) mean += xr[j];
    mean /= static_cast<T>(d);
    T var{0};
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<T>(d);
    const T inv = T{1} / std::sqrt(var + eps);
    T* orow = out.data().data() + r * d;
    for (std::size_t j = 0; j < d; ++j) {
      const T xhat = (xr[j] - mean) * inv;
      if (cache) local.normalized[r * d + j] = xhat;
      orow[j] = xhat * gamma[j] + beta[j];
    }
    if (cache) local.inv_std[r] = inv;
  }
  if (cache) *cache = std::move(local);
  require_finite(out, "layer_norm");
  return out;
}

template <typename T>
struct LayerNormGrads {
  Tensor<T> dx;
  Tensor<T> dgamma;
  Tensor<T> dbeta;
};

template <typename T>
LayerNormGrads<T> layer_norm_backward(const LayerNormCache<T>& cache,
                                      const Tensor<T>& gamma,
                                      const Tensor<T>& dy) {
  const std::size_t d = gamma.size();
  const std::size_t rows = dy.size() / d;
  LayerNormGrads<T> g{Tensor<T>(dy.shape()), Tensor<T>({d}), Tensor<T>({d})};
  std::vector<T> dxhat(d);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xh = cache.normalized.data().data() + r * d;
    const T* dyr = dy.data().data() + r * d;
    T mean_dxhat{0}, mean_dxhat_xhat{0};
    for (std::size_t j = 0; j < d; ++j) {
      g.dgamma[j] += dyr[j] * xh[j];
      g.dbeta[j] += dyr[j];
      dxhat[j] = dyr[j] * gamma[j];
      mean_dxhat += dxhat[j];
      mean_dxhat_xhat += dxhat[j] * xh[j];
    }
    mean_dxhat /= static_cast<T>(d);
    mean_dxhat_xhat /= static_cast<T>(d);
    T* dxr = g.dx.data().data() + r * d;
    const T inv = cache.inv_std[r];
    for (std::size_t j = 0; j < d; ++j)
      dxr[j] = inv * (dxhat[j] - mean_dxhat - xh[j] * mean_dxhat_xhat);
  }
  return g;
}

/// Exact GELU: x·Φ(x) with Φ(x) = ½(1 + erf(x/√2)).
template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  require_finite(x, "gelu input");
  Tensor<T> out = x;
  for (T& v : out.data())
    v = v * T{0.5} * (T{1} + std::erf(v * static_cast<T>(std::numbers::sqrt2 / 2)));
  return out;
}

/// dL/dx for gelu given the forward input and dL/dy.
template <typename T>
Tensor<T> gelu_backward(const Tensor<T>& x, const Tensor<T>& dy) {
  detail::require_same_shape(x, dy, "gelu_backward");
  const T inv_sqrt_2pi = static_cast<T>(0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
  Tensor<T> dx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T v = x[i];
    const T cdf = T{0.5} * (T{1} + std::erf(v * static_cast<T>(std::numbers::sqrt2 / 2)));
    const T pdf = inv_sqrt_2pi * std::exp(T{-0.5} * v * v);
    dx[i] = dy[i] * (cdf + v * pdf);
  }
  return dx;
}

/// Columns [begin, end) of a matrix.
template <typename T>
Tensor<T> slice_cols(const Tensor<T>& m, std::size_t begin, std::size_t end) {
  detail::require_rank(m, 2, "slice_cols");
  if (begin >= end || end > m.dim(1)) {
    throw ShapeError("slice_cols: range [" + std::to_string(begin) + "," +
                     std::to_string(end) + ") out of " + shape_str(m.shape()));
  }
  Tensor<T> out({m.dim(0), end - begin});
  for (std::size_t i = 0; i < m.dim(0); ++i)
    for (std::size_t j = begin; j < end; ++j) out.at(i, j - begin) = m.at(i, j);
  return out;
}

/// Elements [begin, end) of a vector.
template <typename T>
Tensor<T> slice_vector(const Tensor<T>& v, std::size_t begin, std::size_t end) {
  if (begin >= end || end > v.size()) {
    throw ShapeError("slice_vector: range out of " + shape_str(v.shape()));
  }
  return Tensor<T>({end - begin}, std::vector<T>(v.data().begin() + begin,
                                                 v.data().begin() + end));
}

/// Rows [begin, end) of a matrix.
template <typename T>
Tensor<T> slice_rows(const Tensor<T>& m, std::size_t begin, std::size_t end) {
  detail::require_rank(m, 2, "slice_rows");
  if (begin >= end || end > m.dim(0)) {
    throw ShapeError("slice_rows: range out of " + shape_str(m.shape()));
  }
  const std::size_t c = m.dim(1);
  return Tensor<T>({end - begin, c},
                   std::vector<T>(m.data().begin() + begin * c,
                                  m.data().begin() + end * c));
}

/// Concatenates matrices with equal row counts along the column axis.
template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t rows = parts.front().dim(0);
  std::size_t cols = 0;
  for (const auto& p : parts) {
    detail::require_rank(p, 2, "concat_cols");
    if (p.dim(0) != rows) throw ShapeError("concat_cols: row count mismatch");
    cols += p.dim(1);
  }
  Tensor<T> out({rows, cols});
  std::size_t offset = 0;
  for (const auto& p : parts) {
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < p.dim(1); ++j) out.at(i, offset + j) = p.at(i, j);
    offset += p.dim(1);
  }
  return out;
}

/// Stacks matrices with equal column counts along the row axis.
template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t cols = parts.front().dim(1);
  std::size_t rows = 0;
  std::vector<T> data;
  for (const auto& p : parts) {
    detail::require_rank(p, 2, "concat_rows");
    if (p.dim(1) != cols) throw ShapeError("concat_rows: column count mismatch");
    rows += p.dim(0);
    data.insert(data.end(), p.data().begin(), p.data().end());
  }
  return Tensor<T>({rows, cols}, std::move(data));
}

/// Token order used for every sum over keys in scaled_dot_attention: rows of
/// k, then v, compared lexicographically. It depends only on row contents, so
/// permuting the tokens permutes the result exactly.
template <typename T>
std::vector<std::size_t> canonical_key_order(const Tensor<T>& k, const Tensor<T>& v) {
  std::vector<std::size_t> order(k.dim(0));
  for (std::size_t j = 0; j < order.size(); ++j) order[j] = j;
  auto row = [](const Tensor<T>& m, std::size_t r) {
    const T* p = m.data().data() + r * m.dim(1);
    return std::pair{p, p + m.dim(1)};
  };
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    auto [ka, ka_end] = row(k, a);
    auto [kb, kb_end] = row(k, b);
    if (!std::equal(ka, ka_end, kb)) return std::lexicographical_compare(ka, ka_end, kb, kb_end);
    auto [va, va_end] = row(v, a);
    auto [vb, vb_end] = row(v, b);
    return std::lexicographical_compare(va, va_end, vb, vb_end);
  });
  return order;
}

/// softmax_rows(q·kᵀ·scale)·v. The attention weights are stored in `probs`
/// when given.
template <typename T>
Tensor<T> scaled_dot_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                               T scale, Tensor<T>* probs = nullptr) {
  detail::require_rank(q, 2, "attention");
  detail::require_rank(k, 2, "attention");
  detail::require_rank(v, 2, "attention");
  if (q.dim(1) != k.dim(1) || k.dim(0) != v.dim(0)) {
    throw ShapeError("attention: q" + shape_str(q.shape()) + " k" + shape_str(k.shape()) +
                     " v" + shape_str(v.shape()));
  }
  const std::size_t tq = q.dim(0), tk = k.dim(0), dv = v.dim(1);
  const auto order = canonical_key_order(k, v);
  Tensor<T> p = vitforge::scale(matmul_nt(q, k), scale);
  for (std::size_t i = 0; i < tq; ++i) {
    T mx = p.at(i, 0);
    for (std::size_t j = 1; j < tk; ++j) mx = std::max(mx, p.at(i, j));
    for (std::size_t j = 0; j < tk; ++j) p.at(i, j) = std::exp(p.at(i, j) - mx);
    T sum{0};
    for (std::size_t j : order) sum += p.at(i, j);
    for (std::size_t j = 0; j < tk; ++j) p.at(i, j) /= sum;
  }
  Tensor<T> out({tq, dv});
  for (std::size_t i = 0; i < tq; ++i) {
    T* orow = out.data().data() + i * dv;
    for (std::size_t j : order) {
      const T w = p.at(i, j);
      const T* vrow = v.data().data() + j * dv;
      for (std::size_t c = 0; c < dv; ++c) orow[c] += w * vrow[c];
    }
  }
  if (probs) *probs = std::move(p);
  return out;
}

}  // namespace vitforge
