#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "antispoof/common.hpp"
#include "antispoof/graph.hpp"
#include "antispoof/tensor.hpp"

// Differentiable op set. Conventions shared by every op:
//   * `g` may be null: forward-only, nothing is recorded.
//   * outputs are freshly allocated; inputs are never written.
//   * every output is checked for NaN/Inf before it is returned.
//   * each output element is reduced in one fixed sequential order, so
//     results are bit-identical across runs and thread counts.
// Convolutions use cross-correlation semantics (no kernel flip).

namespace antispoof {

enum class Mode { kTrain, kInfer };
enum class Padding { kSame, kValid };

namespace detail {

template <typename T>
void check_finite(const Tensor<T>& t, const char* op) {
  const T* p = t.data();
  for (std::int64_t i = 0; i < t.size(); ++i)
    if (!std::isfinite(p[i]))
      throw NumericError(std::string(op) + ": non-finite value at flat index " + std::to_string(i));
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

// Fixed-order dot product. Eight independent partial sums keep the loop
// vectorizable without changing results between builds.
template <typename T>
T dot(const T* a, const T* b, std::int64_t n) {
  T acc[8] = {T(0), T(0), T(0), T(0), T(0), T(0), T(0), T(0)};
  std::int64_t j = 0;
  for (; j + 8 <= n; j += 8)
    for (int u = 0; u < 8; ++u) acc[u] += a[j + u] * b[j + u];
  T tail = T(0);
  for (; j < n; ++j) tail += a[j] * b[j];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail;
}

// c[m][n] += sum_k a[m][k] * b[k][n]; k ascends for every c element.
template <typename T>
void gemm_acc(const T* a, const T* b, T* c, std::int64_t m_dim, std::int64_t k_dim,
              std::int64_t n_dim) {
#if defined(_OPENMP)
#pragma omp parallel for schedule(static)
#endif
  for (std::int64_t m = 0; m < m_dim; ++m) {
    T* crow = c + m * n_dim;
    const T* arow = a + m * k_dim;
    for (std::int64_t k = 0; k < k_dim; ++k) {
      const T av = arow[k];
      const T* brow = b + k * n_dim;
      for (std::int64_t n = 0; n < n_dim; ++n) crow[n] += av * brow[n];
    }
  }
}

struct PadSpec {
  int out = 0;
  int lo = 0;
};

inline PadSpec pad_for(int in, int kernel, int stride, Padding padding) {
  PadSpec p;
  if (padding == Padding::kSame) {
    p.out = (in + stride - 1) / stride;
    const int total = std::max(0, (p.out - 1) * stride + kernel - in);
    p.lo = total / 2;  // odd totals put the extra pad on the high side
  } else {
    if (in < kernel) throw ShapeError("conv: input smaller than kernel under valid padding");
    p.out = (in - kernel) / stride + 1;
    p.lo = 0;
  }
  return p;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and arithmetic ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(Graph<T>* g, const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.shape() == b.shape(), "add: shape mismatch " + shape_to_string(a.shape()) +
                                              " vs " + shape_to_string(b.shape()));
  Tensor<T> out(a.shape());
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  for (std::int64_t i = 0; i < out.size(); ++i) po[i] = pa[i] + pb[i];
  detail::check_finite(out, "add");
  if (g)
    g->record([a, b, out]() mutable {
      if (!out.has_grad()) return;
      const T* go = out.grad();
      T* ga = a.grad();
      T* gb = b.grad();
      for (std::int64_t i = 0; i < out.size(); ++i) {
        ga[i] += go[i];
        gb[i] += go[i];
      }
    });
  return out;
}

template <typename T>
Tensor<T> scale(Graph<T>* g, const Tensor<T>& x, T alpha) {
  Tensor<T> out(x.shape());
  const T* px = x.data();
  T* po = out.data();
  for (std::int64_t i = 0; i < out.size(); ++i) po[i] = alpha * px[i];
  detail::check_finite(out, "scale");
  if (g)
    g->record([x, out, alpha]() mutable {
      if (!out.has_grad()) return;
      const T* go = out.grad();
      T* gx = x.grad();
      for (std::int64_t i = 0; i < out.size(); ++i) gx[i] += alpha * go[i];
    });
  return out;
}

template <typename T>
Tensor<T> relu(Graph<T>* g, const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  const T* px = x.data();
  T* po = out.data();
  for (std::int64_t i = 0; i < out.size(); ++i) po[i] = px[i] > T(0) ? px[i] : T(0);
  detail::check_finite(out, "relu");
  if (g)
    g->record([x, out]() mutable {
      if (!out.has_grad()) return;
      const T* go = out.grad();
      const T* px = x.data();
      T* gx = x.grad();
      for (std::int64_t i = 0; i < out.size(); ++i)
        if (px[i] > T(0)) gx[i] += go[i];
    });
  return out;
}

template <typename T>
inline T sigmoid_value(T v) {
  return v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
}

template <typename T>
Tensor<T> sigmoid(Graph<T>* g, const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  const T* px = x.data();
  T* po = out.data();
  for (std::int64_t i = 0; i < out.size(); ++i) po[i] = sigmoid_value(px[i]);
  detail::check_finite(out, "sigmoid");
  if (g)
    g->record([x, out]() mutable {
      if (!out.has_grad()) return;
      const T* go = out.grad();
      const T* po = out.data();
      T* gx = x.grad();
      for (std::int64_t i = 0; i < out.size(); ++i) gx[i] += go[i] * po[i] * (T(1) - po[i]);
    });
  return out;
}

// swish(x) = x * sigmoid(x)
template <typename T>
Tensor<T> swish(Graph<T>* g, const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  const T* px = x.data();
  T* po = out.data();
  for (std::int64_t i = 0; i < out.size(); ++i) po[i] = px[i] * sigmoid_value(px[i]);
  detail::check_finite(out, "swish");
  if (g)
    g->record([x, out]() mutable {
      if (!out.has_grad()) return;
      const T* go = out.grad();
      const T* px = x.data();
      T* gx = x.grad();
      for (std::int64_t i = 0; i < out.size(); ++i) {
        const T s = sigmoid_value(px[i]);
        gx[i] += go[i] * (s + px[i] * s * (T(1) - s));
      }
    });
  return out;
}

// glu(x): split the last axis in half, out = a * sigmoid(b).
template <typename T>
Tensor<T> glu(Graph<T>* g, const Tensor<T>& x) {
  const int last = x.dim(-1);
  detail::require(last % 2 == 0, "glu: last axis must be even, got " + std::to_string(last));
  const int half = last / 2;
  Shape out_shape = x.shape();
  out_shape.back() = half;
  Tensor<T> out(out_shape);
  const std::int64_t rows = x.size() / last;
  const T* px = x.data();
  T* po = out.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* a = px + r * last;
    const T* b = a + half;
    T* o = po + r * half;
    for (int i = 0; i < half; ++i) o[i] = a[i] * sigmoid_value(b[i]);
  }
  detail::check_finite(out, "glu");
  if (g)
    g->record([x, out, rows, half, last]() mutable {
      if (!out.has_grad()) return;
      const T* go = out.grad();
      const T* px = x.data();
      T* gx = x.grad();
      for (std::int64_t r = 0; r < rows; ++r) {
        const T* a = px + r * last;
        const T* b = a + half;
        const T* dyo = go + r * half;
        T* da = gx + r * last;
        T* db = da + half;
        for (int i = 0; i < half; ++i) {
          const T s = sigmoid_value(b[i]);
          da[i] += dyo[i] * s;
          db[i] += dyo[i] * a[i] * s * (T(1) - s);
        }
      }
    });
  return out;
}

template <typename T>
Tensor<T> softmax(Graph<T>* g, const Tensor<T>& x, int axis) {
  const int r = x.rank();
  if (axis < 0) axis += r;
  detail::require(axis >= 0 && axis < r, "softmax: axis out of range");
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= x.shape()[static_cast<std::size_t>(i)];
  for (int i = axis + 1; i < r; ++i) inner *= x.shape()[static_cast<std::size_t>(i)];
  const std::int64_t n = x.shape()[static_cast<std::size_t>(axis)];

  Tensor<T> out(x.shape());
  const T* px = x.data();
  T* po = out.data();
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t i = 0; i < inner; ++i) {
      const std::int64_t base = o * n * inner + i;
      T mx = px[base];
      for (std::int64_t j = 1; j < n; ++j) mx = std::max(mx, px[base + j * inner]);
      T sum = T(0);
      for (std::int64_t j = 0; j < n; ++j) {
        const T e = std::exp(px[base + j * inner] - mx);
        po[base + j * inner] = e;
        sum += e;
      }
      for (std::int64_t j = 0; j < n; ++j) po[base + j * inner] /= sum;
    }
  detail::check_finite(out, "softmax");
  if (g)
    g->record([x, out, outer, inner, n]() mutable {
      if (!out.has_grad()) return;
      const T* go = out.grad();
      const T* po = out.data();
      T* gx = x.grad();
      for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t i = 0; i < inner; ++i) {
          const std::int64_t base = o * n * inner + i;
          T dots = T(0);
          for (std::int64_t j = 0; j < n; ++j) dots += go[base + j * inner] * po[base + j * inner];
          for (std::int64_t j = 0; j < n; ++j) {
            const std::int64_t k = base + j * inner;
            gx[k] += po[k] * (go[k] - dots);
          }
        }
    });
  return out;
}

// ---------------------------------------------------------------------------
// Dense / matmul
// ---------------------------------------------------------------------------

// out[..., d_out] = x[..., d_in] . w[d_in, d_out] + b[d_out]
template <typename T>
Tensor<T> dense(Graph<T>* g, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  detail::require(w.rank() == 2, "dense: weight must be rank 2");
  const int d_in = w.dim(0);
  const int d_out = w.dim(1);
  detail::require(x.dim(-1) == d_in, "dense: input last axis " + std::to_string(x.dim(-1)) +
                                         " != weight rows " + std::to_string(d_in));
  detail::require(b.rank() == 1 && b.dim(0) == d_out, "dense: bias shape mismatch");

  Shape out_shape = x.shape();
  out_shape.back() = d_out;
  Tensor<T> out(out_shape);
  const std::int64_t rows = x.size() / d_in;
  const T* pb = b.data();
  T* po = out.data();
  for (std::int64_t m = 0; m < rows; ++m)
    for (int j = 0; j < d_out; ++j) po[m * d_out + j] = pb[j];
  detail::gemm_acc(x.data(), w.data(), po, rows, d_in, d_out);
  detail::check_finite(out, "dense");

  if (g)
    g->record([x, w, b, out, rows, d_in, d_out]() mutable {
      if (!out.has_grad()) return;
      const T* go = out.grad();
      const T* px = x.data();
      const T* pw = w.data();
      T* gx = x.grad();
      T* gw = w.grad();
      T* gb = b.grad();
      // db[j] += sum_m dy[m][j]
      for (std::int64_t m = 0; m < rows; ++m) {
        const T* dyrow = go + m * d_out;
        for (int j = 0; j < d_out; ++j) gb[j] += dyrow[j];
      }
      // dw[i][j] += sum_m x[m][i] * dy[m][j]
#if defined(_OPENMP)
#pragma omp parallel for schedule(static)
#endif
      for (int i = 0; i < d_in; ++i) {
        T* gwrow = gw + static_cast<std::int64_t>(i) * d_out;
        for (std::int64_t m = 0; m < rows; ++m) {
          const T xv = px[m * d_in + i];
          const T* dyrow = go + m * d_out;
          for (int j = 0; j < d_out; ++j) gwrow[j] += xv * dyrow[j];
        }
      }
      // dx[m][i] += sum_j dy[m][j] * w[i][j]
#if defined(_OPENMP)
#pragma omp parallel for schedule(static)
#endif
      for (std::int64_t m = 0; m < rows; ++m) {
        const T* dyrow = go + m * d_out;
        T* gxrow = gx + m * d_in;
        for (int i = 0; i < d_in; ++i)
          gxrow[i] += detail::dot(dyrow, pw + static_cast<std::int64_t>(i) * d_out,
                                  static_cast<std::int64_t>(d_out));
      }
    });
  return out;
}

// Batched matmul over matching leading batch: a[N,M,K] x b[N,K,P] -> [N,M,P];
// with transpose_b, b is [N,P,K].
template <typename T>
Tensor<T> bmm(Graph<T>* g, const Tensor<T>& a, const Tensor<T>& b, bool transpose_b) {
  detail::require(a.rank() == 3 && b.rank() == 3, "bmm: inputs must be rank 3");
  detail::require(a.dim(0) == b.dim(0), "bmm: batch mismatch");
  const std::int64_t batch = a.dim(0);
  const std::int64_t m_dim = a.dim(1);
  const std::int64_t k_dim = a.dim(2);
  const std::int64_t p_dim = transpose_b ? b.dim(1) : b.dim(2);
  detail::require((transpose_b ? b.dim(2) : b.dim(1)) == k_dim, "bmm: inner dimension mismatch");

  Tensor<T> out({static_cast<int>(batch), static_cast<int>(m_dim), static_cast<int>(p_dim)});
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  for (std::int64_t n = 0; n < batch; ++n) {
    const T* an = pa + n * m_dim * k_dim;
    const T* bn = pb + n * k_dim * p_dim;
    T* on = po + n * m_dim * p_dim;
    if (!transpose_b) {
      detail::gemm_acc(an, bn, on, m_dim, k_dim, p_dim);
    } else {
      for (std::int64_t m = 0; m < m_dim; ++m)
        for (std::int64_t p = 0; p < p_dim; ++p)
          on[m * p_dim + p] = detail::dot(an + m * k_dim, bn + p * k_dim, k_dim);
    }
  }
  detail::check_finite(out, "bmm");

  if (g)
    g->record([a, b, out, batch, m_dim, k_dim, p_dim, transpose_b]() mutable {
      if (!out.has_grad()) return;
      const T* go = out.grad();
      const T* pa = a.data();
      const T* pb = b.data();
      T* ga = a.grad();
      T* gb = b.grad();
      for (std::int64_t n = 0; n < batch; ++n) {
        const T* dyn = go + n * m_dim * p_dim;
        const T* an = pa + n * m_dim * k_dim;
        const T* bn = pb + n * k_dim * p_dim;
        T* gan = ga + n * m_dim * k_dim;
        T* gbn = gb + n * k_dim * p_dim;
        if (!transpose_b) {
          // da[m,k] += sum_p dy[m,p] * b[k,p]; db[k,p] += sum_m a[m,k] * dy[m,p]
          for (std::int64_t m = 0; m < m_dim; ++m)
            for (std::int64_t k = 0; k < k_dim; ++k)
              gan[m * k_dim + k] += detail::dot(dyn + m * p_dim, bn + k * p_dim, p_dim);
          for (std::int64_t m = 0; m < m_dim; ++m)
            for (std::int64_t k = 0; k < k_dim; ++k) {
              const T av = an[m * k_dim + k];
              const T* dyrow = dyn + m * p_dim;
              T* gbrow = gbn + k * p_dim;
              for (std::int64_t p = 0; p < p_dim; ++p) gbrow[p] += av * dyrow[p];
            }
        } else {
          // out = a . b^T with b[P,K]:
          // da[m,k] += sum_p dy[m,p] * b[p,k]; db[p,k] += sum_m dy[m,p] * a[m,k]
          for (std::int64_t m = 0; m < m_dim; ++m)
            for (std::int64_t p = 0; p < p_dim; ++p) {
              const T dv = dyn[m * p_dim + p];
              const T* brow = bn + p * k_dim;
              T* garow = gan + m * k_dim;
              for (std::int64_t k = 0; k < k_dim; ++k) garow[k] += dv * brow[k];
            }
          for (std::int64_t m = 0; m < m_dim; ++m)
            for (std::int64_t p = 0; p < p_dim; ++p) {
              const T dv = dyn[m * p_dim + p];
              const T* arow = an + m * k_dim;
              T* gbrow = gbn + p * k_dim;
              for (std::int64_t k = 0; k < k_dim; ++k) gbrow[k] += dv * arow[k];
            }
        }
      }
    });
  return out;
}

// ---------------------------------------------------------------------------
// Shape ops (copying; gradients are copied back on the reverse pass)
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(Graph<T>* g, const Tensor<T>& x, Shape new_shape) {
  detail::require(shape_numel(new_shape) == x.size(), "reshape: element count mismatch");
  Tensor<T> out(std::move(new_shape), x.values());
  if (g)
    g->record([x, out]() mutable {
      if (!out.has_grad()) return;
      const T* go = out.grad();
      T* gx = x.grad();
      for (std::int64_t i = 0; i < out.size(); ++i) gx[i] += go[i];
    });
  return out;
}

// [A,B,C,D] -> [A,C,B,D]; its own inverse, which the backward pass relies on.
template <typename T>
Tensor<T> transpose_0213(Graph<T>* g, const Tensor<T>& x) {
  detail::require(x.rank() == 4, "transpose_0213: input must be rank 4");
  const std::int64_t a = x.dim(0), b = x.dim(1), c = x.dim(2), d = x.dim(3);
  Tensor<T> out({static_cast<int>(a), static_cast<int>(c), static_cast<int>(b),
                 static_cast<int>(d)});
  const T* px = x.data();
  T* po = out.data();
  for (std::int64_t i = 0; i < a; ++i)
    for (std::int64_t j = 0; j < b; ++j)
      for (std::int64_t k = 0; k < c; ++k) {
        const T* src = px + ((i * b + j) * c + k) * d;
        T* dst = po + ((i * c + k) * b + j) * d;
        for (std::int64_t l = 0; l < d; ++l) dst[l] = src[l];
      }
  if (g)
    g->record([x, out, a, b, c, d]() mutable {
      if (!out.has_grad()) return;
      const T* go = out.grad();
      T* gx = x.grad();
      for (std::int64_t i = 0; i < a; ++i)
        for (std::int64_t j = 0; j < b; ++j)
          for (std::int64_t k = 0; k < c; ++k) {
            const T* src = go + ((i * c + k) * b + j) * d;
            T* dst = gx + ((i * b + j) * c + k) * d;
            for (std::int64_t l = 0; l < d; ++l) dst[l] += src[l];
          }
    });
  return out;
}

template <typename T>
Tensor<T> concat_last(Graph<T>* g, const std::vector<Tensor<T>>& parts) {
  detail::require(!parts.empty(), "concat_last: no inputs");
  Shape lead = parts[0].shape();
  lead.pop_back();
  int total = 0;
  for (const auto& p : parts) {
    Shape pl = p.shape();
    const int c = pl.back();
    pl.pop_back();
    detail::require(pl == lead, "concat_last: leading-dimension mismatch");
    total += c;
  }
  Shape out_shape = parts[0].shape();
  out_shape.back() = total;
  Tensor<T> out(out_shape);
  const std::int64_t rows = out.size() / total;
  T* po = out.data();
  int offset = 0;
  for (const auto& p : parts) {
    const int c = p.dim(-1);
    const T* pp = p.data();
    for (std::int64_t r = 0; r < rows; ++r)
      for (int i = 0; i < c; ++i) po[r * total + offset + i] = pp[r * c + i];
    offset += c;
  }
  if (g)
    g->record([parts, out, rows, total]() mutable {
      if (!out.has_grad()) return;
      const T* go = out.grad();
      int offset = 0;
      for (auto& p : parts) {
        const int c = p.dim(-1);
        T* gp = p.grad();
        for (std::int64_t r = 0; r < rows; ++r)
          for (int i = 0; i < c; ++i) gp[r * c + i] += go[r * total + offset + i];
        offset += c;
      }
    });
  return out;
}

template <typename T>
std::vector<Tensor<T>> split_last(Graph<T>* g, const Tensor<T>& x, int n_parts) {
  const int c_total = x.dim(-1);
  detail::require(n_parts >= 1 && c_total % n_parts == 0,
                  "split_last: last axis " + std::to_string(c_total) + " not divisible into " +
                      std::to_string(n_parts) + " parts");
  const int c = c_total / n_parts;
  Shape part_shape = x.shape();
  part_shape.back() = c;
  const std::int64_t rows = x.size() / c_total;
  const T* px = x.data();
  std::vector<Tensor<T>> parts;
  parts.reserve(static_cast<std::size_t>(n_parts));
  for (int s = 0; s < n_parts; ++s) {
    Tensor<T> part(part_shape);
    T* pp = part.data();
    for (std::int64_t r = 0; r < rows; ++r)
      for (int i = 0; i < c; ++i) pp[r * c + i] = px[r * c_total + s * c + i];
    parts.push_back(std::move(part));
  }
  if (g)
    g->record([x, parts, rows, c, c_total]() mutable {
      T* gx = nullptr;
      for (int s = 0; s < static_cast<int>(parts.size()); ++s) {
        if (!parts[static_cast<std::size_t>(s)].has_grad()) continue;
        if (!gx) gx = x.grad();
        const T* gp = parts[static_cast<std::size_t>(s)].grad();
        for (std::int64_t r = 0; r < rows; ++r)
          for (int i = 0; i < c; ++i) gx[r * c_total + s * c + i] += gp[r * c + i];
      }
    });
  return parts;
}

// ---------------------------------------------------------------------------
// Convolutions
// ---------------------------------------------------------------------------

// x[B,H,W,Cin] cross-correlated with k[KH,KW,Cin,Cout].
template <typename T>
Tensor<T> conv2d(Graph<T>* g, const Tensor<T>& x, const Tensor<T>& k, int stride_h, int stride_w,
                 Padding padding) {
  detail::require(x.rank() == 4 && k.rank() == 4, "conv2d: inputs must be rank 4");
  detail::require(stride_h >= 1 && stride_w >= 1, "conv2d: stride must be >= 1");
  const int b_dim = x.dim(0), h_dim = x.dim(1), w_dim = x.dim(2), c_in = x.dim(3);
  const int kh = k.dim(0), kw = k.dim(1);
  detail::require(k.dim(2) == c_in, "conv2d: channel mismatch (input " + std::to_string(c_in) +
                                        ", kernel " + std::to_string(k.dim(2)) + ")");
  const int c_out = k.dim(3);
  const auto ph = detail::pad_for(h_dim, kh, stride_h, padding);
  const auto pw = detail::pad_for(w_dim, kw, stride_w, padding);

  Tensor<T> out({b_dim, ph.out, pw.out, c_out});
  const T* px = x.data();
  const T* pk = k.data();
  T* po = out.data();
#if defined(_OPENMP)
#pragma omp parallel for collapse(2) schedule(static)
#endif
  for (int b = 0; b < b_dim; ++b)
    for (int oh = 0; oh < ph.out; ++oh)
      for (int ow = 0; ow < pw.out; ++ow) {
        T* orow = po + ((static_cast<std::int64_t>(b) * ph.out + oh) * pw.out + ow) * c_out;
        for (int ik = 0; ik < kh; ++ik) {
          const int ih = oh * stride_h - ph.lo + ik;
          if (ih < 0 || ih >= h_dim) continue;
          for (int jk = 0; jk < kw; ++jk) {
            const int iw = ow * stride_w - pw.lo + jk;
            if (iw < 0 || iw >= w_dim) continue;
            const T* xrow = px + ((static_cast<std::int64_t>(b) * h_dim + ih) * w_dim + iw) * c_in;
            const T* krow = pk + (static_cast<std::int64_t>(ik) * kw + jk) * c_in * c_out;
            for (int ci = 0; ci < c_in; ++ci) {
              const T xv = xrow[ci];
              const T* kk = krow + static_cast<std::int64_t>(ci) * c_out;
              for (int co = 0; co < c_out; ++co) orow[co] += xv * kk[co];
            }
          }
        }
      }
  detail::check_finite(out, "conv2d");

  if (g)
    g->record([x, k, out, b_dim, h_dim, w_dim, c_in, kh, kw, c_out, ph, pw, stride_h,
               stride_w]() mutable {
      if (!out.has_grad()) return;
      const T* go = out.grad();
      const T* px = x.data();
      const T* pk = k.data();
      T* gx = x.grad();
      T* gk = k.grad();
      // dx: gather over the kernel taps that could have produced each input cell
#if defined(_OPENMP)
#pragma omp parallel for collapse(2) schedule(static)
#endif
      for (int b = 0; b < b_dim; ++b)
        for (int ih = 0; ih < h_dim; ++ih)
          for (int iw = 0; iw < w_dim; ++iw) {
            T* gxrow = gx + ((static_cast<std::int64_t>(b) * h_dim + ih) * w_dim + iw) * c_in;
            for (int ik = 0; ik < kh; ++ik) {
              const int oh_num = ih + ph.lo - ik;
              if (oh_num < 0 || oh_num % stride_h != 0) continue;
              const int oh = oh_num / stride_h;
              if (oh >= ph.out) continue;
              for (int jk = 0; jk < kw; ++jk) {
                const int ow_num = iw + pw.lo - jk;
                if (ow_num < 0 || ow_num % stride_w != 0) continue;
                const int ow = ow_num / stride_w;
                if (ow >= pw.out) continue;
                const T* dyrow =
                    go + ((static_cast<std::int64_t>(b) * ph.out + oh) * pw.out + ow) * c_out;
                const T* krow =
                    pk + (static_cast<std::int64_t>(ik) * kw + jk) * c_in * c_out;
                for (int ci = 0; ci < c_in; ++ci)
                  gxrow[ci] += detail::dot(dyrow, krow + static_cast<std::int64_t>(ci) * c_out,
                                           static_cast<std::int64_t>(c_out));
              }
            }
          }
      // dk: each (ik,jk) tap accumulated by one thread
#if defined(_OPENMP)
#pragma omp parallel for collapse(2) schedule(static)
#endif
      for (int ik = 0; ik < kh; ++ik)
        for (int jk = 0; jk < kw; ++jk) {
          T* gkrow = gk + (static_cast<std::int64_t>(ik) * kw + jk) * c_in * c_out;
          for (int b = 0; b < b_dim; ++b)
            for (int oh = 0; oh < ph.out; ++oh) {
              const int ih = oh * stride_h - ph.lo + ik;
              if (ih < 0 || ih >= h_dim) continue;
              for (int ow = 0; ow < pw.out; ++ow) {
                const int iw = ow * stride_w - pw.lo + jk;
                if (iw < 0 || iw >= w_dim) continue;
                const T* xrow =
                    px + ((static_cast<std::int64_t>(b) * h_dim + ih) * w_dim + iw) * c_in;
                const T* dyrow =
                    go + ((static_cast<std::int64_t>(b) * ph.out + oh) * pw.out + ow) * c_out;
                for (int ci = 0; ci < c_in; ++ci) {
                  const T xv = xrow[ci];
                  T* gkk = gkrow + static_cast<std::int64_t>(ci) * c_out;
                  for (int co = 0; co < c_out; ++co) gkk[co] += xv * dyrow[co];
                }
              }
            }
        }
    });
  return out;
}

// Per-channel 1-D convolution, always "same" length. For even kernels the
// padding is kw/2-1 on the left and kw/2 on the right.
template <typename T>
Tensor<T> depthwise_conv1d(Graph<T>* g, const Tensor<T>& x, const Tensor<T>& k) {
  detail::require(x.rank() == 3, "depthwise_conv1d: input must be [B,T,C]");
  detail::require(k.rank() == 2, "depthwise_conv1d: kernel must be [kw,C]");
  const int b_dim = x.dim(0), t_dim = x.dim(1), c_dim = x.dim(2);
  const int kw = k.dim(0);
  detail::require(k.dim(1) == c_dim, "depthwise_conv1d: channel mismatch");
  const int pad_l = (kw % 2 == 0) ? kw / 2 - 1 : kw / 2;

  Tensor<T> out(x.shape());
  const T* px = x.data();
  const T* pk = k.data();
  T* po = out.data();
#if defined(_OPENMP)
#pragma omp parallel for collapse(2) schedule(static)
#endif
  for (int b = 0; b < b_dim; ++b)
    for (int t = 0; t < t_dim; ++t) {
      T* orow = po + (static_cast<std::int64_t>(b) * t_dim + t) * c_dim;
      for (int j = 0; j < kw; ++j) {
        const int ti = t - pad_l + j;
        if (ti < 0 || ti >= t_dim) continue;
        const T* xrow = px + (static_cast<std::int64_t>(b) * t_dim + ti) * c_dim;
        const T* krow = pk + static_cast<std::int64_t>(j) * c_dim;
        for (int c = 0; c < c_dim; ++c) orow[c] += xrow[c] * krow[c];
      }
    }
  detail::check_finite(out, "depthwise_conv1d");

  if (g)
    g->record([x, k, out, b_dim, t_dim, c_dim, kw, pad_l]() mutable {
      if (!out.has_grad()) return;
      const T* go = out.grad();
      const T* px = x.data();
      const T* pk = k.data();
      T* gx = x.grad();
      T* gk = k.grad();
      for (int b = 0; b < b_dim; ++b)
        for (int t = 0; t < t_dim; ++t) {
          T* gxrow = gx + (static_cast<std::int64_t>(b) * t_dim + t) * c_dim;
          for (int j = 0; j < kw; ++j) {
            const int to = t + pad_l - j;
            if (to < 0 || to >= t_dim) continue;
            const T* dyrow = go + (static_cast<std::int64_t>(b) * t_dim + to) * c_dim;
            const T* krow = pk + static_cast<std::int64_t>(j) * c_dim;
            for (int c = 0; c < c_dim; ++c) gxrow[c] += dyrow[c] * krow[c];
          }
        }
      for (int j = 0; j < kw; ++j) {
        T* gkrow = gk + static_cast<std::int64_t>(j) * c_dim;
        for (int b = 0; b < b_dim; ++b)
          for (int t = 0; t < t_dim; ++t) {
            const int ti = t - pad_l + j;
            if (ti < 0 || ti >= t_dim) continue;
            const T* xrow = px + (static_cast<std::int64_t>(b) * t_dim + ti) * c_dim;
            const T* dyrow = go + (static_cast<std::int64_t>(b) * t_dim + t) * c_dim;
            for (int c = 0; c < c_dim; ++c) gkrow[c] += xrow[c] * dyrow[c];
          }
      }
    });
  return out;
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

template <typename T>
struct BnStats {
  Tensor<T> mean;  // running mean, one per channel
  Tensor<T> var;   // running (biased) variance, initialized to ones

  explicit BnStats(int channels = 0) {
    if (channels > 0) {
      mean = Tensor<T>({channels});
      var = Tensor<T>::full({channels}, T(1));
    }
  }
};

// Normalizes over all leading axes per channel (channels = last axis). Train
// mode uses batch statistics and folds them into the running stats with
// momentum 0.9; infer mode reads the running stats.
template <typename T>
Tensor<T> batch_norm(Graph<T>* g, const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, BnStats<T>& stats, Mode mode, T eps = T(1e-5),
                     T momentum = T(0.9)) {
  const int c_dim = x.dim(-1);
  detail::require(gamma.rank() == 1 && gamma.dim(0) == c_dim, "batch_norm: gamma shape mismatch");
  detail::require(beta.rank() == 1 && beta.dim(0) == c_dim, "batch_norm: beta shape mismatch");
  detail::require(stats.mean.defined() && stats.mean.dim(0) == c_dim,
                  "batch_norm: running stats shape mismatch");
  const std::int64_t rows = x.size() / c_dim;
  if (rows == 0) throw DomainError("batch_norm: empty batch");

  Tensor<T> out(x.shape());
  const T* px = x.data();
  const T* pg = gamma.data();
  const T* pb = beta.data();
  T* po = out.data();

  std::vector<T> mean(static_cast<std::size_t>(c_dim), T(0));
  std::vector<T> var(static_cast<std::size_t>(c_dim), T(0));
  if (mode == Mode::kTrain) {
    for (std::int64_t r = 0; r < rows; ++r) {
      const T* xrow = px + r * c_dim;
      for (int c = 0; c < c_dim; ++c) mean[static_cast<std::size_t>(c)] += xrow[c];
    }
    for (int c = 0; c < c_dim; ++c) mean[static_cast<std::size_t>(c)] /= static_cast<T>(rows);
    for (std::int64_t r = 0; r < rows; ++r) {
      const T* xrow = px + r * c_dim;
      for (int c = 0; c < c_dim; ++c) {
        const T d = xrow[c] - mean[static_cast<std::size_t>(c)];
        var[static_cast<std::size_t>(c)] += d * d;
      }
    }
    for (int c = 0; c < c_dim; ++c) var[static_cast<std::size_t>(c)] /= static_cast<T>(rows);
    T* rm = stats.mean.data();
    T* rv = stats.var.data();
    for (int c = 0; c < c_dim; ++c) {
      rm[c] = momentum * rm[c] + (T(1) - momentum) * mean[static_cast<std::size_t>(c)];
      rv[c] = momentum * rv[c] + (T(1) - momentum) * var[static_cast<std::size_t>(c)];
    }
  } else {
    const T* rm = stats.mean.data();
    const T* rv = stats.var.data();
    for (int c = 0; c < c_dim; ++c) {
      mean[static_cast<std::size_t>(c)] = rm[c];
      var[static_cast<std::size_t>(c)] = rv[c];
    }
  }

  std::vector<T> inv_sigma(static_cast<std::size_t>(c_dim));
  for (int c = 0; c < c_dim; ++c)
    inv_sigma[static_cast<std::size_t>(c)] = T(1) / std::sqrt(var[static_cast<std::size_t>(c)] + eps);
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* xrow = px + r * c_dim;
    T* orow = po + r * c_dim;
    for (int c = 0; c < c_dim; ++c) {
      const std::size_t cc = static_cast<std::size_t>(c);
      orow[c] = pg[c] * (xrow[c] - mean[cc]) * inv_sigma[cc] + pb[c];
    }
  }
  detail::check_finite(out, "batch_norm");

  if (g)
    g->record([x, gamma, beta, out, mode, rows, c_dim, mean, inv_sigma]() mutable {
      if (!out.has_grad()) return;
      const T* go = out.grad();
      const T* px = x.data();
      const T* pg = gamma.data();
      T* gx = x.grad();
      T* gg = gamma.grad();
      T* gb = beta.grad();
      std::vector<T> sum_dy(static_cast<std::size_t>(c_dim), T(0));
      std::vector<T> sum_dy_xhat(static_cast<std::size_t>(c_dim), T(0));
      for (std::int64_t r = 0; r < rows; ++r) {
        const T* dyrow = go + r * c_dim;
        const T* xrow = px + r * c_dim;
        for (int c = 0; c < c_dim; ++c) {
          const std::size_t cc = static_cast<std::size_t>(c);
          const T xhat = (xrow[c] - mean[cc]) * inv_sigma[cc];
          sum_dy[cc] += dyrow[c];
          sum_dy_xhat[cc] += dyrow[c] * xhat;
        }
      }
      for (int c = 0; c < c_dim; ++c) {
        const std::size_t cc = static_cast<std::size_t>(c);
        gg[c] += sum_dy_xhat[cc];
        gb[c] += sum_dy[cc];
      }
      const T inv_rows = T(1) / static_cast<T>(rows);
      for (std::int64_t r = 0; r < rows; ++r) {
        const T* dyrow = go + r * c_dim;
        const T* xrow = px + r * c_dim;
        T* gxrow = gx + r * c_dim;
        for (int c = 0; c < c_dim; ++c) {
          const std::size_t cc = static_cast<std::size_t>(c);
          if (mode == Mode::kTrain) {
            const T xhat = (xrow[c] - mean[cc]) * inv_sigma[cc];
            gxrow[c] += pg[c] * inv_sigma[cc] *
                        (dyrow[c] - sum_dy[cc] * inv_rows - xhat * sum_dy_xhat[cc] * inv_rows);
          } else {
            gxrow[c] += pg[c] * inv_sigma[cc] * dyrow[c];
          }
        }
      }
    });
  return out;
}

template <typename T>
Tensor<T> layer_norm(Graph<T>* g, const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, T eps = T(1e-5)) {
  const int d = x.dim(-1);
  detail::require(gamma.rank() == 1 && gamma.dim(0) == d, "layer_norm: gamma shape mismatch");
  detail::require(beta.rank() == 1 && beta.dim(0) == d, "layer_norm: beta shape mismatch");
  const std::int64_t rows = x.size() / d;

  Tensor<T> out(x.shape());
  std::vector<T> mu(static_cast<std::size_t>(rows));
  std::vector<T> inv_sigma(static_cast<std::size_t>(rows));
  const T* px = x.data();
  const T* pg = gamma.data();
  const T* pb = beta.data();
  T* po = out.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* xrow = px + r * d;
    T m = T(0);
    for (int i = 0; i < d; ++i) m += xrow[i];
    m /= static_cast<T>(d);
    T v = T(0);
    for (int i = 0; i < d; ++i) {
      const T dv = xrow[i] - m;
      v += dv * dv;
    }
    v /= static_cast<T>(d);
    const T is = T(1) / std::sqrt(v + eps);
    mu[static_cast<std::size_t>(r)] = m;
    inv_sigma[static_cast<std::size_t>(r)] = is;
    T* orow = po + r * d;
    for (int i = 0; i < d; ++i) orow[i] = pg[i] * (xrow[i] - m) * is + pb[i];
  }
  detail::check_finite(out, "layer_norm");

  if (g)
    g->record([x, gamma, beta, out, rows, d, mu, inv_sigma]() mutable {
      if (!out.has_grad()) return;
      const T* go = out.grad();
      const T* px = x.data();
      const T* pg = gamma.data();
      T* gx = x.grad();
      T* gg = gamma.grad();
      T* gb = beta.grad();
      for (std::int64_t r = 0; r < rows; ++r) {
        const T* dyrow = go + r * d;
        const T* xrow = px + r * d;
        const T m = mu[static_cast<std::size_t>(r)];
        const T is = inv_sigma[static_cast<std::size_t>(r)];
        T sum_h = T(0), sum_h_xhat = T(0);
        for (int i = 0; i < d; ++i) {
          const T xhat = (xrow[i] - m) * is;
          const T h = pg[i] * dyrow[i];
          sum_h += h;
          sum_h_xhat += h * xhat;
          gg[i] += dyrow[i] * xhat;
          gb[i] += dyrow[i];
        }
        const T inv_d = T(1) / static_cast<T>(d);
        T* gxrow = gx + r * d;
        for (int i = 0; i < d; ++i) {
          const T xhat = (xrow[i] - m) * is;
          const T h = pg[i] * dyrow[i];
          gxrow[i] += is * (h - sum_h * inv_d - xhat * sum_h_xhat * inv_d);
        }
      }
    });
  return out;
}

// ---------------------------------------------------------------------------
// Pooling
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> global_avg_pool_2d(Graph<T>* g, const Tensor<T>& x) {
  detail::require(x.rank() == 4, "global_avg_pool_2d: input must be [B,H,W,C]");
  const int b_dim = x.dim(0), h_dim = x.dim(1), w_dim = x.dim(2), c_dim = x.dim(3);
  Tensor<T> out({b_dim, c_dim});
  const std::int64_t area = static_cast<std::int64_t>(h_dim) * w_dim;
  const T* px = x.data();
  T* po = out.data();
  for (int b = 0; b < b_dim; ++b) {
    T* orow = po + static_cast<std::int64_t>(b) * c_dim;
    const T* xb = px + static_cast<std::int64_t>(b) * area * c_dim;
    for (std::int64_t r = 0; r < area; ++r)
      for (int c = 0; c < c_dim; ++c) orow[c] += xb[r * c_dim + c];
    for (int c = 0; c < c_dim; ++c) orow[c] /= static_cast<T>(area);
  }
  detail::check_finite(out, "global_avg_pool_2d");
  if (g)
    g->record([x, out, b_dim, area, c_dim]() mutable {
      if (!out.has_grad()) return;
      const T* go = out.grad();
      T* gx = x.grad();
      const T inv = T(1) / static_cast<T>(area);
      for (int b = 0; b < b_dim; ++b) {
        const T* dyrow = go + static_cast<std::int64_t>(b) * c_dim;
        T* gxb = gx + static_cast<std::int64_t>(b) * area * c_dim;
        for (std::int64_t r = 0; r < area; ++r)
          for (int c = 0; c < c_dim; ++c) gxb[r * c_dim + c] += dyrow[c] * inv;
      }
    });
  return out;
}

// Mean over the frequency axis: [B,T,F,C] -> [B,T,C].
template <typename T>
Tensor<T> freq_avg_pool(Graph<T>* g, const Tensor<T>& x) {
  detail::require(x.rank() == 4, "freq_avg_pool: input must be [B,T,F,C]");
  const int b_dim = x.dim(0), t_dim = x.dim(1), f_dim = x.dim(2), c_dim = x.dim(3);
  Tensor<T> out({b_dim, t_dim, c_dim});
  const T* px = x.data();
  T* po = out.data();
  for (std::int64_t bt = 0; bt < static_cast<std::int64_t>(b_dim) * t_dim; ++bt) {
    const T* xrow = px + bt * f_dim * c_dim;
    T* orow = po + bt * c_dim;
    for (int f = 0; f < f_dim; ++f)
      for (int c = 0; c < c_dim; ++c) orow[c] += xrow[static_cast<std::int64_t>(f) * c_dim + c];
    for (int c = 0; c < c_dim; ++c) orow[c] /= static_cast<T>(f_dim);
  }
  detail::check_finite(out, "freq_avg_pool");
  if (g)
    g->record([x, out, b_dim, t_dim, f_dim, c_dim]() mutable {
      if (!out.has_grad()) return;
      const T* go = out.grad();
      T* gx = x.grad();
      const T inv = T(1) / static_cast<T>(f_dim);
      for (std::int64_t bt = 0; bt < static_cast<std::int64_t>(b_dim) * t_dim; ++bt) {
        const T* dyrow = go + bt * c_dim;
        T* gxrow = gx + bt * f_dim * c_dim;
        for (int f = 0; f < f_dim; ++f)
          for (int c = 0; c < c_dim; ++c)
            gxrow[static_cast<std::int64_t>(f) * c_dim + c] += dyrow[c] * inv;
      }
    });
  return out;
}

template <typename T>
Tensor<T> global_avg_pool_1d(Graph<T>* g, const Tensor<T>& x) {
  detail::require(x.rank() == 3, "global_avg_pool_1d: input must be [B,T,C]");
  const int b_dim = x.dim(0), t_dim = x.dim(1), c_dim = x.dim(2);
  Tensor<T> out({b_dim, c_dim});
  const T* px = x.data();
  T* po = out.data();
  for (int b = 0; b < b_dim; ++b) {
    const T* xb = px + static_cast<std::int64_t>(b) * t_dim * c_dim;
    T* orow = po + static_cast<std::int64_t>(b) * c_dim;
    for (int t = 0; t < t_dim; ++t)
      for (int c = 0; c < c_dim; ++c) orow[c] += xb[static_cast<std::int64_t>(t) * c_dim + c];
    for (int c = 0; c < c_dim; ++c) orow[c] /= static_cast<T>(t_dim);
  }
  detail::check_finite(out, "global_avg_pool_1d");
  if (g)
    g->record([x, out, b_dim, t_dim, c_dim]() mutable {
      if (!out.has_grad()) return;
      const T* go = out.grad();
      T* gx = x.grad();
      const T inv = T(1) / static_cast<T>(t_dim);
      for (int b = 0; b < b_dim; ++b) {
        const T* dyrow = go + static_cast<std::int64_t>(b) * c_dim;
        T* gxb = gx + static_cast<std::int64_t>(b) * t_dim * c_dim;
        for (int t = 0; t < t_dim; ++t)
          for (int c = 0; c < c_dim; ++c) gxb[static_cast<std::int64_t>(t) * c_dim + c] += dyrow[c] * inv;
      }
    });
  return out;
}

// x[B,H,W,C] scaled per (batch, channel): out = x * s[B,C]. The SE block's
// excitation step.
template <typename T>
Tensor<T> scale_channels(Graph<T>* g, const Tensor<T>& x, const Tensor<T>& s) {
  detail::require(x.rank() == 4 && s.rank() == 2, "scale_channels: expect x[B,H,W,C], s[B,C]");
  detail::require(x.dim(0) == s.dim(0) && x.dim(3) == s.dim(1),
                  "scale_channels: batch/channel mismatch");
  const int b_dim = x.dim(0), c_dim = x.dim(3);
  const std::int64_t area = static_cast<std::int64_t>(x.dim(1)) * x.dim(2);
  Tensor<T> out(x.shape());
  const T* px = x.data();
  const T* ps = s.data();
  T* po = out.data();
  for (int b = 0; b < b_dim; ++b) {
    const T* srow = ps + static_cast<std::int64_t>(b) * c_dim;
    const std::int64_t base = static_cast<std::int64_t>(b) * area * c_dim;
    for (std::int64_t r = 0; r < area; ++r)
      for (int c = 0; c < c_dim; ++c) po[base + r * c_dim + c] = px[base + r * c_dim + c] * srow[c];
  }
  detail::check_finite(out, "scale_channels");
  if (g)
    g->record([x, s, out, b_dim, area, c_dim]() mutable {
      if (!out.has_grad()) return;
      const T* go = out.grad();
      const T* px = x.data();
      const T* ps = s.data();
      T* gx = x.grad();
      T* gs = s.grad();
      for (int b = 0; b < b_dim; ++b) {
        const T* srow = ps + static_cast<std::int64_t>(b) * c_dim;
        T* gsrow = gs + static_cast<std::int64_t>(b) * c_dim;
        const std::int64_t base = static_cast<std::int64_t>(b) * area * c_dim;
        for (std::int64_t r = 0; r < area; ++r)
          for (int c = 0; c < c_dim; ++c) {
            const std::int64_t i = base + r * c_dim + c;
            gx[i] += go[i] * srow[c];
            gsrow[c] += go[i] * px[i];
          }
      }
    });
  return out;
}

// ---------------------------------------------------------------------------
// Dropout, reductions, attention, loss
// ---------------------------------------------------------------------------

// Train mode zeroes each element with probability `rate` and scales survivors
// by 1/(1-rate); infer mode (and rate 0) returns the input unchanged.
template <typename T>
Tensor<T> dropout(Graph<T>* g, const Tensor<T>& x, double rate, Mode mode, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout: rate must be in [0, 1)");
  if (mode == Mode::kInfer || rate == 0.0) return x;
  Tensor<T> out(x.shape());
  auto mask = std::make_shared<std::vector<T>>(static_cast<std::size_t>(x.size()));
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  const T* px = x.data();
  T* po = out.data();
  for (std::int64_t i = 0; i < x.size(); ++i) {
    const T m = rng.uniform() < rate ? T(0) : keep_scale;
    (*mask)[static_cast<std::size_t>(i)] = m;
    po[i] = px[i] * m;
  }
  detail::check_finite(out, "dropout");
  if (g)
    g->record([x, out, mask]() mutable {
      if (!out.has_grad()) return;
      const T* go = out.grad();
      T* gx = x.grad();
      for (std::int64_t i = 0; i < out.size(); ++i) gx[i] += go[i] * (*mask)[static_cast<std::size_t>(i)];
    });
  return out;
}

// Convenience overload matching the (x, rate, mode, seed) contract.
template <typename T>
Tensor<T> dropout(Graph<T>* g, const Tensor<T>& x, double rate, Mode mode, std::uint64_t seed) {
  Rng rng(seed);
  return dropout(g, x, rate, mode, rng);
}

template <typename T>
Tensor<T> reduce_sum(Graph<T>* g, const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::scalar(T(0));
  const T* px = x.data();
  T acc = T(0);
  for (std::int64_t i = 0; i < x.size(); ++i) acc += px[i];
  out[0] = acc;
  detail::check_finite(out, "reduce_sum");
  if (g)
    g->record([x, out]() mutable {
      if (!out.has_grad()) return;
      const T dy = out.grad()[0];
      T* gx = x.grad();
      for (std::int64_t i = 0; i < x.size(); ++i) gx[i] += dy;
    });
  return out;
}

template <typename T>
Tensor<T> reduce_mean(Graph<T>* g, const Tensor<T>& x) {
  Tensor<T> sum = reduce_sum(g, x);
  return scale(g, sum, T(1) / static_cast<T>(x.size()));
}

// Multi-head scaled dot-product self-attention with full bidirectional
// context (no masking, no positional encoding); scale is 1/sqrt(head_size).
// Wq/Wk/Wv: [d_model, heads*head_size], Wo: [heads*head_size, d_model].
template <typename T>
Tensor<T> mhsa(Graph<T>* g, const Tensor<T>& x, int heads, int head_size, const Tensor<T>& wq,
               const Tensor<T>& bq, const Tensor<T>& wk, const Tensor<T>& bk, const Tensor<T>& wv,
               const Tensor<T>& bv, const Tensor<T>& wo, const Tensor<T>& bo) {
  detail::require(x.rank() == 3, "mhsa: input must be [B,T,d_model]");
  const int b_dim = x.dim(0), t_dim = x.dim(1), d_model = x.dim(2);
  const int inner = heads * head_size;
  detail::require(wq.dim(0) == d_model && wq.dim(1) == inner, "mhsa: Wq shape mismatch");
  detail::require(wk.dim(0) == d_model && wk.dim(1) == inner, "mhsa: Wk shape mismatch");
  detail::require(wv.dim(0) == d_model && wv.dim(1) == inner, "mhsa: Wv shape mismatch");
  detail::require(wo.dim(0) == inner && wo.dim(1) == d_model, "mhsa: Wo shape mismatch");

  auto to_heads = [&](const Tensor<T>& proj) {
    Tensor<T> r = reshape(g, proj, {b_dim, t_dim, heads, head_size});
    Tensor<T> tr = transpose_0213(g, r);  // [B,heads,T,head_size]
    return reshape(g, tr, {b_dim * heads, t_dim, head_size});
  };

  Tensor<T> q = to_heads(dense(g, x, wq, bq));
  Tensor<T> k = to_heads(dense(g, x, wk, bk));
  Tensor<T> v = to_heads(dense(g, x, wv, bv));

  Tensor<T> scores = bmm(g, q, k, /*transpose_b=*/true);
  scores = scale(g, scores, static_cast<T>(1.0 / std::sqrt(static_cast<double>(head_size))));
  Tensor<T> attn = softmax(g, scores, -1);
  Tensor<T> ctx = bmm(g, attn, v, /*transpose_b=*/false);

  Tensor<T> merged = reshape(g, ctx, {b_dim, heads, t_dim, head_size});
  merged = transpose_0213(g, merged);  // [B,T,heads,head_size]
  merged = reshape(g, merged, {b_dim, t_dim, inner});
  return dense(g, merged, wo, bo);
}

// Mean over the batch of -log(p[label]), with the probability floored at
// 1e-12. `probs` rows are expected to already sum to 1 (softmax output).
template <typename T>
Tensor<T> sparse_ce(Graph<T>* g, const Tensor<T>& probs, const std::vector<int>& labels) {
  detail::require(probs.rank() == 2, "sparse_ce: probs must be [B,K]");
  const int b_dim = probs.dim(0);
  const int k_dim = probs.dim(1);
  if (static_cast<int>(labels.size()) != b_dim)
    throw ShapeError("sparse_ce: label count does not match batch size");
  for (int i = 0; i < b_dim; ++i)
    if (labels[static_cast<std::size_t>(i)] < 0 || labels[static_cast<std::size_t>(i)] >= k_dim)
      throw LabelError("sparse_ce: label " + std::to_string(labels[static_cast<std::size_t>(i)]) +
                       " out of range for " + std::to_string(k_dim) + " classes");

  const T floor = T(1e-12);
  const T* pp = probs.data();
  T acc = T(0);
  for (int i = 0; i < b_dim; ++i) {
    const T p = pp[static_cast<std::int64_t>(i) * k_dim + labels[static_cast<std::size_t>(i)]];
    acc += -std::log(std::max(p, floor));
  }
  Tensor<T> out = Tensor<T>::scalar(acc / static_cast<T>(b_dim));
  detail::check_finite(out, "sparse_ce");
  if (g)
    g->record([probs, out, labels, b_dim, k_dim, floor]() mutable {
      if (!out.has_grad()) return;
      const T dy = out.grad()[0];
      const T* pp = probs.data();
      T* gp = probs.grad();
      const T inv_b = T(1) / static_cast<T>(b_dim);
      for (int i = 0; i < b_dim; ++i) {
        const std::int64_t idx =
            static_cast<std::int64_t>(i) * k_dim + labels[static_cast<std::size_t>(i)];
        if (pp[idx] >= floor) gp[idx] += dy * (-inv_b / pp[idx]);
      }
    });
  return out;
}

// Row-wise argmax; plain helper for accuracy computations.
template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& probs) {
  detail::require(probs.rank() == 2, "argmax_rows: input must be [B,K]");
  const int b_dim = probs.dim(0);
  const int k_dim = probs.dim(1);
  std::vector<int> out(static_cast<std::size_t>(b_dim));
  const T* pp = probs.data();
  for (int i = 0; i < b_dim; ++i) {
    int best = 0;
    for (int k = 1; k < k_dim; ++k)
      if (pp[static_cast<std::int64_t>(i) * k_dim + k] >
          pp[static_cast<std::int64_t>(i) * k_dim + best])
        best = k;
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

}  // namespace antispoof
