#pragma once

// Independent reference implementations used only by tests. Everything here
// is written as plainly as possible (no shared helpers with the library) so
// disagreements point at the library, not at the oracle.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "antispoof/cqt.hpp"
#include "antispoof/metrics.hpp"
#include "antispoof/model.hpp"
#include "antispoof/tensor.hpp"

namespace oracles {

using antispoof::CqtConfig;
using antispoof::CqtSpectrogram;
using antispoof::ModelConfig;
using antispoof::Padding;
using antispoof::ScoreRecord;
using antispoof::Shape;
using antispoof::TdcfConfig;
using antispoof::Tensor;
using antispoof::Variant;

// ---------------------------------------------------------------------------
// Convolutions and pools
// ---------------------------------------------------------------------------

struct Pad2 {
  int out = 0;
  int lo = 0;
};

inline Pad2 pad2_for(int in, int kernel, int stride, Padding padding) {
  Pad2 p;
  if (padding == Padding::kSame) {
    p.out = (in + stride - 1) / stride;
    const int total = std::max(0, (p.out - 1) * stride + kernel - in);
    p.lo = total / 2;
  } else {
    p.out = (in - kernel) / stride + 1;
    p.lo = 0;
  }
  return p;
}

// Plain quad loop; per output element the taps accumulate in (kh, kw, ci)
// ascending order, matching the production kernel's documented order.
template <typename T>
Tensor<T> naive_conv2d(const Tensor<T>& x, const Tensor<T>& k, int stride_h, int stride_w,
                       Padding padding) {
  const int B = x.dim(0), H = x.dim(1), W = x.dim(2), CI = x.dim(3);
  const int KH = k.dim(0), KW = k.dim(1), CO = k.dim(3);
  const Pad2 ph = pad2_for(H, KH, stride_h, padding);
  const Pad2 pw = pad2_for(W, KW, stride_w, padding);
  Tensor<T> out({B, ph.out, pw.out, CO});
  for (int b = 0; b < B; ++b)
    for (int oh = 0; oh < ph.out; ++oh)
      for (int ow = 0; ow < pw.out; ++ow)
        for (int co = 0; co < CO; ++co) {
          T acc = T(0);
          for (int ik = 0; ik < KH; ++ik)
            for (int jk = 0; jk < KW; ++jk)
              for (int ci = 0; ci < CI; ++ci) {
                const int ih = oh * stride_h - ph.lo + ik;
                const int iw = ow * stride_w - pw.lo + jk;
                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                const T xv = x[((static_cast<std::int64_t>(b) * H + ih) * W + iw) * CI + ci];
                const T kv = k[((static_cast<std::int64_t>(ik) * KW + jk) * CI + ci) * CO + co];
                acc += xv * kv;
              }
          out[((static_cast<std::int64_t>(b) * ph.out + oh) * pw.out + ow) * CO + co] = acc;
        }
  return out;
}

template <typename T>
Tensor<T> naive_depthwise_conv1d(const Tensor<T>& x, const Tensor<T>& k) {
  const int B = x.dim(0), TT = x.dim(1), C = x.dim(2);
  const int KW = k.dim(0);
  const int pad_l = (KW % 2 == 0) ? KW / 2 - 1 : KW / 2;
  Tensor<T> out(x.shape());
  for (int b = 0; b < B; ++b)
    for (int t = 0; t < TT; ++t)
      for (int c = 0; c < C; ++c) {
        T acc = T(0);
        for (int j = 0; j < KW; ++j) {
          const int ti = t - pad_l + j;
          if (ti < 0 || ti >= TT) continue;
          acc += x[(static_cast<std::int64_t>(b) * TT + ti) * C + c] *
                 k[static_cast<std::int64_t>(j) * C + c];
        }
        out[(static_cast<std::int64_t>(b) * TT + t) * C + c] = acc;
      }
  return out;
}

template <typename T>
Tensor<T> naive_dense(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  const int d_in = w.dim(0), d_out = w.dim(1);
  const std::int64_t rows = x.size() / d_in;
  Shape out_shape = x.shape();
  out_shape.back() = d_out;
  Tensor<T> out(out_shape);
  for (std::int64_t r = 0; r < rows; ++r)
    for (int o = 0; o < d_out; ++o) {
      T acc = b[o];
      for (int i = 0; i < d_in; ++i)
        acc += x[r * d_in + i] * w[static_cast<std::int64_t>(i) * d_out + o];
      out[r * d_out + o] = acc;
    }
  return out;
}

template <typename T>
Tensor<T> naive_gap_2d(const Tensor<T>& x) {
  const int B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  Tensor<T> out({B, C});
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      T acc = T(0);
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w)
          acc += x[((static_cast<std::int64_t>(b) * H + h) * W + w) * C + c];
      out[static_cast<std::int64_t>(b) * C + c] = acc / static_cast<T>(H * W);
    }
  return out;
}

template <typename T>
Tensor<T> naive_freq_pool(const Tensor<T>& x) {
  const int B = x.dim(0), TT = x.dim(1), F = x.dim(2), C = x.dim(3);
  Tensor<T> out({B, TT, C});
  for (int b = 0; b < B; ++b)
    for (int t = 0; t < TT; ++t)
      for (int c = 0; c < C; ++c) {
        T acc = T(0);
        for (int f = 0; f < F; ++f)
          acc += x[((static_cast<std::int64_t>(b) * TT + t) * F + f) * C + c];
        out[(static_cast<std::int64_t>(b) * TT + t) * C + c] = acc / static_cast<T>(F);
      }
  return out;
}

template <typename T>
Tensor<T> naive_gap_1d(const Tensor<T>& x) {
  const int B = x.dim(0), TT = x.dim(1), C = x.dim(2);
  Tensor<T> out({B, C});
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      T acc = T(0);
      for (int t = 0; t < TT; ++t) acc += x[(static_cast<std::int64_t>(b) * TT + t) * C + c];
      out[static_cast<std::int64_t>(b) * C + c] = acc / static_cast<T>(TT);
    }
  return out;
}

// Full multi-head attention from first principles: per-(batch, head, query)
// score loop, stable softmax, weighted value sum, then the output projection.
template <typename T>
Tensor<T> naive_mhsa(const Tensor<T>& x, int heads, int head_size, const Tensor<T>& wq,
                     const Tensor<T>& bq, const Tensor<T>& wk, const Tensor<T>& bk,
                     const Tensor<T>& wv, const Tensor<T>& bv, const Tensor<T>& wo,
                     const Tensor<T>& bo) {
  const int B = x.dim(0), TT = x.dim(1);
  const int inner = heads * head_size;
  const Tensor<T> q = naive_dense(x, wq, bq);
  const Tensor<T> k = naive_dense(x, wk, bk);
  const Tensor<T> v = naive_dense(x, wv, bv);
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(head_size)));
  Tensor<T> ctx({B, TT, inner});
  auto at = [&](const Tensor<T>& m, int b, int t, int h, int s) {
    return m[((static_cast<std::int64_t>(b) * TT + t) * heads + h) * head_size + s];
  };
  for (int b = 0; b < B; ++b)
    for (int h = 0; h < heads; ++h)
      for (int tq = 0; tq < TT; ++tq) {
        std::vector<T> scores(static_cast<std::size_t>(TT));
        T mx = -std::numeric_limits<T>::infinity();
        for (int tk = 0; tk < TT; ++tk) {
          T dot = T(0);
          for (int s = 0; s < head_size; ++s) dot += at(q, b, tq, h, s) * at(k, b, tk, h, s);
          scores[static_cast<std::size_t>(tk)] = dot * scale;
          mx = std::max(mx, scores[static_cast<std::size_t>(tk)]);
        }
        T z = T(0);
        for (auto& s : scores) {
          s = std::exp(s - mx);
          z += s;
        }
        for (int s = 0; s < head_size; ++s) {
          T acc = T(0);
          for (int tk = 0; tk < TT; ++tk)
            acc += (scores[static_cast<std::size_t>(tk)] / z) * at(v, b, tk, h, s);
          ctx[((static_cast<std::int64_t>(b) * TT + tq) * heads + h) * head_size + s] = acc;
        }
      }
  return naive_dense(ctx, wo, bo);
}

// ---------------------------------------------------------------------------
// Metric sweeps by exhaustive counting
// ---------------------------------------------------------------------------

struct BruteRates {
  double threshold = 0.0;
  double frr = 0.0;
  double far = 0.0;
};

inline std::vector<BruteRates> brute_sweep(const std::vector<ScoreRecord>& records) {
  std::vector<double> candidates;
  for (const auto& r : records) candidates.push_back(r.score);
  std::sort(candidates.begin(), candidates.end());
  candidates.push_back(std::numeric_limits<double>::infinity());
  std::int64_t n_bona = 0, n_spoof = 0;
  for (const auto& r : records) (r.bonafide ? n_bona : n_spoof) += 1;
  std::vector<BruteRates> out;
  for (double t : candidates) {
    std::int64_t miss = 0, fa = 0;
    for (const auto& r : records) {
      if (r.bonafide && r.score < t) ++miss;
      if (!r.bonafide && r.score >= t) ++fa;
    }
    BruteRates p;
    p.threshold = t;
    p.frr = static_cast<double>(miss) / static_cast<double>(n_bona);
    p.far = static_cast<double>(fa) / static_cast<double>(n_spoof);
    out.push_back(p);
  }
  return out;
}

inline std::pair<double, double> brute_eer(const std::vector<ScoreRecord>& records) {
  double best_gap = std::numeric_limits<double>::infinity();
  double best_eer = 0.0, best_t = 0.0;
  for (const auto& p : brute_sweep(records)) {
    const double gap = std::abs(p.frr - p.far);
    if (gap < best_gap) {
      best_gap = gap;
      best_eer = (p.frr + p.far) / 2.0;
      best_t = p.threshold;
    }
  }
  return {best_eer, best_t};
}

inline std::pair<double, double> brute_min_tdcf(const std::vector<ScoreRecord>& records,
                                                const TdcfConfig& cfg) {
  const double c1 =
      cfg.pi_tar * (cfg.c_miss_cm - cfg.c_miss_asv * cfg.p_miss_asv) -
      cfg.pi_non * cfg.c_fa_asv * cfg.p_fa_asv;
  const double c2 = cfg.c_fa_cm * cfg.pi_spoof * (1.0 - cfg.p_miss_spoof_asv);
  const double normalizer = std::min(c1, c2);
  double best = std::numeric_limits<double>::infinity(), best_t = 0.0;
  for (const auto& p : brute_sweep(records)) {
    const double value = (c1 * p.frr + c2 * p.far) / normalizer;
    if (value < best) {
      best = value;
      best_t = p.threshold;
    }
  }
  return {best, best_t};
}

// ---------------------------------------------------------------------------
// Chunk labels, splice diffing
// ---------------------------------------------------------------------------

inline std::vector<int> naive_chunk_labels(int frames, int hop_samples, int window, int hop_frames,
                                           const std::vector<std::int64_t>& boundaries) {
  std::vector<int> labels;
  for (int start = 0; start + window <= frames; start += hop_frames) {
    int label = 0;
    for (auto b : boundaries) {
      const std::int64_t lo = static_cast<std::int64_t>(start) * hop_samples;
      const std::int64_t hi = static_cast<std::int64_t>(start + window) * hop_samples;
      if (b >= lo && b < hi) label = 1;
    }
    labels.push_back(label);
  }
  return labels;
}

// Recovers insertion boundaries by walking host and output together: runs of
// equality advance both, a divergence opens an inserted segment which ends at
// the next position where `confirm` consecutive samples realign with the
// host. Assumes inserted material differs from the host at the first sample
// (true for the random clips the tests build) and that host runs between
// insertions are at least `confirm` samples long.
inline std::vector<std::int64_t> recover_boundaries(const std::vector<float>& host,
                                                    const std::vector<float>& out,
                                                    int confirm = 8) {
  std::vector<std::int64_t> boundaries;
  std::size_t i = 0, j = 0;
  auto realigned = [&](std::size_t oj, std::size_t hi) {
    // With the host exhausted, the only valid realignment is the output end.
    if (hi >= host.size()) return oj >= out.size();
    for (int c = 0; c < confirm; ++c) {
      if (hi + c >= host.size()) return true;  // matched the whole host tail
      if (oj + c >= out.size()) return false;
      if (out[oj + c] != host[hi + c]) return false;
    }
    return true;
  };
  while (i < host.size() || j < out.size()) {
    if (i < host.size() && j < out.size() && out[j] == host[i]) {
      ++i;
      ++j;
      continue;
    }
    if (j >= out.size()) {
      // output exhausted with host samples left: not an insertion-only diff
      boundaries.push_back(-1);
      return boundaries;
    }
    const std::size_t b_start = j;
    ++j;
    while (j < out.size() && !realigned(j, i)) ++j;
    boundaries.push_back(static_cast<std::int64_t>(b_start));
    boundaries.push_back(static_cast<std::int64_t>(j));
  }
  return boundaries;
}

// ---------------------------------------------------------------------------
// Parameter-count formula
// ---------------------------------------------------------------------------

inline std::int64_t conv_params(std::int64_t kh, std::int64_t kw, std::int64_t ci, std::int64_t co) {
  return kh * kw * ci * co;  // biasless
}
inline std::int64_t bn_params(std::int64_t c) { return 2 * c; }
inline std::int64_t dense_params(std::int64_t d_in, std::int64_t d_out) {
  return d_in * d_out + d_out;
}

inline std::int64_t res2net_block_params(std::int64_t c_in, std::int64_t c_out, bool strided,
                                         std::int64_t scale, std::int64_t se_reduction,
                                         std::int64_t width) {
  const std::int64_t mid = width * scale;
  std::int64_t n = conv_params(1, 1, c_in, mid) + bn_params(mid);
  const std::int64_t groups = strided ? scale : scale - 1;
  n += groups * (conv_params(3, 3, width, width) + bn_params(width));
  n += conv_params(1, 1, mid, c_out) + bn_params(c_out);
  const std::int64_t squeezed = c_out / se_reduction;
  n += dense_params(c_out, squeezed) + dense_params(squeezed, c_out);
  if (strided || c_in != c_out) n += conv_params(1, 1, c_in, c_out) + bn_params(c_out);
  return n;
}

inline std::int64_t conformer_block_params(std::int64_t d, std::int64_t heads,
                                           std::int64_t head_size, std::int64_t kernel,
                                           std::int64_t expansion) {
  const std::int64_t inner = heads * head_size;
  const std::int64_t ffn = 2 * d + dense_params(d, expansion * d) + dense_params(expansion * d, d);
  const std::int64_t att = 2 * d + 3 * dense_params(d, inner) + dense_params(inner, d);
  const std::int64_t conv =
      2 * d + dense_params(d, 2 * d) + kernel * d + bn_params(d) + dense_params(d, d);
  return 2 * ffn + att + conv + 2 * d;
}

inline std::int64_t analytic_param_count(const ModelConfig& c) {
  std::int64_t n = 0;
  std::int64_t ch = 1;
  for (int ec : c.encoder_channels) {
    n += conv_params(3, 3, ch, ec) + bn_params(ec);
    ch = ec;
  }
  for (std::size_t s = 0; s < c.stage_blocks.size(); ++s) {
    const std::int64_t c_out = c.stage_channels[s];
    const std::int64_t width = c.group_width(static_cast<int>(c_out));
    for (int b = 0; b < c.stage_blocks[s]; ++b) {
      const bool strided = b == 0 && c.stage_strides[s] > 1;
      n += res2net_block_params(ch, c_out, strided, c.res2net.scale, c.res2net.se_reduction, width);
      ch = c_out;
    }
  }
  if (c.variant == Variant::kConformer) {
    n += dense_params(ch, c.conformer.d_model);
    n += c.num_conformer_blocks *
         conformer_block_params(c.conformer.d_model, c.conformer.heads, c.conformer.head_size,
                                c.conformer.conv_kernel, c.conformer.ffn_expansion);
    n += dense_params(c.conformer.d_model, c.num_classes);
  } else {
    n += dense_params(ch, c.num_classes);
  }
  return n;
}

// ---------------------------------------------------------------------------
// Direct windowed-DFT reference for the CQT
// ---------------------------------------------------------------------------

// Recomputes one spectrogram cell from scratch in double precision: own
// geometric frequency ladder, own Hann window, own normalization, and a
// direct complex inner product over the same zero-padded signal layout.
class NaiveCqt {
 public:
  NaiveCqt(const CqtConfig& config, int fs) : fs_(fs), cfg_(config) {
    f_min_ = cfg_.f_min_hz > 0 ? cfg_.f_min_hz : fs / 2.0 / std::pow(2.0, cfg_.octaves);
    q_ = 1.0 / (std::pow(2.0, 1.0 / cfg_.bins_per_octave) - 1.0);
    max_len_ = length(0);  // bin 0 has the lowest frequency, longest kernel
  }

  double frequency(int k) const {
    return f_min_ * std::pow(2.0, static_cast<double>(k) / cfg_.bins_per_octave);
  }
  std::int64_t length(int k) const {
    return static_cast<std::int64_t>(std::ceil(q_ * fs_ / frequency(k)));
  }

  double value(const std::vector<float>& samples, int frame, int k, int hop) const {
    const std::int64_t n = static_cast<std::int64_t>(samples.size());
    const std::int64_t pad = max_len_ / 2 + 1;
    const std::int64_t len = length(k);
    const double f = frequency(k);
    const std::int64_t start = pad + static_cast<std::int64_t>(frame) * hop - len / 2;
    double w1 = 0.0;
    for (std::int64_t j = 0; j < len; ++j) w1 += hann(j, len);
    std::complex<double> acc(0.0, 0.0);
    const double center = static_cast<double>(len - 1) / 2.0;
    for (std::int64_t j = 0; j < len; ++j) {
      const std::int64_t src = start + j - pad;  // position in the raw signal
      if (src < 0 || src >= n) continue;
      const double phase = -2.0 * std::numbers::pi * f * (static_cast<double>(j) - center) / fs_;
      acc += static_cast<double>(samples[static_cast<std::size_t>(src)]) * (hann(j, len) / w1) *
             std::complex<double>(std::cos(phase), std::sin(phase));
    }
    return std::log(std::abs(acc) + cfg_.log_floor);
  }

  int argmax_bin(const std::vector<float>& samples, int frame, int hop) const {
    int best = 0;
    double best_v = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < cfg_.bins(); ++k) {
      const double v = value(samples, frame, k, hop);
      if (v > best_v) {
        best_v = v;
        best = k;
      }
    }
    return best;
  }

 private:
  static double hann(std::int64_t j, std::int64_t n) {
    return n == 1 ? 1.0
                  : 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * static_cast<double>(j) /
                                          static_cast<double>(n - 1)));
  }

  int fs_;
  CqtConfig cfg_;
  double f_min_ = 0.0;
  double q_ = 0.0;
  std::int64_t max_len_ = 0;
};

}  // namespace oracles
