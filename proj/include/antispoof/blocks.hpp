#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "antispoof/common.hpp"
#include "antispoof/graph.hpp"
#include "antispoof/ops.hpp"
#include "antispoof/tensor.hpp"

// Parameterized layers and the three composite blocks. Layers own their
// tensors; `collect` registers them (and any running-stat buffers) under a
// hierarchical dotted name for the optimizer and checkpoints.

namespace antispoof {

namespace init {

// He-uniform: U(-limit, limit) with limit = sqrt(6 / fan_in).
template <typename T>
void he_uniform(Tensor<T>& w, std::int64_t fan_in, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  T* p = w.data();
  for (std::int64_t i = 0; i < w.size(); ++i)
    p[i] = static_cast<T>(rng.uniform(-limit, limit));
}

}  // namespace init

template <typename T>
struct DenseLayer {
  Tensor<T> w, b;

  DenseLayer() = default;
  DenseLayer(int d_in, int d_out, Rng& rng) : w({d_in, d_out}), b({d_out}) {
    init::he_uniform(w, d_in, rng);
  }

  Tensor<T> forward(Graph<T>* g, const Tensor<T>& x) const { return dense(g, x, w, b); }

  void collect(const std::string& prefix, std::vector<ParamRef<T>>& params) {
    params.push_back({prefix + ".weight", &w});
    params.push_back({prefix + ".bias", &b});
  }

  std::int64_t param_count() const { return w.size() + b.size(); }
};

// Bias-free conv; every conv in these models is followed by a batch norm
// whose beta supplies the offset.
template <typename T>
struct Conv2dLayer {
  Tensor<T> kernel;
  int stride_h = 1, stride_w = 1;
  Padding padding = Padding::kSame;

  Conv2dLayer() = default;
  Conv2dLayer(int kh, int kw, int c_in, int c_out, int sh, int sw, Rng& rng)
      : kernel({kh, kw, c_in, c_out}), stride_h(sh), stride_w(sw) {
    init::he_uniform(kernel, static_cast<std::int64_t>(kh) * kw * c_in, rng);
  }

  Tensor<T> forward(Graph<T>* g, const Tensor<T>& x) const {
    return conv2d(g, x, kernel, stride_h, stride_w, padding);
  }

  void collect(const std::string& prefix, std::vector<ParamRef<T>>& params) {
    params.push_back({prefix + ".kernel", &kernel});
  }

  std::int64_t param_count() const { return kernel.size(); }
};

template <typename T>
struct BatchNormLayer {
  Tensor<T> gamma, beta;
  BnStats<T> stats;

  BatchNormLayer() = default;
  explicit BatchNormLayer(int channels)
      : gamma(Tensor<T>::full({channels}, T(1))), beta({channels}), stats(channels) {}

  Tensor<T> forward(Graph<T>* g, const Tensor<T>& x, Mode mode) {
    return batch_norm(g, x, gamma, beta, stats, mode);
  }

  void collect(const std::string& prefix, std::vector<ParamRef<T>>& params,
               std::vector<ParamRef<T>>& buffers) {
    params.push_back({prefix + ".gamma", &gamma});
    params.push_back({prefix + ".beta", &beta});
    buffers.push_back({prefix + ".running_mean", &stats.mean});
    buffers.push_back({prefix + ".running_var", &stats.var});
  }

  std::int64_t param_count() const { return gamma.size() + beta.size(); }
};

template <typename T>
struct LayerNormLayer {
  Tensor<T> gamma, beta;

  LayerNormLayer() = default;
  explicit LayerNormLayer(int d) : gamma(Tensor<T>::full({d}, T(1))), beta({d}) {}

  Tensor<T> forward(Graph<T>* g, const Tensor<T>& x) const {
    return layer_norm(g, x, gamma, beta);
  }

  void collect(const std::string& prefix, std::vector<ParamRef<T>>& params) {
    params.push_back({prefix + ".gamma", &gamma});
    params.push_back({prefix + ".beta", &beta});
  }

  std::int64_t param_count() const { return gamma.size() + beta.size(); }
};

// Squeeze-and-excitation: out = x * sigmoid(W2 relu(W1 gap(x))), broadcast
// over the spatial axes.
template <typename T>
struct SeBlock {
  DenseLayer<T> reduce, expand;
  int channels = 0, reduction = 0;

  SeBlock() = default;
  SeBlock(int c, int r, Rng& rng) : channels(c), reduction(r) {
    if (r < 1 || c % r != 0)
      throw ConfigError("se_block: reduction " + std::to_string(r) +
                        " must divide channels " + std::to_string(c));
    reduce = DenseLayer<T>(c, c / r, rng);
    expand = DenseLayer<T>(c / r, c, rng);
  }

  std::pair<Tensor<T>, Tensor<T>> forward_with_scale(Graph<T>* g, const Tensor<T>& x) const {
    Tensor<T> z = global_avg_pool_2d(g, x);
    Tensor<T> s = sigmoid(g, expand.forward(g, relu(g, reduce.forward(g, z))));
    return {scale_channels(g, x, s), s};
  }

  Tensor<T> forward(Graph<T>* g, const Tensor<T>& x) const {
    return forward_with_scale(g, x).first;
  }

  void collect(const std::string& prefix, std::vector<ParamRef<T>>& params) {
    reduce.collect(prefix + ".reduce", params);
    expand.collect(prefix + ".expand", params);
  }

  std::int64_t param_count() const { return reduce.param_count() + expand.param_count(); }
};

struct SeRes2NetBlockConfig {
  int in_channels = 0;
  int out_channels = 0;
  int mid_channels = 0;  // width w per group
  int scale = 4;         // number of groups s
  int se_reduction = 16;
  int stride = 1;       // frequency-axis stride
  // Time-axis stride; 0 follows `stride`. The model sets this to 1 when the
  // time axis is already too short to stride (small chunk inputs).
  int stride_time = 0;

  int time_stride() const { return stride_time == 0 ? stride : stride_time; }
  bool strided() const { return stride != 1 || time_stride() != 1; }
};

// Res2Net bottleneck with an SE stage. Stride-1 blocks use the hierarchical
// y_i = conv(x_i + y_{i-1}) wiring with group 0 passed through; blocks with
// stride > 1 convolve every group independently (the cross-group addition is
// impossible once spatial dims differ).
template <typename T>
struct SeRes2NetBlock {
  SeRes2NetBlockConfig cfg;
  Conv2dLayer<T> conv_in;
  BatchNormLayer<T> bn_in;
  std::vector<Conv2dLayer<T>> group_convs;
  std::vector<BatchNormLayer<T>> group_bns;
  Conv2dLayer<T> conv_out;
  BatchNormLayer<T> bn_out;
  SeBlock<T> se;
  bool has_projection = false;
  Conv2dLayer<T> proj_conv;
  BatchNormLayer<T> proj_bn;

  SeRes2NetBlock() = default;
  SeRes2NetBlock(const SeRes2NetBlockConfig& c, Rng& rng) : cfg(c) {
    if (cfg.scale < 2) throw ConfigError("se_res2net_block: scale must be >= 2");
    if (cfg.in_channels < 1 || cfg.out_channels < 1 || cfg.mid_channels < 1 || cfg.stride < 1 ||
        cfg.time_stride() < 1)
      throw ConfigError("se_res2net_block: channels and stride must be positive");
    const int mid_total = cfg.mid_channels * cfg.scale;

    conv_in = Conv2dLayer<T>(1, 1, cfg.in_channels, mid_total, 1, 1, rng);
    bn_in = BatchNormLayer<T>(mid_total);
    const int first_conv_group = cfg.strided() ? 0 : 1;
    for (int i = first_conv_group; i < cfg.scale; ++i) {
      group_convs.emplace_back(3, 3, cfg.mid_channels, cfg.mid_channels, cfg.time_stride(),
                               cfg.stride, rng);
      group_bns.emplace_back(cfg.mid_channels);
    }
    conv_out = Conv2dLayer<T>(1, 1, mid_total, cfg.out_channels, 1, 1, rng);
    bn_out = BatchNormLayer<T>(cfg.out_channels);
    se = SeBlock<T>(cfg.out_channels, cfg.se_reduction, rng);
    has_projection = cfg.strided() || cfg.in_channels != cfg.out_channels;
    if (has_projection) {
      proj_conv = Conv2dLayer<T>(1, 1, cfg.in_channels, cfg.out_channels, cfg.time_stride(),
                                 cfg.stride, rng);
      proj_bn = BatchNormLayer<T>(cfg.out_channels);
    }
  }

  Tensor<T> forward(Graph<T>* g, const Tensor<T>& x, Mode mode) {
    Tensor<T> h = relu(g, bn_in.forward(g, conv_in.forward(g, x), mode));
    std::vector<Tensor<T>> parts = split_last(g, h, cfg.scale);
    std::vector<Tensor<T>> ys;
    ys.reserve(parts.size());
    if (!cfg.strided()) {
      ys.push_back(parts[0]);
      for (int i = 1; i < cfg.scale; ++i) {
        Tensor<T> in = add(g, parts[static_cast<std::size_t>(i)], ys.back());
        auto& conv = group_convs[static_cast<std::size_t>(i - 1)];
        auto& bn = group_bns[static_cast<std::size_t>(i - 1)];
        ys.push_back(relu(g, bn.forward(g, conv.forward(g, in), mode)));
      }
    } else {
      for (int i = 0; i < cfg.scale; ++i) {
        auto& conv = group_convs[static_cast<std::size_t>(i)];
        auto& bn = group_bns[static_cast<std::size_t>(i)];
        ys.push_back(
            relu(g, bn.forward(g, conv.forward(g, parts[static_cast<std::size_t>(i)]), mode)));
      }
    }
    Tensor<T> merged = bn_out.forward(g, conv_out.forward(g, concat_last(g, ys)), mode);
    Tensor<T> excited = se.forward(g, merged);
    Tensor<T> shortcut =
        has_projection ? proj_bn.forward(g, proj_conv.forward(g, x), mode) : x;
    return relu(g, add(g, excited, shortcut));
  }

  void collect(const std::string& prefix, std::vector<ParamRef<T>>& params,
               std::vector<ParamRef<T>>& buffers) {
    conv_in.collect(prefix + ".conv_in", params);
    bn_in.collect(prefix + ".bn_in", params, buffers);
    const int first_conv_group = cfg.strided() ? 0 : 1;
    for (std::size_t i = 0; i < group_convs.size(); ++i) {
      const std::string name =
          prefix + ".group" + std::to_string(first_conv_group + static_cast<int>(i));
      group_convs[i].collect(name + ".conv", params);
      group_bns[i].collect(name + ".bn", params, buffers);
    }
    conv_out.collect(prefix + ".conv_out", params);
    bn_out.collect(prefix + ".bn_out", params, buffers);
    se.collect(prefix + ".se", params);
    if (has_projection) {
      proj_conv.collect(prefix + ".proj_conv", params);
      proj_bn.collect(prefix + ".proj_bn", params, buffers);
    }
  }

  std::int64_t param_count() const {
    std::int64_t n = conv_in.param_count() + bn_in.param_count() + conv_out.param_count() +
                     bn_out.param_count() + se.param_count();
    for (const auto& c : group_convs) n += c.param_count();
    for (const auto& b : group_bns) n += b.param_count();
    if (has_projection) n += proj_conv.param_count() + proj_bn.param_count();
    return n;
  }
};

struct ConformerConfig {
  int d_model = 256;
  int heads = 32;
  int head_size = 16;
  int conv_kernel = 32;
  double dropout = 0.2;
  double ffn_residual_factor = 0.5;
  int ffn_expansion = 2;
};

namespace detail {

inline void validate_conformer(const ConformerConfig& c) {
  if (c.d_model < 1 || c.heads < 1 || c.head_size < 1 || c.conv_kernel < 1 ||
      c.ffn_expansion < 1)
    throw ConfigError("conformer: dims must be positive");
  if (c.dropout < 0.0 || c.dropout >= 1.0) throw ConfigError("conformer: dropout must be in [0,1)");
  if (c.ffn_residual_factor <= 0.0 || c.ffn_residual_factor > 1.0)
    throw ConfigError("conformer: ffn_residual_factor must be in (0,1]");
}

}  // namespace detail

template <typename T>
struct FfnModule {
  LayerNormLayer<T> ln;
  DenseLayer<T> expand, project;
  double dropout_rate = 0.0;

  FfnModule() = default;
  FfnModule(int d, int expansion, double drop, Rng& rng)
      : ln(d), expand(d, d * expansion, rng), project(d * expansion, d, rng),
        dropout_rate(drop) {}

  Tensor<T> forward(Graph<T>* g, const Tensor<T>& x, Mode mode, Rng& rng) {
    Tensor<T> h = swish(g, expand.forward(g, ln.forward(g, x)));
    h = dropout(g, h, dropout_rate, mode, rng);
    h = project.forward(g, h);
    return dropout(g, h, dropout_rate, mode, rng);
  }

  void collect(const std::string& prefix, std::vector<ParamRef<T>>& params) {
    ln.collect(prefix + ".ln", params);
    expand.collect(prefix + ".expand", params);
    project.collect(prefix + ".project", params);
  }

  std::int64_t param_count() const {
    return ln.param_count() + expand.param_count() + project.param_count();
  }
};

template <typename T>
struct MhsaModule {
  LayerNormLayer<T> ln;
  DenseLayer<T> q, k, v, o;
  int heads = 0, head_size = 0;

  MhsaModule() = default;
  MhsaModule(int d, int n_heads, int size, Rng& rng)
      : ln(d), q(d, n_heads * size, rng), k(d, n_heads * size, rng), v(d, n_heads * size, rng),
        o(n_heads * size, d, rng), heads(n_heads), head_size(size) {}

  Tensor<T> forward(Graph<T>* g, const Tensor<T>& x) {
    Tensor<T> n = ln.forward(g, x);
    return mhsa(g, n, heads, head_size, q.w, q.b, k.w, k.b, v.w, v.b, o.w, o.b);
  }

  void collect(const std::string& prefix, std::vector<ParamRef<T>>& params) {
    ln.collect(prefix + ".ln", params);
    q.collect(prefix + ".q", params);
    k.collect(prefix + ".k", params);
    v.collect(prefix + ".v", params);
    o.collect(prefix + ".o", params);
  }

  std::int64_t param_count() const {
    return ln.param_count() + q.param_count() + k.param_count() + v.param_count() +
           o.param_count();
  }
};

template <typename T>
struct ConvModule {
  LayerNormLayer<T> ln;
  DenseLayer<T> pointwise_in;   // d -> 2d, feeds the GLU
  Tensor<T> depthwise_kernel;   // [conv_kernel, d]
  BatchNormLayer<T> bn;
  DenseLayer<T> pointwise_out;  // d -> d
  double dropout_rate = 0.0;

  ConvModule() = default;
  ConvModule(int d, int kernel, double drop, Rng& rng)
      : ln(d), pointwise_in(d, 2 * d, rng), depthwise_kernel({kernel, d}), bn(d),
        pointwise_out(d, d, rng), dropout_rate(drop) {
    init::he_uniform(depthwise_kernel, kernel, rng);
  }

  Tensor<T> forward(Graph<T>* g, const Tensor<T>& x, Mode mode, Rng& rng) {
    Tensor<T> h = glu(g, pointwise_in.forward(g, ln.forward(g, x)));
    h = depthwise_conv1d(g, h, depthwise_kernel);
    h = swish(g, bn.forward(g, h, mode));
    h = pointwise_out.forward(g, h);
    return dropout(g, h, dropout_rate, mode, rng);
  }

  void collect(const std::string& prefix, std::vector<ParamRef<T>>& params,
               std::vector<ParamRef<T>>& buffers) {
    ln.collect(prefix + ".ln", params);
    pointwise_in.collect(prefix + ".pointwise_in", params);
    params.push_back({prefix + ".depthwise.kernel", &depthwise_kernel});
    bn.collect(prefix + ".bn", params, buffers);
    pointwise_out.collect(prefix + ".pointwise_out", params);
  }

  std::int64_t param_count() const {
    return ln.param_count() + pointwise_in.param_count() + depthwise_kernel.size() +
           bn.param_count() + pointwise_out.param_count();
  }
};

// Macaron layout: half-step FFN, MHSA, conv module, half-step FFN, final
// layer norm.
template <typename T>
struct ConformerBlock {
  ConformerConfig cfg;
  FfnModule<T> ffn1, ffn2;
  MhsaModule<T> attention;
  ConvModule<T> conv;
  LayerNormLayer<T> ln_final;

  ConformerBlock() = default;
  ConformerBlock(const ConformerConfig& c, Rng& rng) : cfg(c) {
    detail::validate_conformer(c);
    ffn1 = FfnModule<T>(c.d_model, c.ffn_expansion, c.dropout, rng);
    attention = MhsaModule<T>(c.d_model, c.heads, c.head_size, rng);
    conv = ConvModule<T>(c.d_model, c.conv_kernel, c.dropout, rng);
    ffn2 = FfnModule<T>(c.d_model, c.ffn_expansion, c.dropout, rng);
    ln_final = LayerNormLayer<T>(c.d_model);
  }

  Tensor<T> forward(Graph<T>* g, const Tensor<T>& x, Mode mode, Rng& rng) {
    const T half = static_cast<T>(cfg.ffn_residual_factor);
    Tensor<T> y1 = add(g, x, scale(g, ffn1.forward(g, x, mode, rng), half));
    Tensor<T> y2 = add(g, y1, attention.forward(g, y1));
    Tensor<T> y3 = add(g, y2, conv.forward(g, y2, mode, rng));
    return ln_final.forward(g, add(g, y3, scale(g, ffn2.forward(g, y3, mode, rng), half)));
  }

  void collect(const std::string& prefix, std::vector<ParamRef<T>>& params,
               std::vector<ParamRef<T>>& buffers) {
    ffn1.collect(prefix + ".ffn1", params);
    attention.collect(prefix + ".mhsa", params);
    conv.collect(prefix + ".conv", params, buffers);
    ffn2.collect(prefix + ".ffn2", params);
    ln_final.collect(prefix + ".ln_final", params);
  }

  std::int64_t param_count() const {
    return ffn1.param_count() + attention.param_count() + conv.param_count() +
           ffn2.param_count() + ln_final.param_count();
  }
};

}  // namespace antispoof
