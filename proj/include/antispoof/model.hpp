#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "antispoof/blocks.hpp"
#include "antispoof/common.hpp"
#include "antispoof/graph.hpp"
#include "antispoof/ops.hpp"
#include "antispoof/tensor.hpp"

namespace antispoof {

enum class Variant { kPlain, kConformer };

inline std::string variant_name(Variant v) {
  return v == Variant::kPlain ? "plain" : "conformer";
}

inline Variant variant_from_name(const std::string& s) {
  if (s == "plain") return Variant::kPlain;
  if (s == "conformer") return Variant::kConformer;
  throw ConfigError("unknown model variant '" + s + "' (expected plain or conformer)");
}

struct Res2NetTemplate {
  int scale = 4;
  int se_reduction = 16;
  // Group width for a stage with C output channels is
  // round(C * width_factor / scale).
  double width_factor = 2.0;
};

struct ModelConfig {
  Variant variant = Variant::kPlain;
  int input_frames = 400;
  int input_bins = 432;
  std::vector<int> encoder_channels = {16, 16, 16};
  std::vector<int> stage_blocks = {3, 4, 6, 3};
  std::vector<int> stage_channels = {16, 32, 64, 128};
  std::vector<int> stage_strides = {1, 2, 2, 2};
  Res2NetTemplate res2net;
  ConformerConfig conformer;
  int num_conformer_blocks = 2;
  int num_classes = 2;

  int group_width(int channels) const {
    const int w = static_cast<int>(
        std::lround(channels * res2net.width_factor / res2net.scale));
    return std::max(1, w);
  }

  void validate() const {
    if (input_frames < 1 || input_bins < 1) throw ConfigError("config: input dims must be >= 1");
    if (encoder_channels.empty()) throw ConfigError("config: encoder needs at least one conv");
    for (int c : encoder_channels)
      if (c < 1) throw ConfigError("config: encoder channels must be positive");
    if (stage_blocks.size() != stage_channels.size() ||
        stage_blocks.size() != stage_strides.size())
      throw ConfigError("config: stage_blocks/stage_channels/stage_strides lengths differ");
    if (stage_blocks.empty()) throw ConfigError("config: at least one stage required");
    for (std::size_t i = 0; i < stage_blocks.size(); ++i) {
      if (stage_blocks[i] < 1) throw ConfigError("config: stage_blocks must be >= 1");
      if (stage_channels[i] < 1) throw ConfigError("config: stage_channels must be positive");
      if (stage_strides[i] < 1) throw ConfigError("config: stage_strides must be >= 1");
      if (stage_channels[i] % res2net.se_reduction != 0)
        throw ConfigError("config: se_reduction " + std::to_string(res2net.se_reduction) +
                          " must divide stage channels " + std::to_string(stage_channels[i]));
    }
    if (res2net.scale < 2) throw ConfigError("config: res2net scale must be >= 2");
    if (res2net.width_factor <= 0) throw ConfigError("config: width_factor must be positive");
    if (num_classes != 2 && num_classes != 3)
      throw ConfigError("config: num_classes must be 2 or 3");
    if (variant == Variant::kConformer) {
      if (num_conformer_blocks < 1)
        throw ConfigError("config: conformer variant needs >= 1 conformer block");
      detail::validate_conformer(conformer);
    }
  }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{
      {"variant", variant_name(c.variant)},
      {"input_frames", c.input_frames},
      {"input_bins", c.input_bins},
      {"encoder_channels", c.encoder_channels},
      {"stage_blocks", c.stage_blocks},
      {"stage_channels", c.stage_channels},
      {"stage_strides", c.stage_strides},
      {"res2net",
       {{"scale", c.res2net.scale},
        {"se_reduction", c.res2net.se_reduction},
        {"width_factor", c.res2net.width_factor}}},
      {"conformer",
       {{"d_model", c.conformer.d_model},
        {"heads", c.conformer.heads},
        {"head_size", c.conformer.head_size},
        {"conv_kernel", c.conformer.conv_kernel},
        {"dropout", c.conformer.dropout},
        {"ffn_residual_factor", c.conformer.ffn_residual_factor},
        {"ffn_expansion", c.conformer.ffn_expansion}}},
      {"num_conformer_blocks", c.num_conformer_blocks},
      {"num_classes", c.num_classes}};
}

// Strict parse: missing keys keep their defaults, unknown keys are rejected
// so config typos fail loudly.
inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  static const std::vector<std::string> top_keys = {
      "variant",       "input_frames",  "input_bins",           "encoder_channels",
      "stage_blocks",  "stage_channels", "stage_strides",       "res2net",
      "conformer",     "num_conformer_blocks",                  "num_classes"};
  for (const auto& [key, value] : j.items()) {
    (void)value;
    bool known = false;
    for (const auto& k : top_keys) known = known || k == key;
    if (!known) throw ConfigError("config: unknown key '" + key + "'");
  }
  ModelConfig c;
  try {
    if (j.contains("variant")) c.variant = variant_from_name(j.at("variant").get<std::string>());
    if (j.contains("input_frames")) c.input_frames = j.at("input_frames").get<int>();
    if (j.contains("input_bins")) c.input_bins = j.at("input_bins").get<int>();
    if (j.contains("encoder_channels"))
      c.encoder_channels = j.at("encoder_channels").get<std::vector<int>>();
    if (j.contains("stage_blocks")) c.stage_blocks = j.at("stage_blocks").get<std::vector<int>>();
    if (j.contains("stage_channels"))
      c.stage_channels = j.at("stage_channels").get<std::vector<int>>();
    if (j.contains("stage_strides"))
      c.stage_strides = j.at("stage_strides").get<std::vector<int>>();
    if (j.contains("res2net")) {
      const auto& r = j.at("res2net");
      for (const auto& [key, value] : r.items()) {
        (void)value;
        if (key != "scale" && key != "se_reduction" && key != "width_factor")
          throw ConfigError("config: unknown key 'res2net." + key + "'");
      }
      if (r.contains("scale")) c.res2net.scale = r.at("scale").get<int>();
      if (r.contains("se_reduction")) c.res2net.se_reduction = r.at("se_reduction").get<int>();
      if (r.contains("width_factor")) c.res2net.width_factor = r.at("width_factor").get<double>();
    }
    if (j.contains("conformer")) {
      const auto& f = j.at("conformer");
      for (const auto& [key, value] : f.items()) {
        (void)value;
        if (key != "d_model" && key != "heads" && key != "head_size" && key != "conv_kernel" &&
            key != "dropout" && key != "ffn_residual_factor" && key != "ffn_expansion")
          throw ConfigError("config: unknown key 'conformer." + key + "'");
      }
      if (f.contains("d_model")) c.conformer.d_model = f.at("d_model").get<int>();
      if (f.contains("heads")) c.conformer.heads = f.at("heads").get<int>();
      if (f.contains("head_size")) c.conformer.head_size = f.at("head_size").get<int>();
      if (f.contains("conv_kernel")) c.conformer.conv_kernel = f.at("conv_kernel").get<int>();
      if (f.contains("dropout")) c.conformer.dropout = f.at("dropout").get<double>();
      if (f.contains("ffn_residual_factor"))
        c.conformer.ffn_residual_factor = f.at("ffn_residual_factor").get<double>();
      if (f.contains("ffn_expansion"))
        c.conformer.ffn_expansion = f.at("ffn_expansion").get<int>();
    }
    if (j.contains("num_conformer_blocks"))
      c.num_conformer_blocks = j.at("num_conformer_blocks").get<int>();
    if (j.contains("num_classes")) c.num_classes = j.at("num_classes").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

struct LayerInfo {
  std::string name;
  std::string kind;
  std::vector<int> output_shape;  // per-example shape, batch omitted
  std::int64_t params = 0;
};

template <typename T>
class Model {
 public:
  Model() = default;

  Model(const ModelConfig& config, std::uint64_t seed) : cfg_(config) {
    cfg_.validate();
    Rng rng(seed);
    int c_in = 1;
    for (int c_out : cfg_.encoder_channels) {
      enc_convs_.emplace_back(3, 3, c_in, c_out, 1, 1, rng);
      enc_bns_.emplace_back(c_out);
      c_in = c_out;
    }
    int cur_t = cfg_.input_frames;
    for (std::size_t s = 0; s < cfg_.stage_blocks.size(); ++s) {
      std::vector<SeRes2NetBlock<T>> stage;
      const int c_out = cfg_.stage_channels[s];
      for (int b = 0; b < cfg_.stage_blocks[s]; ++b) {
        SeRes2NetBlockConfig bc;
        bc.in_channels = c_in;
        bc.out_channels = c_out;
        bc.mid_channels = cfg_.group_width(c_out);
        bc.scale = cfg_.res2net.scale;
        bc.se_reduction = cfg_.res2net.se_reduction;
        bc.stride = b == 0 ? cfg_.stage_strides[s] : 1;
        // Chunk-sized inputs: stride only the frequency axis once the time
        // axis is too short to stride.
        bc.stride_time = cur_t >= bc.stride ? bc.stride : 1;
        cur_t = (cur_t + bc.stride_time - 1) / bc.stride_time;
        stage.emplace_back(bc, rng);
        c_in = c_out;
      }
      stages_.push_back(std::move(stage));
    }
    if (cfg_.variant == Variant::kConformer) {
      to_dmodel_ = DenseLayer<T>(c_in, cfg_.conformer.d_model, rng);
      for (int i = 0; i < cfg_.num_conformer_blocks; ++i)
        conformer_blocks_.emplace_back(cfg_.conformer, rng);
      classifier_ = DenseLayer<T>(cfg_.conformer.d_model, cfg_.num_classes, rng);
    } else {
      classifier_ = DenseLayer<T>(c_in, cfg_.num_classes, rng);
    }
  }

  const ModelConfig& config() const { return cfg_; }

  // x: [B, input_frames, input_bins, 1]. Train mode with dropout needs an
  // rng; infer mode may pass nullptr.
  Tensor<T> forward(const Tensor<T>& x, Mode mode, Graph<T>* g = nullptr,
                    Rng* dropout_rng = nullptr) {
    if (x.rank() != 4 || x.dim(1) != cfg_.input_frames || x.dim(2) != cfg_.input_bins ||
        x.dim(3) != 1)
      throw ShapeError("forward: expected [B," + std::to_string(cfg_.input_frames) + "," +
                       std::to_string(cfg_.input_bins) + ",1], got " +
                       shape_to_string(x.shape()));
    detail::check_finite(x, "forward input");
    Rng fallback(0);
    const bool needs_rng = mode == Mode::kTrain && cfg_.variant == Variant::kConformer &&
                           cfg_.conformer.dropout > 0.0;
    if (needs_rng && !dropout_rng)
      throw ConfigError("forward: train mode with dropout requires an rng");
    Rng& rng = dropout_rng ? *dropout_rng : fallback;

    Tensor<T> h = x;
    for (std::size_t i = 0; i < enc_convs_.size(); ++i)
      h = named(
          "encoder" + std::to_string(i + 1),
          [&] { return relu(g, enc_bns_[i].forward(g, enc_convs_[i].forward(g, h), mode)); });
    for (std::size_t s = 0; s < stages_.size(); ++s)
      for (std::size_t b = 0; b < stages_[s].size(); ++b)
        h = named("stage" + std::to_string(s + 1) + ".block" + std::to_string(b + 1),
                  [&] { return stages_[s][b].forward(g, h, mode); });

    Tensor<T> logits;
    if (cfg_.variant == Variant::kConformer) {
      h = named("freq_pool", [&] { return freq_avg_pool(g, h); });
      h = named("to_d_model", [&] { return to_dmodel_.forward(g, h); });
      for (std::size_t i = 0; i < conformer_blocks_.size(); ++i)
        h = named("conformer" + std::to_string(i + 1),
                  [&] { return conformer_blocks_[i].forward(g, h, mode, rng); });
      h = named("time_pool", [&] { return global_avg_pool_1d(g, h); });
      logits = named("classifier", [&] { return classifier_.forward(g, h); });
    } else {
      h = named("global_pool", [&] { return global_avg_pool_2d(g, h); });
      logits = named("classifier", [&] { return classifier_.forward(g, h); });
    }
    return named("softmax", [&] { return softmax(g, logits, -1); });
  }

  std::vector<ParamRef<T>> parameters() {
    std::vector<ParamRef<T>> params, buffers;
    collect(params, buffers);
    return params;
  }

  std::vector<ParamRef<T>> buffers() {
    std::vector<ParamRef<T>> params, buffers;
    collect(params, buffers);
    return buffers;
  }

  std::int64_t param_count() {
    std::int64_t n = 0;
    for (const auto& p : parameters()) n += p.tensor->size();
    return n;
  }

  // One entry per top-level box in the data flow, in execution order.
  std::vector<LayerInfo> manifest() const {
    std::vector<LayerInfo> m;
    int t = cfg_.input_frames, f = cfg_.input_bins;
    std::int64_t enc_params = 0;
    for (std::size_t i = 0; i < enc_convs_.size(); ++i)
      enc_params += enc_convs_[i].param_count() + enc_bns_[i].param_count();
    m.push_back({"encoder", "encoder", {t, f, cfg_.encoder_channels.back()}, enc_params});
    for (std::size_t s = 0; s < stages_.size(); ++s) {
      const int stride_f = stages_[s].front().cfg.stride;
      const int stride_t = stages_[s].front().cfg.time_stride();
      t = (t + stride_t - 1) / stride_t;
      f = (f + stride_f - 1) / stride_f;
      std::int64_t n = 0;
      for (const auto& b : stages_[s]) n += b.param_count();
      m.push_back(
          {"stage" + std::to_string(s + 1), "stage", {t, f, cfg_.stage_channels[s]}, n});
    }
    const int c_last = cfg_.stage_channels.back();
    if (cfg_.variant == Variant::kConformer) {
      m.push_back({"freq_pool", "freq_pool", {t, c_last}, 0});
      m.push_back({"to_d_model", "dense", {t, cfg_.conformer.d_model},
                   to_dmodel_.param_count()});
      for (std::size_t i = 0; i < conformer_blocks_.size(); ++i)
        m.push_back({"conformer" + std::to_string(i + 1), "conformer",
                     {t, cfg_.conformer.d_model}, conformer_blocks_[i].param_count()});
      m.push_back({"time_pool", "time_pool", {cfg_.conformer.d_model}, 0});
    } else {
      m.push_back({"global_pool", "global_pool", {c_last}, 0});
    }
    m.push_back({"classifier", "classifier", {cfg_.num_classes}, classifier_.param_count()});
    return m;
  }

 private:
  template <typename Fn>
  Tensor<T> named(const std::string& layer, Fn&& fn) {
    try {
      return fn();
    } catch (const NumericError& e) {
      throw NumericError("layer " + layer + ": " + e.what());
    }
  }

  void collect(std::vector<ParamRef<T>>& params, std::vector<ParamRef<T>>& buffers) {
    for (std::size_t i = 0; i < enc_convs_.size(); ++i) {
      enc_convs_[i].collect("encoder" + std::to_string(i + 1) + ".conv", params);
      enc_bns_[i].collect("encoder" + std::to_string(i + 1) + ".bn", params, buffers);
    }
    for (std::size_t s = 0; s < stages_.size(); ++s)
      for (std::size_t b = 0; b < stages_[s].size(); ++b)
        stages_[s][b].collect(
            "stage" + std::to_string(s + 1) + ".block" + std::to_string(b + 1), params, buffers);
    if (cfg_.variant == Variant::kConformer) {
      to_dmodel_.collect("to_d_model", params);
      for (std::size_t i = 0; i < conformer_blocks_.size(); ++i)
        conformer_blocks_[i].collect("conformer" + std::to_string(i + 1), params, buffers);
    }
    classifier_.collect("classifier", params);
  }

  ModelConfig cfg_;
  std::vector<Conv2dLayer<T>> enc_convs_;
  std::vector<BatchNormLayer<T>> enc_bns_;
  std::vector<std::vector<SeRes2NetBlock<T>>> stages_;
  DenseLayer<T> to_dmodel_;
  std::vector<ConformerBlock<T>> conformer_blocks_;
  DenseLayer<T> classifier_;
};

}  // namespace antispoof
