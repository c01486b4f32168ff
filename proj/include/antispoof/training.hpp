#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "antispoof/common.hpp"
#include "antispoof/cqt.hpp"
#include "antispoof/graph.hpp"
#include "antispoof/labels.hpp"
#include "antispoof/metrics.hpp"
#include "antispoof/model.hpp"
#include "antispoof/ops.hpp"
#include "antispoof/tensor.hpp"

namespace antispoof {

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
class AdamOptimizer {
 public:
  explicit AdamOptimizer(std::vector<ParamRef<T>> params, AdamConfig cfg = {})
      : params_(std::move(params)), cfg_(cfg) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
      m_[i].assign(static_cast<std::size_t>(params_[i].tensor->size()), T(0));
      v_[i].assign(static_cast<std::size_t>(params_[i].tensor->size()), T(0));
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor->zero_grad();
  }

  // Standard bias-corrected update. A parameter whose grad buffer was never
  // touched this step contributes zero gradient.
  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Tensor<T>& theta = *params_[i].tensor;
      const T* grad = theta.grad_or_null();
      T* data = theta.data();
      for (std::int64_t j = 0; j < theta.size(); ++j) {
        const double gj = grad ? static_cast<double>(grad[j]) : 0.0;
        if (!std::isfinite(gj))
          throw NumericError("adam_step: non-finite gradient in '" + params_[i].name +
                             "' at flat index " + std::to_string(j));
        auto& mj = m_[i][static_cast<std::size_t>(j)];
        auto& vj = v_[i][static_cast<std::size_t>(j)];
        mj = static_cast<T>(cfg_.beta1 * mj + (1.0 - cfg_.beta1) * gj);
        vj = static_cast<T>(cfg_.beta2 * vj + (1.0 - cfg_.beta2) * gj * gj);
        const double m_hat = static_cast<double>(mj) / bc1;
        const double v_hat = static_cast<double>(vj) / bc2;
        data[j] = static_cast<T>(data[j] - cfg_.lr * m_hat / (std::sqrt(v_hat) + cfg_.eps));
      }
    }
  }

  std::int64_t step_count() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  std::vector<ParamRef<T>> params_;
  AdamConfig cfg_;
  std::vector<std::vector<T>> m_, v_;
  std::int64_t t_ = 0;
};

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

struct LabeledExample {
  CqtSpectrogram features;
  int label = 0;
};

class InMemoryDataset {
 public:
  void add(CqtSpectrogram features, int label) {
    if (label < 0) throw LabelError("dataset: negative label");
    if (!examples_.empty()) {
      const auto& first = examples_.front().features;
      if (features.frames != first.frames || features.bins != first.bins)
        throw ShapeError("dataset: feature shape " + std::to_string(features.frames) + "x" +
                         std::to_string(features.bins) + " differs from " +
                         std::to_string(first.frames) + "x" + std::to_string(first.bins));
    }
    examples_.push_back({std::move(features), label});
  }

  std::int64_t size() const { return static_cast<std::int64_t>(examples_.size()); }
  const CqtSpectrogram& features(std::int64_t i) const {
    return examples_[static_cast<std::size_t>(i)].features;
  }
  int label(std::int64_t i) const { return examples_[static_cast<std::size_t>(i)].label; }
  int frames() const { return examples_.empty() ? 0 : examples_.front().features.frames; }
  int bins() const { return examples_.empty() ? 0 : examples_.front().features.bins; }

 private:
  std::vector<LabeledExample> examples_;
};

struct ManifestEntry {
  std::string path;
  std::string utt_id;
  int label = 0;
};

// CSV rows "path,attack_id" or "path,label". Relative paths resolve against
// the manifest's own directory.
inline std::vector<ManifestEntry> load_manifest(const std::string& manifest_path, int num_classes,
                                                const FamilyTable& table = default_family_table()) {
  std::ifstream f(manifest_path);
  if (!f) throw IoError("load_manifest: cannot open " + manifest_path);
  const std::filesystem::path base = std::filesystem::path(manifest_path).parent_path();
  std::vector<ManifestEntry> entries;
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto comma = line.rfind(',');
    if (comma == std::string::npos || comma == 0)
      throw FormatError("load_manifest: " + manifest_path + ":" + std::to_string(line_no) +
                        ": expected 'path,attack_id' or 'path,label'");
    ManifestEntry e;
    std::string raw_path = line.substr(0, comma);
    const std::string tag = line.substr(comma + 1);
    std::filesystem::path p(raw_path);
    e.path = p.is_absolute() ? p.string() : (base / p).string();
    e.utt_id = p.stem().string();
    bool numeric = !tag.empty();
    for (char c : tag) numeric = numeric && std::isdigit(static_cast<unsigned char>(c));
    if (numeric) {
      e.label = std::stoi(tag);
      if (e.label >= num_classes)
        throw LabelError("load_manifest: " + manifest_path + ":" + std::to_string(line_no) +
                         ": label " + tag + " out of range for " + std::to_string(num_classes) +
                         " classes");
    } else {
      e.label = relabel_la(tag, num_classes, table);
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

inline InMemoryDataset load_feature_dataset(const std::vector<ManifestEntry>& entries) {
  InMemoryDataset ds;
  for (const auto& e : entries) ds.add(read_feature_file(e.path), e.label);
  return ds;
}

// Stacks the selected examples into a [N, frames, bins, 1] input tensor.
template <typename T>
Tensor<T> make_batch(const InMemoryDataset& ds, const std::vector<std::int64_t>& indices) {
  if (indices.empty()) throw DomainError("make_batch: empty index list");
  const int frames = ds.frames();
  const int bins = ds.bins();
  Tensor<T> x({static_cast<int>(indices.size()), frames, bins, 1});
  T* px = x.data();
  const std::int64_t per = static_cast<std::int64_t>(frames) * bins;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto& spec = ds.features(indices[i]);
    for (std::int64_t j = 0; j < per; ++j)
      px[static_cast<std::int64_t>(i) * per + j] =
          static_cast<T>(spec.values[static_cast<std::size_t>(j)]);
  }
  return x;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainOptions {
  int epochs = 50;
  int batch_size = 16;
  AdamConfig adam;
  std::uint64_t seed = 0;
  // Stop once the epoch's training SCA reaches this value (< 0 disables).
  double target_train_sca = -1.0;
};

struct EpochStats {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_sca = 0.0;
  double dev_loss = 0.0;
  double dev_sca = 0.0;
};

struct TrainResult {
  std::vector<EpochStats> log;
  int best_epoch = 0;  // 1-based epoch whose weights the model now holds
  double best_dev_loss = std::numeric_limits<double>::infinity();
};

// Index of the minimum dev loss, ties to the earliest epoch.
inline std::size_t best_epoch_index(const std::vector<double>& dev_losses) {
  if (dev_losses.empty()) throw DomainError("best_epoch_index: empty loss sequence");
  std::size_t best = 0;
  for (std::size_t i = 1; i < dev_losses.size(); ++i)
    if (dev_losses[i] < dev_losses[best]) best = i;
  return best;
}

template <typename T>
std::pair<double, double> evaluate(Model<T>& model, const InMemoryDataset& ds, int batch_size) {
  if (ds.size() == 0) throw ConfigError("evaluate: empty dataset");
  double loss_sum = 0.0;
  std::vector<int> preds, truths;
  for (std::int64_t start = 0; start < ds.size(); start += batch_size) {
    const std::int64_t end = std::min<std::int64_t>(start + batch_size, ds.size());
    std::vector<std::int64_t> idx;
    for (std::int64_t i = start; i < end; ++i) idx.push_back(i);
    Tensor<T> x = make_batch<T>(ds, idx);
    std::vector<int> labels;
    for (std::int64_t i : idx) labels.push_back(ds.label(i));
    Tensor<T> probs = model.forward(x, Mode::kInfer);
    Tensor<T> loss = sparse_ce<T>(nullptr, probs, labels);
    loss_sum += static_cast<double>(loss[0]) * static_cast<double>(idx.size());
    const auto batch_preds = argmax_rows(probs);
    preds.insert(preds.end(), batch_preds.begin(), batch_preds.end());
    truths.insert(truths.end(), labels.begin(), labels.end());
  }
  return {loss_sum / static_cast<double>(ds.size()), sca(preds, truths)};
}

// Minibatch Adam with per-epoch seeded shuffling and best-dev-loss model
// selection: the checkpointed weights are the ones from the epoch with the
// strictly best dev loss, and they are restored into `model` on return.
template <typename T>
TrainResult train(Model<T>& model, const InMemoryDataset& train_ds, const InMemoryDataset& dev_ds,
                  const TrainOptions& options,
                  const std::function<void(const EpochStats&)>& on_epoch = nullptr) {
  if (train_ds.size() == 0 || dev_ds.size() == 0)
    throw ConfigError("train: train and dev sets must be non-empty");
  if (options.epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (options.batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (train_ds.frames() != model.config().input_frames ||
      train_ds.bins() != model.config().input_bins)
    throw ShapeError("train: dataset features " + std::to_string(train_ds.frames()) + "x" +
                     std::to_string(train_ds.bins()) + " do not match model input " +
                     std::to_string(model.config().input_frames) + "x" +
                     std::to_string(model.config().input_bins));

  auto params = model.parameters();
  auto buffers = model.buffers();
  AdamOptimizer<T> optimizer(params, options.adam);
  Rng dropout_rng(options.seed ^ 0xd1f7c0debeefULL);

  TrainResult result;
  std::vector<std::vector<T>> best_params, best_buffers;
  auto snapshot = [](const std::vector<ParamRef<T>>& refs) {
    std::vector<std::vector<T>> out;
    out.reserve(refs.size());
    for (const auto& r : refs)
      out.emplace_back(r.tensor->data(), r.tensor->data() + r.tensor->size());
    return out;
  };
  auto restore = [](const std::vector<ParamRef<T>>& refs, const std::vector<std::vector<T>>& saved) {
    for (std::size_t i = 0; i < refs.size(); ++i)
      for (std::int64_t j = 0; j < refs[i].tensor->size(); ++j)
        refs[i].tensor->data()[j] = saved[i][static_cast<std::size_t>(j)];
  };

  for (int epoch = 1; epoch <= options.epochs; ++epoch) {
    std::vector<std::int64_t> order(static_cast<std::size_t>(train_ds.size()));
    for (std::int64_t i = 0; i < train_ds.size(); ++i) order[static_cast<std::size_t>(i)] = i;
    Rng shuffle_rng(options.seed + static_cast<std::uint64_t>(epoch));
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    std::vector<int> train_preds, train_truths;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(options.batch_size)) {
      const std::size_t end =
          std::min(order.size(), start + static_cast<std::size_t>(options.batch_size));
      const std::vector<std::int64_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                          order.begin() + static_cast<std::ptrdiff_t>(end));
      std::vector<int> labels;
      for (std::int64_t i : idx) labels.push_back(train_ds.label(i));
      try {
        Tensor<T> x = make_batch<T>(train_ds, idx);
        Graph<T> graph;
        Tensor<T> probs = model.forward(x, Mode::kTrain, &graph, &dropout_rng);
        Tensor<T> loss = sparse_ce(&graph, probs, labels);
        optimizer.zero_grad();
        graph.backward(loss);
        optimizer.step();
        loss_sum += static_cast<double>(loss[0]) * static_cast<double>(idx.size());
        const auto preds = argmax_rows(probs);
        train_preds.insert(train_preds.end(), preds.begin(), preds.end());
        train_truths.insert(train_truths.end(), labels.begin(), labels.end());
      } catch (const NumericError& e) {
        throw NumericError("train: epoch " + std::to_string(epoch) + ", step " +
                           std::to_string(optimizer.step_count() + 1) + ": " + e.what());
      }
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / static_cast<double>(train_ds.size());
    stats.train_sca = sca(train_preds, train_truths);
    const auto [dev_loss, dev_sca] = evaluate(model, dev_ds, options.batch_size);
    stats.dev_loss = dev_loss;
    stats.dev_sca = dev_sca;
    result.log.push_back(stats);
    if (on_epoch) on_epoch(stats);

    if (stats.dev_loss < result.best_dev_loss) {
      result.best_dev_loss = stats.dev_loss;
      result.best_epoch = epoch;
      best_params = snapshot(params);
      best_buffers = snapshot(buffers);
    }
    if (options.target_train_sca > 0 && stats.train_sca >= options.target_train_sca) break;
  }

  restore(params, best_params);
  restore(buffers, best_buffers);
  return result;
}

inline void write_train_log(const std::vector<EpochStats>& log, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("write_train_log: cannot open " + path + " for writing");
  f << "epoch,train_loss,dev_loss,dev_sca\n";
  char buf[128];
  for (const auto& s : log) {
    std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g\n", s.epoch, s.train_loss, s.dev_loss,
                  s.dev_sca);
    f << buf;
  }
  if (!f) throw IoError("write_train_log: write failed for " + path);
}

}  // namespace antispoof
