// antispoof: synthetic-voice and splicing-boundary detection toolkit.
//
// Subcommands: features extract, train, score, metrics {sca,eer,tdcf},
// splice {generate,detect}, model info. Logs are key=value lines on stderr;
// data outputs go to files or stdout. Exit codes: 0 ok, 1 domain error,
// 2 usage error.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "antispoof/audio.hpp"
#include "antispoof/checkpoint.hpp"
#include "antispoof/common.hpp"
#include "antispoof/cqt.hpp"
#include "antispoof/labels.hpp"
#include "antispoof/metrics.hpp"
#include "antispoof/model.hpp"
#include "antispoof/splicing.hpp"
#include "antispoof/training.hpp"

namespace fs = std::filesystem;
using namespace antispoof;

namespace {

constexpr const char* kVersion = "antispoof 1.0.0";

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

std::string shape_string(const std::vector<int>& dims) {
  std::string s;
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) s += 'x';
    s += std::to_string(dims[i]);
  }
  return s;
}

// Model config resolution: built-in defaults, then an optional JSON file,
// then --set key.path=value overrides, then explicit flags. Later wins.
ModelConfig resolve_model_config(const std::string& config_arg, const std::vector<std::string>& sets,
                                 const std::string& variant_flag, int classes_flag) {
  nlohmann::json j;
  to_json(j, ModelConfig{});
  if (!config_arg.empty() && config_arg != "default-plain") {
    if (config_arg == "default-conformer") {
      j["variant"] = variant_name(Variant::kConformer);
    } else {
      std::ifstream f(config_arg);
      if (!f) throw ConfigError("config: '" + config_arg +
                                "' is neither a built-in name (default-plain, default-conformer) "
                                "nor a readable file");
      nlohmann::json file_j;
      try {
        file_j = nlohmann::json::parse(f);
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config: " + config_arg + ": " + e.what());
      }
      j.merge_patch(file_j);
    }
  }
  for (const auto& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0)
      throw ConfigError("--set expects key.path=value, got '" + kv + "'");
    std::string key = kv.substr(0, eq);
    std::replace(key.begin(), key.end(), '.', '/');
    nlohmann::json value;
    try {
      value = nlohmann::json::parse(kv.substr(eq + 1));
    } catch (const nlohmann::json::exception&) {
      value = kv.substr(eq + 1);  // bare strings need no quotes
    }
    j[nlohmann::json::json_pointer("/" + key)] = value;
  }
  if (!variant_flag.empty()) j["variant"] = variant_flag;
  if (classes_flag > 0) j["num_classes"] = classes_flag;
  ModelConfig config = model_config_from_json(j);
  config.validate();
  return config;
}

std::vector<int> read_label_column(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path);
  std::vector<int> labels;
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto comma = line.rfind(',');
    const std::string field = comma == std::string::npos ? line : line.substr(comma + 1);
    try {
      labels.push_back(std::stoi(field));
    } catch (const std::exception&) {
      if (line_no == 1) continue;  // header row
      throw FormatError(path + ":" + std::to_string(line_no) + ": expected an integer label, got '" +
                        field + "'");
    }
  }
  return labels;
}

// --- features extract -------------------------------------------------------

struct ExtractArgs {
  std::string in_dir, out_dir;
  int frames = 400;
  std::uint64_t seed = 0;
};

void run_extract(const ExtractArgs& a) {
  std::cerr << "event=start cmd=features-extract seed=" << a.seed << " threads=" << thread_count()
            << " in=" << a.in_dir << " out=" << a.out_dir << " frames=" << a.frames << "\n";
  if (a.frames < 0) throw ConfigError("features extract: --frames must be >= 0");
  fs::create_directories(a.out_dir);
  std::vector<fs::path> wavs;
  for (const auto& entry : fs::directory_iterator(a.in_dir))
    if (entry.is_regular_file() && entry.path().extension() == ".wav") wavs.push_back(entry.path());
  std::sort(wavs.begin(), wavs.end());
  if (wavs.empty()) throw DomainError("features extract: no .wav files in " + a.in_dir);
  CqtKernelBank bank(CqtConfig{}, 16000);
  for (const auto& wav : wavs) {
    const AudioClip clip = read_wav(wav.string());
    CqtSpectrogram spec = bank.transform(clip);
    if (a.frames > 0) spec = fit_frames(spec, a.frames);
    const fs::path out = fs::path(a.out_dir) / (wav.stem().string() + ".feat");
    write_feature_file(spec, out.string());
    std::cerr << "event=extracted file=" << wav.filename().string() << " rows=" << spec.frames
              << " bins=" << spec.bins << "\n";
  }
  std::cerr << "event=done files=" << wavs.size() << "\n";
}

// --- train -------------------------------------------------------------------

struct TrainArgs {
  std::string train_manifest, dev_manifest, out_path, log_path;
  std::string config_arg = "default-plain";
  std::vector<std::string> sets;
  std::string variant;
  int classes = 0;
  int epochs = 50;
  int batch_size = 16;
  double lr = 1e-3;
  double target_train_sca = -1.0;
  std::uint64_t seed = 0;
};

void run_train(const TrainArgs& a) {
  std::cerr << "event=start cmd=train seed=" << a.seed << " threads=" << thread_count()
            << " train=" << a.train_manifest << " dev=" << a.dev_manifest << " out=" << a.out_path
            << "\n";
  ModelConfig config = resolve_model_config(a.config_arg, a.sets, a.variant, a.classes);
  const auto train_entries = load_manifest(a.train_manifest, config.num_classes);
  const auto dev_entries = load_manifest(a.dev_manifest, config.num_classes);
  InMemoryDataset train_ds = load_feature_dataset(train_entries);
  InMemoryDataset dev_ds = load_feature_dataset(dev_entries);
  if (train_ds.frames() != config.input_frames || train_ds.bins() != config.input_bins) {
    // Convenience: adopt the feature geometry when the user did not pin one.
    if (a.config_arg == "default-plain" || a.config_arg == "default-conformer") {
      bool frames_overridden = false, bins_overridden = false;
      for (const auto& s : a.sets) {
        frames_overridden = frames_overridden || s.rfind("input_frames=", 0) == 0;
        bins_overridden = bins_overridden || s.rfind("input_bins=", 0) == 0;
      }
      if (!frames_overridden) config.input_frames = train_ds.frames();
      if (!bins_overridden) config.input_bins = train_ds.bins();
      config.validate();
    }
  }
  std::cerr << "event=config variant=" << variant_name(config.variant)
            << " classes=" << config.num_classes << " input=" << config.input_frames << "x"
            << config.input_bins << "\n";

  Model<float> model(config, a.seed);
  std::cerr << "event=model params=" << model.param_count() << "\n";
  TrainOptions options;
  options.epochs = a.epochs;
  options.batch_size = a.batch_size;
  options.adam.lr = a.lr;
  options.seed = a.seed;
  options.target_train_sca = a.target_train_sca;
  TrainResult result = train(model, train_ds, dev_ds, options, [](const EpochStats& s) {
    std::cerr << "event=epoch epoch=" << s.epoch << " train_loss=" << fmt_double(s.train_loss)
              << " train_sca=" << fmt_double(s.train_sca)
              << " dev_loss=" << fmt_double(s.dev_loss) << " dev_sca=" << fmt_double(s.dev_sca)
              << "\n";
  });
  CheckpointMeta meta;
  meta.epoch = result.best_epoch;
  meta.dev_loss = result.best_dev_loss;
  meta.seed = a.seed;
  save_checkpoint(model, a.out_path, meta);
  if (!a.log_path.empty()) write_train_log(result.log, a.log_path);
  std::cerr << "event=done best_epoch=" << result.best_epoch
            << " best_dev_loss=" << fmt_double(result.best_dev_loss) << " checkpoint=" << a.out_path
            << "\n";
}

// --- score -------------------------------------------------------------------

struct ScoreArgs {
  std::string model_path, features_manifest, out_path;
  std::uint64_t seed = 0;
};

void run_score(const ScoreArgs& a) {
  std::cerr << "event=start cmd=score seed=" << a.seed << " threads=" << thread_count()
            << " model=" << a.model_path << " features=" << a.features_manifest << "\n";
  CheckpointData data = read_checkpoint(a.model_path);
  Model<float> model(data.config, 0);
  apply_checkpoint(model, data);
  const auto entries = load_manifest(a.features_manifest, data.config.num_classes);
  InMemoryDataset ds = load_feature_dataset(entries);
  std::vector<ScoreRecord> records;
  constexpr std::int64_t kBatch = 32;
  for (std::int64_t start = 0; start < ds.size(); start += kBatch) {
    const std::int64_t end = std::min(start + kBatch, ds.size());
    std::vector<std::int64_t> idx;
    for (std::int64_t i = start; i < end; ++i) idx.push_back(i);
    Tensor<float> probs = model.forward(make_batch<float>(ds, idx), Mode::kInfer);
    const auto scores = merge_to_binary(probs);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const auto& e = entries[static_cast<std::size_t>(idx[r])];
      records.push_back({e.utt_id, scores[r], e.label == kLabelBonafide});
    }
  }
  write_scores_csv(records, a.out_path);
  std::cerr << "event=done utterances=" << records.size() << " out=" << a.out_path << "\n";
}

// --- metrics -----------------------------------------------------------------

void run_eer(const std::string& scores_path, const std::string& det_path, std::uint64_t seed) {
  std::cerr << "event=start cmd=metrics-eer seed=" << seed << " scores=" << scores_path << "\n";
  const auto records = read_scores_csv(scores_path);
  const EerResult r = eer(records);
  if (!det_path.empty()) write_det_csv(det_curve(records), det_path);
  std::cout << "eer=" << fmt_double(r.eer) << " threshold=" << fmt_double(r.threshold) << "\n";
}

void run_tdcf(const std::string& scores_path, const std::string& asv_path, std::uint64_t seed) {
  std::cerr << "event=start cmd=metrics-tdcf seed=" << seed << " scores=" << scores_path
            << " asv_rates=" << asv_path << "\n";
  TdcfConfig config;
  read_asv_rates(asv_path, config);
  const auto records = read_scores_csv(scores_path);
  const TdcfResult r = min_tdcf(records, config);
  std::cout << "min_tdcf=" << fmt_double(r.min_tdcf) << " threshold=" << fmt_double(r.threshold)
            << "\n";
}

void run_sca(const std::string& pred_path, const std::string& truth_path, std::uint64_t seed) {
  std::cerr << "event=start cmd=metrics-sca seed=" << seed << " pred=" << pred_path
            << " truth=" << truth_path << "\n";
  const auto preds = read_label_column(pred_path);
  const auto truths = read_label_column(truth_path);
  std::cout << "sca=" << fmt_double(sca(preds, truths)) << "\n";
}

// --- splice ------------------------------------------------------------------

struct SpliceGenArgs {
  std::string corpus_dir, out_dir, noise_path;
  double snr_db = 15.0;
  int pairs_per_speaker = 2;
  std::uint64_t seed = 0;
};

void run_splice_generate(const SpliceGenArgs& a) {
  std::cerr << "event=start cmd=splice-generate seed=" << a.seed << " threads=" << thread_count()
            << " corpus=" << a.corpus_dir << " out=" << a.out_dir << "\n";
  CorpusOptions options;
  options.pairs_per_speaker = a.pairs_per_speaker;
  options.seed = a.seed;
  if (!a.noise_path.empty()) {
    NoiseSpec noise;
    noise.clip = read_wav(a.noise_path);
    noise.snr_db = a.snr_db;
    options.noise = std::move(noise);
    std::cerr << "event=noise file=" << a.noise_path << " snr_db=" << fmt_double(a.snr_db) << "\n";
  }
  const auto records = build_corpus(a.corpus_dir, a.out_dir, options);
  std::cerr << "event=done spliced=" << records.size()
            << " manifest=" << (fs::path(a.out_dir) / "manifest.csv").string() << "\n";
}

struct SpliceDetectArgs {
  std::string model_path, wav_path, out_path;
  int hop_frames = 8;
  std::uint64_t seed = 0;
};

void run_splice_detect(const SpliceDetectArgs& a) {
  std::cerr << "event=start cmd=splice-detect seed=" << a.seed << " threads=" << thread_count()
            << " model=" << a.model_path << " wav=" << a.wav_path << "\n";
  Model<float> model = load_checkpoint<float>(a.model_path);
  const AudioClip clip = read_wav(a.wav_path);
  const auto rows = detect_boundaries(model, clip, a.hop_frames);
  write_detection_csv(rows, a.out_path);
  int positives = 0;
  for (const auto& r : rows) positives += r.decision;
  std::cerr << "event=done chunks=" << rows.size() << " positives=" << positives
            << " out=" << a.out_path << "\n";
}

// --- model info ----------------------------------------------------------------

struct ModelInfoArgs {
  std::string config_arg = "default-plain";
  std::vector<std::string> sets;
  std::uint64_t seed = 0;
};

void run_model_info(const ModelInfoArgs& a) {
  std::cerr << "event=start cmd=model-info seed=" << a.seed << " config=" << a.config_arg << "\n";
  ModelConfig config = resolve_model_config(a.config_arg, a.sets, "", 0);
  Model<float> model(config, a.seed);
  std::printf("%-24s %-18s %-16s %12s\n", "name", "kind", "output_shape", "params");
  for (const auto& layer : model.manifest())
    std::printf("%-24s %-18s %-16s %12lld\n", layer.name.c_str(), layer.kind.c_str(),
                shape_string(layer.output_shape).c_str(), static_cast<long long>(layer.params));
  std::printf("variant=%s total_params=%lld\n", variant_name(config.variant).c_str(),
              static_cast<long long>(model.param_count()));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Synthetic-voice and splicing-boundary detection toolkit"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "Worker threads for parallel-safe loops (default: cores)");

  // features extract
  auto* features = app.add_subcommand("features", "Feature pipeline");
  features->require_subcommand(1);
  ExtractArgs extract_args;
  auto* extract = features->add_subcommand("extract", "Compute CQT features for a directory of WAVs");
  extract->add_option("--in", extract_args.in_dir, "Directory of 16 kHz mono PCM16 .wav files")
      ->required()
      ->check(CLI::ExistingDirectory);
  extract->add_option("--out", extract_args.out_dir, "Output directory for .feat files")->required();
  extract->add_option("--frames", extract_args.frames,
                      "Fit each spectrogram to this many rows (0 keeps native length)");
  extract->add_option("--seed", extract_args.seed, "Run seed (echoed in logs)");
  extract->callback([&] {
    set_thread_count(threads);
    run_extract(extract_args);
  });

  // train
  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Train a detector from feature manifests");
  train_cmd->add_option("--train", train_args.train_manifest, "Training manifest CSV (path,label|attack_id)")
      ->required()
      ->check(CLI::ExistingFile);
  train_cmd->add_option("--dev", train_args.dev_manifest, "Dev manifest CSV")
      ->required()
      ->check(CLI::ExistingFile);
  train_cmd->add_option("--out", train_args.out_path, "Checkpoint output path")->required();
  train_cmd->add_option("--config", train_args.config_arg,
                        "Built-in config name (default-plain, default-conformer) or JSON file");
  train_cmd->add_option("--set", train_args.sets, "Config override key.path=value (repeatable)");
  train_cmd->add_option("--variant", train_args.variant, "Model variant (plain, conformer)")
      ->check(CLI::IsMember({"plain", "conformer"}));
  train_cmd->add_option("--classes", train_args.classes, "Number of classes (2 or 3)");
  train_cmd->add_option("--epochs", train_args.epochs, "Training epochs");
  train_cmd->add_option("--batch-size", train_args.batch_size, "Minibatch size");
  train_cmd->add_option("--lr", train_args.lr, "Adam learning rate");
  train_cmd->add_option("--target-train-sca", train_args.target_train_sca,
                        "Stop early once train SCA reaches this value");
  train_cmd->add_option("--log", train_args.log_path, "Write per-epoch CSV log here");
  train_cmd->add_option("--seed", train_args.seed, "Run seed");
  train_cmd->callback([&] {
    set_thread_count(threads);
    run_train(train_args);
  });

  // score
  ScoreArgs score_args;
  auto* score_cmd = app.add_subcommand("score", "Score utterances with a trained checkpoint");
  score_cmd->add_option("--model", score_args.model_path, "Checkpoint path")
      ->required()
      ->check(CLI::ExistingFile);
  score_cmd->add_option("--features", score_args.features_manifest, "Feature manifest CSV")
      ->required()
      ->check(CLI::ExistingFile);
  score_cmd->add_option("--out", score_args.out_path, "Scores CSV output path")->required();
  score_cmd->add_option("--seed", score_args.seed, "Run seed");
  score_cmd->callback([&] {
    set_thread_count(threads);
    run_score(score_args);
  });

  // metrics
  auto* metrics = app.add_subcommand("metrics", "Evaluation metrics");
  metrics->require_subcommand(1);
  std::string eer_scores, eer_det;
  std::uint64_t eer_seed = 0;
  auto* eer_cmd = metrics->add_subcommand("eer", "Equal error rate from a scores CSV");
  eer_cmd->add_option("--scores", eer_scores, "Scores CSV (utt_id,score,truth)")
      ->required()
      ->check(CLI::ExistingFile);
  eer_cmd->add_option("--det", eer_det, "Optionally write the DET sweep CSV here");
  eer_cmd->add_option("--seed", eer_seed, "Run seed");
  eer_cmd->callback([&] { run_eer(eer_scores, eer_det, eer_seed); });

  std::string tdcf_scores, tdcf_asv;
  std::uint64_t tdcf_seed = 0;
  auto* tdcf_cmd = metrics->add_subcommand("tdcf", "Minimum normalized tandem DCF");
  tdcf_cmd->add_option("--scores", tdcf_scores, "Scores CSV")->required()->check(CLI::ExistingFile);
  tdcf_cmd->add_option("--asv-rates", tdcf_asv, "key=value file with fixed ASV error rates")
      ->required()
      ->check(CLI::ExistingFile);
  tdcf_cmd->add_option("--seed", tdcf_seed, "Run seed");
  tdcf_cmd->callback([&] { run_tdcf(tdcf_scores, tdcf_asv, tdcf_seed); });

  std::string sca_pred, sca_truth;
  std::uint64_t sca_seed = 0;
  auto* sca_cmd = metrics->add_subcommand("sca", "Sparse categorical accuracy");
  sca_cmd->add_option("--pred", sca_pred, "Predicted labels, one per line (or CSV last column)")
      ->required()
      ->check(CLI::ExistingFile);
  sca_cmd->add_option("--truth", sca_truth, "True labels, same format")
      ->required()
      ->check(CLI::ExistingFile);
  sca_cmd->add_option("--seed", sca_seed, "Run seed");
  sca_cmd->callback([&] { run_sca(sca_pred, sca_truth, sca_seed); });

  // splice
  auto* splice = app.add_subcommand("splice", "Spliced-corpus generation and detection");
  splice->require_subcommand(1);
  SpliceGenArgs gen_args;
  auto* gen_cmd = splice->add_subcommand("generate", "Build a spliced corpus from aligned speech");
  gen_cmd->add_option("--corpus", gen_args.corpus_dir, "Corpus root: <speaker>/<utt>.wav + .wrd")
      ->required()
      ->check(CLI::ExistingDirectory);
  gen_cmd->add_option("--out", gen_args.out_dir, "Output directory")->required();
  gen_cmd->add_option("--noise", gen_args.noise_path, "Noise WAV mixed in before splicing")
      ->check(CLI::ExistingFile);
  gen_cmd->add_option("--snr", gen_args.snr_db, "Target SNR in dB for --noise");
  gen_cmd->add_option("--pairs-per-speaker", gen_args.pairs_per_speaker, "Pairs drawn per speaker");
  gen_cmd->add_option("--seed", gen_args.seed, "Run seed");
  gen_cmd->callback([&] {
    set_thread_count(threads);
    run_splice_generate(gen_args);
  });

  SpliceDetectArgs det_args;
  auto* det_cmd = splice->add_subcommand("detect", "Run chunk-level boundary detection on a WAV");
  det_cmd->add_option("--model", det_args.model_path, "Chunk-model checkpoint (16-frame input)")
      ->required()
      ->check(CLI::ExistingFile);
  det_cmd->add_option("--wav", det_args.wav_path, "Input WAV")->required()->check(CLI::ExistingFile);
  det_cmd->add_option("--hop-frames", det_args.hop_frames, "Sliding-window hop in frames");
  det_cmd->add_option("--out", det_args.out_path, "Detection CSV output path")->required();
  det_cmd->add_option("--seed", det_args.seed, "Run seed");
  det_cmd->callback([&] {
    set_thread_count(threads);
    run_splice_detect(det_args);
  });

  // model info
  auto* model_cmd = app.add_subcommand("model", "Model inspection");
  model_cmd->require_subcommand(1);
  ModelInfoArgs info_args;
  auto* info_cmd = model_cmd->add_subcommand("info", "Print the layer manifest and parameter count");
  info_cmd->add_option("--config", info_args.config_arg, "Built-in config name or JSON file");
  info_cmd->add_option("--set", info_args.sets, "Config override key.path=value (repeatable)");
  info_cmd->add_option("--seed", info_args.seed, "Init seed");
  info_cmd->callback([&] { run_model_info(info_args); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const Error& e) {
    std::cerr << "error=\"" << e.what() << "\"\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error=\"" << e.what() << "\"\n";
    return 1;
  }
  return 0;
}
