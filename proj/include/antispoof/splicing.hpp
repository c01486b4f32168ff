#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "antispoof/audio.hpp"
#include "antispoof/common.hpp"
#include "antispoof/cqt.hpp"
#include "antispoof/model.hpp"
#include "antispoof/ops.hpp"
#include "antispoof/tensor.hpp"

namespace antispoof {

struct SpliceInsertion {
  std::int64_t donor_word_index = 0;
  std::int64_t host_insert_sample = 0;  // position in ORIGINAL host coordinates
};

struct SpliceRecord {
  std::string output_path;
  std::string host_id;
  std::string donor_id;
  int k = 0;
  std::vector<SpliceInsertion> insertions;     // in draw order
  std::vector<std::int64_t> boundaries;        // sorted, in output-clip coordinates, 2k entries
};

struct SpliceResult {
  AudioClip clip;
  SpliceRecord record;
};

namespace detail {

inline void validate_alignment_against(const AudioClip& clip, const WordAlignment& alignment,
                                       const std::string& what) {
  const auto len = static_cast<std::int64_t>(clip.samples.size());
  for (const auto& e : alignment.entries)
    if (e.end_sample > len)
      throw AlignmentError(what + ": word '" + e.word + "' ends at sample " +
                           std::to_string(e.end_sample) + " beyond clip length " +
                           std::to_string(len));
}

// Sorted unique word-boundary samples of the host, including utterance start
// and end.
inline std::vector<std::int64_t> host_boundary_positions(const AudioClip& host,
                                                         const WordAlignment& alignment) {
  std::vector<std::int64_t> positions{0, static_cast<std::int64_t>(host.samples.size())};
  for (const auto& e : alignment.entries) {
    positions.push_back(e.start_sample);
    positions.push_back(e.end_sample);
  }
  std::sort(positions.begin(), positions.end());
  positions.erase(std::unique(positions.begin(), positions.end()), positions.end());
  return positions;
}

// Assembles the spliced clip for an explicit pick list. An empty pick list
// returns the host unchanged (used by tests as the k = 0 degenerate case).
inline SpliceResult splice_with(const AudioClip& host, const AudioClip& donor,
                                const WordAlignment& donor_alignment,
                                const std::vector<SpliceInsertion>& picks) {
  if (host.sample_rate_hz != donor.sample_rate_hz)
    throw SampleRateError("splice: host rate " + std::to_string(host.sample_rate_hz) +
                          " != donor rate " + std::to_string(donor.sample_rate_hz));
  const auto host_len = static_cast<std::int64_t>(host.samples.size());
  const auto n_words = static_cast<std::int64_t>(donor_alignment.entries.size());
  for (const auto& p : picks) {
    if (p.donor_word_index < 0 || p.donor_word_index >= n_words)
      throw GenerationError("splice: donor word index " + std::to_string(p.donor_word_index) +
                            " out of range [0," + std::to_string(n_words) + ")");
    if (p.host_insert_sample < 0 || p.host_insert_sample > host_len)
      throw GenerationError("splice: insert position " + std::to_string(p.host_insert_sample) +
                            " outside host [0," + std::to_string(host_len) + "]");
  }

  std::vector<SpliceInsertion> ordered(picks);
  std::sort(ordered.begin(), ordered.end(), [](const SpliceInsertion& a, const SpliceInsertion& b) {
    return a.host_insert_sample < b.host_insert_sample;
  });

  SpliceResult result;
  result.clip.sample_rate_hz = host.sample_rate_hz;
  result.record.k = static_cast<int>(picks.size());
  result.record.insertions = picks;
  auto& out = result.clip.samples;
  std::int64_t host_pos = 0;
  for (const auto& ins : ordered) {
    out.insert(out.end(), host.samples.begin() + host_pos,
               host.samples.begin() + ins.host_insert_sample);
    host_pos = ins.host_insert_sample;
    const auto& word = donor_alignment.entries[static_cast<std::size_t>(ins.donor_word_index)];
    const std::int64_t b_start = static_cast<std::int64_t>(out.size());
    out.insert(out.end(), donor.samples.begin() + word.start_sample,
               donor.samples.begin() + word.end_sample);
    result.record.boundaries.push_back(b_start);
    result.record.boundaries.push_back(static_cast<std::int64_t>(out.size()));
  }
  out.insert(out.end(), host.samples.begin() + host_pos, host.samples.end());
  std::sort(result.record.boundaries.begin(), result.record.boundaries.end());
  return result;
}

}  // namespace detail

// Inserts k donor words at k distinct host word boundaries. Each round draws
// one donor word then one host position, both uniformly and without
// replacement. Boundary positions in the record are final-output coordinates.
inline SpliceResult generate_splice(const AudioClip& host, const WordAlignment& host_alignment,
                                    const AudioClip& donor, const WordAlignment& donor_alignment,
                                    int k, std::uint64_t seed) {
  if (k < 1 || k > 3) throw ConfigError("generate_splice: k must be in [1,3], got " + std::to_string(k));
  detail::validate_clip(host, "generate_splice host");
  detail::validate_clip(donor, "generate_splice donor");
  detail::validate_alignment_against(host, host_alignment, "generate_splice host");
  detail::validate_alignment_against(donor, donor_alignment, "generate_splice donor");
  if (static_cast<int>(donor_alignment.entries.size()) < k)
    throw GenerationError("generate_splice: donor has " +
                          std::to_string(donor_alignment.entries.size()) + " words, need " +
                          std::to_string(k));
  auto positions = detail::host_boundary_positions(host, host_alignment);
  const auto host_len = static_cast<std::int64_t>(host.samples.size());
  bool has_interior = false;
  for (auto p : positions) has_interior = has_interior || (p > 0 && p < host_len);
  if (!has_interior) throw GenerationError("generate_splice: host has no interior word boundary");
  if (static_cast<int>(positions.size()) < k)
    throw GenerationError("generate_splice: host offers only " + std::to_string(positions.size()) +
                          " insert positions, need " + std::to_string(k));

  Rng rng(seed);
  std::vector<std::int64_t> word_pool(donor_alignment.entries.size());
  for (std::size_t i = 0; i < word_pool.size(); ++i) word_pool[i] = static_cast<std::int64_t>(i);
  std::vector<SpliceInsertion> picks;
  for (int round = 0; round < k; ++round) {
    const auto wi = rng.index(word_pool.size());
    const std::int64_t word = word_pool[wi];
    word_pool.erase(word_pool.begin() + static_cast<std::ptrdiff_t>(wi));
    const auto pi = rng.index(positions.size());
    const std::int64_t pos = positions[pi];
    positions.erase(positions.begin() + static_cast<std::ptrdiff_t>(pi));
    picks.push_back({word, pos});
  }
  return detail::splice_with(host, donor, donor_alignment, picks);
}

// ---------------------------------------------------------------------------
// Corpus generation
// ---------------------------------------------------------------------------

struct NoiseSpec {
  AudioClip clip;
  double snr_db = 15.0;
};

struct CorpusOptions {
  std::optional<NoiseSpec> noise;
  int pairs_per_speaker = 2;
  std::uint64_t seed = 0;
};

inline void write_splice_manifest(const std::vector<SpliceRecord>& records,
                                  const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("write_splice_manifest: cannot open " + path + " for writing");
  f << "output_path,host_id,donor_id,k,boundaries\n";
  for (const auto& r : records) {
    f << r.output_path << ',' << r.host_id << ',' << r.donor_id << ',' << r.k << ',';
    for (std::size_t i = 0; i < r.boundaries.size(); ++i) {
      if (i) f << ';';
      f << r.boundaries[i];
    }
    f << '\n';
  }
  if (!f) throw IoError("write_splice_manifest: write failed for " + path);
}

inline std::vector<SpliceRecord> read_splice_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("read_splice_manifest: cannot open " + path);
  std::vector<SpliceRecord> records;
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line_no == 1 && line.rfind("output_path,", 0) == 0) continue;
    std::stringstream ss(line);
    SpliceRecord r;
    std::string k_field, bounds;
    if (!std::getline(ss, r.output_path, ',') || !std::getline(ss, r.host_id, ',') ||
        !std::getline(ss, r.donor_id, ',') || !std::getline(ss, k_field, ',') ||
        !std::getline(ss, bounds))
      throw FormatError("read_splice_manifest: " + path + ":" + std::to_string(line_no) +
                        ": expected 5 comma-separated fields");
    try {
      r.k = std::stoi(k_field);
    } catch (const std::exception&) {
      throw FormatError("read_splice_manifest: " + path + ":" + std::to_string(line_no) +
                        ": bad k '" + k_field + "'");
    }
    std::stringstream bs(bounds);
    std::string tok;
    while (std::getline(bs, tok, ';')) {
      try {
        r.boundaries.push_back(std::stoll(tok));
      } catch (const std::exception&) {
        throw FormatError("read_splice_manifest: " + path + ":" + std::to_string(line_no) +
                          ": bad boundary '" + tok + "'");
      }
    }
    if (static_cast<int>(r.boundaries.size()) != 2 * r.k)
      throw FormatError("read_splice_manifest: " + path + ":" + std::to_string(line_no) + ": " +
                        std::to_string(r.boundaries.size()) + " boundaries for k=" +
                        std::to_string(r.k));
    records.push_back(std::move(r));
  }
  return records;
}

// Walks <corpus_dir>/<speaker>/<utt>.wav with sibling <utt>.wrd alignments,
// draws pairs_per_speaker (host, donor) pairs within each speaker, and writes
// spliced WAVs plus manifest.csv into out_dir. When noise is configured both
// host and donor are mixed at the requested SNR before splicing. Every random
// choice comes from a per-pair forked rng, so regeneration with the same seed
// is byte-identical.
inline std::vector<SpliceRecord> build_corpus(const std::string& corpus_dir,
                                              const std::string& out_dir,
                                              const CorpusOptions& options = {}) {
  namespace fs = std::filesystem;
  if (options.pairs_per_speaker < 1)
    throw ConfigError("build_corpus: pairs_per_speaker must be >= 1");
  if (!fs::is_directory(corpus_dir)) throw IoError("build_corpus: no such directory " + corpus_dir);
  fs::create_directories(out_dir);

  std::vector<std::string> speakers;
  for (const auto& entry : fs::directory_iterator(corpus_dir))
    if (entry.is_directory()) speakers.push_back(entry.path().filename().string());
  std::sort(speakers.begin(), speakers.end());

  struct PairJob {
    std::string speaker, host_utt, donor_utt;
    fs::path host_wav, donor_wav;
    int pair_index = 0;
    Rng rng{0};
  };
  std::vector<PairJob> jobs;
  Rng master(options.seed);
  for (const auto& speaker : speakers) {
    std::vector<std::string> utts;
    for (const auto& entry : fs::directory_iterator(fs::path(corpus_dir) / speaker)) {
      if (!entry.is_regular_file() || entry.path().extension() != ".wav") continue;
      const auto stem = entry.path().stem().string();
      if (fs::exists(entry.path().parent_path() / (stem + ".wrd"))) utts.push_back(stem);
    }
    std::sort(utts.begin(), utts.end());
    if (utts.size() < 2) {
      std::cerr << "warning: speaker " << speaker << " has " << utts.size()
                << " usable utterances, skipping\n";
      continue;
    }
    for (int p = 0; p < options.pairs_per_speaker; ++p) {
      PairJob job;
      job.speaker = speaker;
      job.pair_index = p;
      job.rng = master.fork();
      const auto hi = job.rng.index(utts.size());
      auto di = job.rng.index(utts.size() - 1);
      if (di >= hi) ++di;
      job.host_utt = utts[hi];
      job.donor_utt = utts[di];
      const fs::path dir = fs::path(corpus_dir) / speaker;
      job.host_wav = dir / (job.host_utt + ".wav");
      job.donor_wav = dir / (job.donor_utt + ".wav");
      jobs.push_back(std::move(job));
    }
  }

  std::vector<SpliceRecord> records;
  for (auto& job : jobs) {
    const int k = 1 + static_cast<int>(job.rng.index(3));
    AudioClip host = read_wav(job.host_wav.string());
    AudioClip donor = read_wav(job.donor_wav.string());
    const WordAlignment host_align =
        parse_alignment((job.host_wav.parent_path() / (job.host_utt + ".wrd")).string());
    const WordAlignment donor_align =
        parse_alignment((job.donor_wav.parent_path() / (job.donor_utt + ".wrd")).string());
    if (options.noise) {
      host = mix_at_snr(host, options.noise->clip, options.noise->snr_db, job.rng.next_u64()).clip;
      donor = mix_at_snr(donor, options.noise->clip, options.noise->snr_db, job.rng.next_u64()).clip;
    }
    SpliceResult result = generate_splice(host, host_align, donor, donor_align, k, job.rng.next_u64());
    result.record.host_id = job.speaker + "/" + job.host_utt;
    result.record.donor_id = job.speaker + "/" + job.donor_utt;
    result.record.output_path = job.speaker + "_p" + std::to_string(job.pair_index) + "_" +
                                job.host_utt + "_" + job.donor_utt + ".wav";
    write_wav(result.clip, (fs::path(out_dir) / result.record.output_path).string());
    records.push_back(std::move(result.record));
  }
  write_splice_manifest(records, (fs::path(out_dir) / "manifest.csv").string());
  return records;
}

// ---------------------------------------------------------------------------
// Chunking and detection
// ---------------------------------------------------------------------------

struct Chunk {
  int start_frame = 0;
  int label = 0;
  CqtSpectrogram feature;  // window x bins slice
};

// Sliding 16-frame window at hop_frames; a chunk is positive iff any boundary
// sample falls inside [start_frame*hop_samples, (start_frame+window)*hop_samples).
inline std::vector<Chunk> chunk_and_label(const CqtSpectrogram& spec,
                                          const std::vector<std::int64_t>& boundaries,
                                          int window = 16, int hop_frames = 8) {
  if (window < 1) throw ConfigError("chunk_and_label: window must be >= 1");
  if (hop_frames < 1) throw ConfigError("chunk_and_label: hop_frames must be >= 1");
  if (spec.frames < window)
    throw DomainError("chunk_and_label: clip too short, " + std::to_string(spec.frames) +
                      " frames < window " + std::to_string(window));
  std::vector<Chunk> chunks;
  for (int start = 0; start + window <= spec.frames; start += hop_frames) {
    Chunk c;
    c.start_frame = start;
    const std::int64_t lo = static_cast<std::int64_t>(start) * spec.hop_samples;
    const std::int64_t hi = static_cast<std::int64_t>(start + window) * spec.hop_samples;
    for (auto b : boundaries)
      if (b >= lo && b < hi) {
        c.label = 1;
        break;
      }
    c.feature.frames = window;
    c.feature.bins = spec.bins;
    c.feature.hop_samples = spec.hop_samples;
    c.feature.values.resize(static_cast<std::size_t>(window) * static_cast<std::size_t>(spec.bins));
    for (int t = 0; t < window; ++t)
      for (int b = 0; b < spec.bins; ++b)
        c.feature.values[static_cast<std::size_t>(t) * static_cast<std::size_t>(spec.bins) +
                         static_cast<std::size_t>(b)] = spec.at(start + t, b);
    chunks.push_back(std::move(c));
  }
  return chunks;
}

struct DetectionRow {
  double chunk_start_s = 0.0;
  double p_boundary = 0.0;
  int decision = 0;
};

template <typename T>
std::vector<DetectionRow> detect_boundaries(Model<T>& model, const AudioClip& clip,
                                            int hop_frames = 8, const CqtConfig& cqt_config = {}) {
  const ModelConfig& mc = model.config();
  constexpr int kWindow = 16;
  if (mc.input_frames != kWindow)
    throw ConfigError("detect_boundaries: model input is " + std::to_string(mc.input_frames) +
                      " frames, chunk window is " + std::to_string(kWindow));
  if (mc.num_classes != 2)
    throw ConfigError("detect_boundaries: model has " + std::to_string(mc.num_classes) +
                      " classes, need 2");
  const CqtSpectrogram spec = cqt(clip, cqt_config);
  if (mc.input_bins != spec.bins)
    throw ConfigError("detect_boundaries: model expects " + std::to_string(mc.input_bins) +
                      " bins, features have " + std::to_string(spec.bins));
  const auto chunks = chunk_and_label(spec, {}, kWindow, hop_frames);

  std::vector<DetectionRow> rows;
  const double fs = static_cast<double>(clip.sample_rate_hz);
  constexpr std::size_t kBatch = 64;
  for (std::size_t start = 0; start < chunks.size(); start += kBatch) {
    const std::size_t end = std::min(chunks.size(), start + kBatch);
    Tensor<T> x({static_cast<int>(end - start), kWindow, spec.bins, 1});
    T* px = x.data();
    const std::size_t per = static_cast<std::size_t>(kWindow) * static_cast<std::size_t>(spec.bins);
    for (std::size_t i = start; i < end; ++i)
      for (std::size_t j = 0; j < per; ++j)
        px[(i - start) * per + j] = static_cast<T>(chunks[i].feature.values[j]);
    Tensor<T> probs = model.forward(x, Mode::kInfer);
    for (std::size_t i = start; i < end; ++i) {
      DetectionRow row;
      row.chunk_start_s =
          static_cast<double>(chunks[i].start_frame) * static_cast<double>(spec.hop_samples) / fs;
      const T p0 = probs[static_cast<std::int64_t>(i - start) * 2];
      const T p1 = probs[static_cast<std::int64_t>(i - start) * 2 + 1];
      row.p_boundary = static_cast<double>(p1);
      row.decision = p1 > p0 ? 1 : 0;
      rows.push_back(row);
    }
  }
  return rows;
}

inline void write_detection_csv(const std::vector<DetectionRow>& rows, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("write_detection_csv: cannot open " + path + " for writing");
  f << "chunk_start_s,p_boundary,decision\n";
  char buf[96];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%.9g,%.9g,%d\n", r.chunk_start_s, r.p_boundary, r.decision);
    f << buf;
  }
  if (!f) throw IoError("write_detection_csv: write failed for " + path);
}

}  // namespace antispoof
