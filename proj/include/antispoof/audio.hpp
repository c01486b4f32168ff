#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "antispoof/common.hpp"

namespace antispoof {

struct AudioClip {
  std::vector<float> samples;
  int sample_rate_hz = 16000;

  double duration_s() const {
    return static_cast<double>(samples.size()) / sample_rate_hz;
  }
};

struct WordEntry {
  std::int64_t start_sample = 0;
  std::int64_t end_sample = 0;
  std::string word;
};

struct WordAlignment {
  std::vector<WordEntry> entries;
};

namespace detail {

inline void validate_clip(const AudioClip& clip, const char* what) {
  if (clip.samples.empty()) throw DomainError(std::string(what) + ": empty clip");
  if (clip.sample_rate_hz <= 0) throw DomainError(std::string(what) + ": bad sample rate");
  for (float s : clip.samples)
    if (!std::isfinite(s)) throw NumericError(std::string(what) + ": non-finite sample");
}

}  // namespace detail

// RIFF/WAVE PCM 16-bit mono reader. The pipeline runs at 16 kHz only, so any
// other rate is rejected up front.
inline AudioClip read_wav(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("read_wav: cannot open " + path);

  char riff[4], wave[4];
  f.read(riff, 4);
  std::uint32_t riff_size = 0;
  {
    unsigned char b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    riff_size = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
                (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  }
  (void)riff_size;
  f.read(wave, 4);
  if (!f || std::string(riff, 4) != "RIFF" || std::string(wave, 4) != "WAVE")
    throw FormatError("read_wav: not a RIFF/WAVE file: " + path);

  bool have_fmt = false;
  std::uint16_t audio_format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  std::vector<char> data;
  bool have_data = false;

  auto read_u32 = [&f, &path]() {
    unsigned char b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    if (!f) throw FormatError("read_wav: truncated chunk header in " + path);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  };
  auto read_u16 = [&f, &path]() {
    unsigned char b[2];
    f.read(reinterpret_cast<char*>(b), 2);
    if (!f) throw FormatError("read_wav: truncated field in " + path);
    return static_cast<std::uint16_t>(static_cast<std::uint16_t>(b[0]) |
                                      (static_cast<std::uint16_t>(b[1]) << 8));
  };

  while (true) {
    char id[4];
    f.read(id, 4);
    if (f.gcount() == 0) break;  // clean end of chunk list
    if (f.gcount() != 4) throw FormatError("read_wav: truncated chunk id in " + path);
    const std::uint32_t size = read_u32();
    const std::string chunk(id, 4);
    if (chunk == "fmt ") {
      if (size < 16) throw FormatError("read_wav: fmt chunk too small in " + path);
      audio_format = read_u16();
      channels = read_u16();
      rate = read_u32();
      read_u32();  // byte rate
      read_u16();  // block align
      bits = read_u16();
      f.seekg(size - 16 + (size % 2), std::ios::cur);
      have_fmt = true;
    } else if (chunk == "data") {
      data.resize(size);
      f.read(data.data(), size);
      if (f.gcount() != static_cast<std::streamsize>(size))
        throw FormatError("read_wav: truncated data chunk in " + path);
      if (size % 2) f.seekg(1, std::ios::cur);
      have_data = true;
    } else {
      f.seekg(size + (size % 2), std::ios::cur);
      if (!f) throw FormatError("read_wav: truncated chunk " + chunk + " in " + path);
    }
  }
  if (!have_fmt || !have_data) throw FormatError("read_wav: missing fmt/data chunk in " + path);
  if (audio_format != 1 || bits != 16)
    throw UnsupportedFormatError("read_wav: only PCM 16-bit supported, got format " +
                                 std::to_string(audio_format) + "/" + std::to_string(bits) +
                                 " bits in " + path);
  if (channels != 1)
    throw UnsupportedFormatError("read_wav: only mono supported, got " + std::to_string(channels) +
                                 " channels in " + path);
  if (rate != 16000)
    throw SampleRateError("read_wav: pipeline requires 16000 Hz, got " + std::to_string(rate) +
                          " in " + path);

  AudioClip clip;
  clip.sample_rate_hz = static_cast<int>(rate);
  const std::size_t n = data.size() / 2;
  clip.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint16_t lo = static_cast<unsigned char>(data[2 * i]);
    const std::uint16_t hi = static_cast<unsigned char>(data[2 * i + 1]);
    const std::int16_t v = static_cast<std::int16_t>(static_cast<std::uint16_t>(lo | (hi << 8)));
    clip.samples[i] = static_cast<float>(v) / 32768.0f;
  }
  detail::validate_clip(clip, "read_wav");
  return clip;
}

// Quantizes by round(s*32768) clamped to int16 range, which keeps the
// write/read round trip within 1/32768 per sample (1.0 still maps to 32767).
inline void write_wav(const AudioClip& clip, const std::string& path) {
  detail::validate_clip(clip, "write_wav");
  for (float s : clip.samples)
    if (s < -1.0f || s > 1.0f)
      throw DomainError("write_wav: sample " + std::to_string(s) + " outside [-1, 1]");

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("write_wav: cannot open " + path + " for writing");

  const std::uint32_t data_bytes = static_cast<std::uint32_t>(clip.samples.size() * 2);
  const std::uint32_t rate = static_cast<std::uint32_t>(clip.sample_rate_hz);
  io::write_bytes(f, "RIFF", 4);
  io::write_u32(f, 36 + data_bytes);
  io::write_bytes(f, "WAVE", 4);
  io::write_bytes(f, "fmt ", 4);
  io::write_u32(f, 16);
  io::write_u16(f, 1);  // PCM
  io::write_u16(f, 1);  // mono
  io::write_u32(f, rate);
  io::write_u32(f, rate * 2);
  io::write_u16(f, 2);
  io::write_u16(f, 16);
  io::write_bytes(f, "data", 4);
  io::write_u32(f, data_bytes);
  for (float s : clip.samples) {
    long q = std::lround(static_cast<double>(s) * 32768.0);
    if (q > 32767) q = 32767;
    if (q < -32768) q = -32768;
    io::write_i16(f, static_cast<std::int16_t>(q));
  }
  if (!f) throw IoError("write_wav: write failed for " + path);
}

// One "start end word" line per word, sample indices (TIMIT .wrd layout).
// Entries must already be ordered and non-overlapping.
inline WordAlignment parse_alignment(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("parse_alignment: cannot open " + path);
  WordAlignment out;
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    std::istringstream ss(line);
    std::string a, b, w, extra;
    if (!(ss >> a)) continue;  // blank line
    if (!(ss >> b >> w))
      throw FormatError("parse_alignment: " + path + ":" + std::to_string(line_no) +
                        ": expected 'start end word'");
    if (ss >> extra)
      throw FormatError("parse_alignment: " + path + ":" + std::to_string(line_no) +
                        ": trailing fields");
    WordEntry e;
    try {
      std::size_t pos_a = 0, pos_b = 0;
      e.start_sample = std::stoll(a, &pos_a);
      e.end_sample = std::stoll(b, &pos_b);
      if (pos_a != a.size() || pos_b != b.size()) throw std::invalid_argument("junk");
    } catch (const std::exception&) {
      throw FormatError("parse_alignment: " + path + ":" + std::to_string(line_no) +
                        ": non-integer bounds");
    }
    e.word = w;
    if (e.start_sample < 0 || e.start_sample >= e.end_sample)
      throw AlignmentError("parse_alignment: " + path + ":" + std::to_string(line_no) +
                           ": requires 0 <= start < end");
    if (!out.entries.empty() && e.start_sample < out.entries.back().end_sample)
      throw AlignmentError("parse_alignment: " + path + ":" + std::to_string(line_no) +
                           ": entries overlap or are unordered");
    out.entries.push_back(std::move(e));
  }
  return out;
}

struct MixResult {
  AudioClip clip;
  double noise_gain = 0.0;     // g applied to the noise segment
  double renorm_scale = 1.0;   // global rescale if the mix peaked above 1
  std::int64_t noise_offset = 0;
};

inline double mean_power(const std::vector<float>& samples) {
  double acc = 0.0;
  for (float s : samples) acc += static_cast<double>(s) * s;
  return samples.empty() ? 0.0 : acc / static_cast<double>(samples.size());
}

// output = signal + g*noise_segment with g set so that
// 10*log10(P_signal / P_scaled_noise) == snr_db. The noise is tiled
// end-to-end and a seeded random offset picks the crop, so the same seed is
// bit-reproducible. If the mix peaks above 1 the whole output is rescaled by
// one scalar (recorded in the result) rather than hard-clipped.
inline MixResult mix_at_snr(const AudioClip& signal, const AudioClip& noise, double snr_db,
                            std::uint64_t seed) {
  detail::validate_clip(signal, "mix_at_snr(signal)");
  detail::validate_clip(noise, "mix_at_snr(noise)");
  if (signal.sample_rate_hz != noise.sample_rate_hz)
    throw SampleRateError("mix_at_snr: signal at " + std::to_string(signal.sample_rate_hz) +
                          " Hz but noise at " + std::to_string(noise.sample_rate_hz) + " Hz");

  const std::size_t n = signal.samples.size();
  const std::size_t m = noise.samples.size();
  Rng rng(seed);
  const std::size_t offset = static_cast<std::size_t>(rng.index(m));

  std::vector<float> segment(n);
  for (std::size_t i = 0; i < n; ++i) segment[i] = noise.samples[(offset + i) % m];

  const double p_signal = mean_power(signal.samples);
  const double p_segment = mean_power(segment);
  if (p_signal <= 0.0) throw DomainError("mix_at_snr: zero-power signal");
  if (p_segment <= 0.0) throw DomainError("mix_at_snr: zero-power noise segment");

  const double g = std::sqrt(p_signal / (p_segment * std::pow(10.0, snr_db / 10.0)));

  MixResult result;
  result.noise_gain = g;
  result.noise_offset = static_cast<std::int64_t>(offset);
  result.clip.sample_rate_hz = signal.sample_rate_hz;
  result.clip.samples.resize(n);
  float peak = 0.0f;
  for (std::size_t i = 0; i < n; ++i) {
    const float v = signal.samples[i] + static_cast<float>(g) * segment[i];
    result.clip.samples[i] = v;
    peak = std::max(peak, std::abs(v));
  }
  if (peak > 1.0f) {
    result.renorm_scale = 1.0 / static_cast<double>(peak);
    for (auto& v : result.clip.samples) v = static_cast<float>(v * result.renorm_scale);
  }
  detail::validate_clip(result.clip, "mix_at_snr(output)");
  return result;
}

}  // namespace antispoof
