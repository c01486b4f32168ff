#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include "antispoof/audio.hpp"
#include "antispoof/common.hpp"

namespace antispoof {

struct CqtConfig {
  double hop_ms = 16.0;
  int octaves = 9;
  int bins_per_octave = 48;
  // 0 means "derive": f_min = Nyquist / 2^octaves, so the octaves span the
  // full band.
  double f_min_hz = 0.0;
  double log_floor = 1e-6;

  int bins() const { return octaves * bins_per_octave; }
};

struct CqtSpectrogram {
  std::vector<float> values;  // frames x bins, row-major
  int frames = 0;
  int bins = 0;
  int hop_samples = 0;

  float at(int t, int k) const {
    return values[static_cast<std::size_t>(t) * bins + static_cast<std::size_t>(k)];
  }
  float& at(int t, int k) {
    return values[static_cast<std::size_t>(t) * bins + static_cast<std::size_t>(k)];
  }
};

namespace detail {

inline float cqt_dot(const float* a, const float* b, std::int64_t n) {
  float acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::int64_t j = 0;
  for (; j + 8 <= n; j += 8)
    for (int u = 0; u < 8; ++u) acc[u] += a[j + u] * b[j + u];
  float tail = 0;
  for (; j < n; ++j) tail += a[j] * b[j];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail;
}

}  // namespace detail

// Complex Hann-windowed kernels, one per bin. Center frequencies are
// geometrically spaced: f_k = f_min * 2^(k / bins_per_octave); kernel length
// N_k = ceil(Q * fs / f_k) with Q = 1 / (2^(1/bins_per_octave) - 1). Kernels
// are L1-normalized, so a unit tone yields magnitudes independent of bin.
class CqtKernelBank {
 public:
  CqtKernelBank(const CqtConfig& config, int sample_rate_hz) : config_(config) {
    if (sample_rate_hz <= 0) throw ConfigError("cqt: sample rate must be positive");
    if (config.octaves < 1 || config.bins_per_octave < 1)
      throw ConfigError("cqt: octaves and bins_per_octave must be >= 1");
    if (config.hop_ms <= 0) throw ConfigError("cqt: hop_ms must be positive");
    if (config.log_floor <= 0) throw ConfigError("cqt: log_floor must be positive");

    sample_rate_ = sample_rate_hz;
    const double nyquist = sample_rate_hz / 2.0;
    f_min_ = config.f_min_hz > 0 ? config.f_min_hz
                                 : nyquist / std::pow(2.0, static_cast<double>(config.octaves));
    if (f_min_ * std::pow(2.0, static_cast<double>(config.octaves)) > nyquist + 1e-9)
      throw ConfigError("cqt: f_min * 2^octaves exceeds Nyquist");
    hop_samples_ = static_cast<int>(std::lround(config.hop_ms * sample_rate_hz / 1000.0));
    if (hop_samples_ < 1) throw ConfigError("cqt: hop rounds to zero samples");

    const int bins = config.bins();
    const double q = 1.0 / (std::pow(2.0, 1.0 / config.bins_per_octave) - 1.0);
    q_ = q;
    kernels_.resize(static_cast<std::size_t>(bins));
    max_len_ = 0;
    for (int k = 0; k < bins; ++k) {
      const double f_k = center_frequency(k);
      if (f_k >= nyquist)
        throw ConfigError("cqt: bin " + std::to_string(k) + " center frequency " +
                          std::to_string(f_k) + " Hz reaches Nyquist");
      const std::int64_t n_k =
          static_cast<std::int64_t>(std::ceil(q * sample_rate_hz / f_k));
      auto& kern = kernels_[static_cast<std::size_t>(k)];
      kern.re.resize(static_cast<std::size_t>(n_k));
      kern.im.resize(static_cast<std::size_t>(n_k));
      double w1 = 0.0;
      std::vector<double> window(static_cast<std::size_t>(n_k));
      for (std::int64_t j = 0; j < n_k; ++j) {
        const double w =
            n_k == 1 ? 1.0
                     : 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * static_cast<double>(j) /
                                             static_cast<double>(n_k - 1)));
        window[static_cast<std::size_t>(j)] = w;
        w1 += w;
      }
      const double center = static_cast<double>(n_k - 1) / 2.0;
      for (std::int64_t j = 0; j < n_k; ++j) {
        const double phase =
            -2.0 * std::numbers::pi * f_k * (static_cast<double>(j) - center) / sample_rate_hz;
        const double a = window[static_cast<std::size_t>(j)] / w1;
        kern.re[static_cast<std::size_t>(j)] = static_cast<float>(a * std::cos(phase));
        kern.im[static_cast<std::size_t>(j)] = static_cast<float>(a * std::sin(phase));
      }
      max_len_ = std::max(max_len_, n_k);
    }
  }

  int bins() const { return config_.bins(); }
  int hop_samples() const { return hop_samples_; }
  int sample_rate_hz() const { return sample_rate_; }
  std::int64_t max_kernel_length() const { return max_len_; }
  double q_factor() const { return q_; }
  double f_min_hz() const { return f_min_; }
  double center_frequency(int k) const {
    return f_min_ * std::pow(2.0, static_cast<double>(k) / config_.bins_per_octave);
  }
  std::int64_t kernel_length(int k) const {
    return static_cast<std::int64_t>(kernels_[static_cast<std::size_t>(k)].re.size());
  }
  const CqtConfig& config() const { return config_; }

  // Frames are centered at t = 0, hop, 2*hop, ... < N over the zero-padded
  // signal, giving T = ceil(N / hop) frames of log(|X| + log_floor).
  CqtSpectrogram transform(const AudioClip& clip) const {
    detail::validate_clip(clip, "cqt");
    if (clip.sample_rate_hz != sample_rate_)
      throw SampleRateError("cqt: kernel bank built for " + std::to_string(sample_rate_) +
                            " Hz, clip is " + std::to_string(clip.sample_rate_hz) + " Hz");
    const std::int64_t n = static_cast<std::int64_t>(clip.samples.size());
    if (n < hop_samples_)
      throw DomainError("cqt: clip of " + std::to_string(n) + " samples is shorter than one hop (" +
                        std::to_string(hop_samples_) + ")");

    const std::int64_t pad = max_len_ / 2 + 1;
    std::vector<float> padded(static_cast<std::size_t>(n + 2 * pad), 0.0f);
    for (std::int64_t i = 0; i < n; ++i)
      padded[static_cast<std::size_t>(pad + i)] = clip.samples[static_cast<std::size_t>(i)];

    CqtSpectrogram spec;
    spec.bins = bins();
    spec.hop_samples = hop_samples_;
    spec.frames = static_cast<int>((n + hop_samples_ - 1) / hop_samples_);
    spec.values.resize(static_cast<std::size_t>(spec.frames) * spec.bins);

    const float floor_f = static_cast<float>(config_.log_floor);
#if defined(_OPENMP)
#pragma omp parallel for schedule(static)
#endif
    for (int t = 0; t < spec.frames; ++t) {
      const std::int64_t center = static_cast<std::int64_t>(t) * hop_samples_;
      for (int k = 0; k < spec.bins; ++k) {
        const auto& kern = kernels_[static_cast<std::size_t>(k)];
        const std::int64_t len = static_cast<std::int64_t>(kern.re.size());
        const float* x = padded.data() + (pad + center - len / 2);
        const float re = detail::cqt_dot(x, kern.re.data(), len);
        const float im = detail::cqt_dot(x, kern.im.data(), len);
        spec.at(t, k) = std::log(std::sqrt(re * re + im * im) + floor_f);
      }
    }
    return spec;
  }

 private:
  struct Kernel {
    std::vector<float> re, im;
  };

  CqtConfig config_;
  int sample_rate_ = 0;
  int hop_samples_ = 0;
  double f_min_ = 0.0;
  double q_ = 0.0;
  std::int64_t max_len_ = 0;
  std::vector<Kernel> kernels_;
};

inline CqtSpectrogram cqt(const AudioClip& clip, const CqtConfig& config = {}) {
  CqtKernelBank bank(config, clip.sample_rate_hz);
  return bank.transform(clip);
}

// Truncate to the first `target` frames, or tile cyclically
// (out[i] = in[i mod T]) until `target` frames.
inline CqtSpectrogram fit_frames(const CqtSpectrogram& spec, int target = 400) {
  if (spec.frames < 1) throw DomainError("fit_frames: empty spectrogram");
  if (target < 1) throw ConfigError("fit_frames: target must be >= 1");
  CqtSpectrogram out;
  out.bins = spec.bins;
  out.hop_samples = spec.hop_samples;
  out.frames = target;
  out.values.resize(static_cast<std::size_t>(target) * spec.bins);
  for (int t = 0; t < target; ++t) {
    const int src = t % spec.frames;
    for (int k = 0; k < spec.bins; ++k) out.at(t, k) = spec.at(src, k);
  }
  return out;
}

// Feature container: 12-byte magic + u32 version, then T and B as u32, then
// row-major f32, all little-endian.
inline constexpr char kFeatureMagic[12] = {'A', 'S', 'P', 'F', 'E', 'A',
                                           'T', 'U', 'R', 'E', 'S', '\0'};
inline constexpr std::uint32_t kFeatureVersion = 1;

inline void write_feature_file(const CqtSpectrogram& spec, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("write_feature_file: cannot open " + path + " for writing");
  io::write_bytes(f, kFeatureMagic, sizeof(kFeatureMagic));
  io::write_u32(f, kFeatureVersion);
  io::write_u32(f, static_cast<std::uint32_t>(spec.frames));
  io::write_u32(f, static_cast<std::uint32_t>(spec.bins));
  for (float v : spec.values) io::write_f32(f, v);
  if (!f) throw IoError("write_feature_file: write failed for " + path);
}

inline CqtSpectrogram read_feature_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("read_feature_file: cannot open " + path);
  char magic[12];
  io::read_bytes(f, magic, sizeof(magic), "feature magic");
  for (std::size_t i = 0; i < sizeof(magic); ++i)
    if (magic[i] != kFeatureMagic[i])
      throw FormatError("read_feature_file: bad magic in " + path);
  const std::uint32_t version = io::read_u32(f, "feature version");
  if (version != kFeatureVersion)
    throw FormatError("read_feature_file: unsupported version " + std::to_string(version) +
                      " in " + path);
  CqtSpectrogram spec;
  spec.frames = static_cast<int>(io::read_u32(f, "feature frame count"));
  spec.bins = static_cast<int>(io::read_u32(f, "feature bin count"));
  if (spec.frames < 1 || spec.bins < 1)
    throw FormatError("read_feature_file: degenerate dims in " + path);
  spec.values.resize(static_cast<std::size_t>(spec.frames) * spec.bins);
  for (auto& v : spec.values) v = io::read_f32(f, "feature value");
  return spec;
}

}  // namespace antispoof
