#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace antispoof {

// ---------------------------------------------------------------------------
// Error taxonomy. Everything the library throws derives from Error so callers
// can map failures to a single exit path.
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed container or unparseable text.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Well-formed file, but an encoding this toolkit does not handle.
class UnsupportedFormatError : public FormatError {
 public:
  using FormatError::FormatError;
};

class SampleRateError : public FormatError {
 public:
  using FormatError::FormatError;
};

// Alignment entries that violate ordering/overlap rules.
class AlignmentError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf encountered where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Degenerate inputs: zero-power signals, single-class score sets, clips too
// short to process.
class DomainError : public Error {
 public:
  using Error::Error;
};

class LabelError : public Error {
 public:
  using Error::Error;
};

class MetricError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

class GenerationError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Deterministic RNG. mt19937_64 is fully specified by the standard; the
// derived draws below avoid std::uniform_*_distribution, whose output is
// implementation-defined. Same seed -> same stream on every platform.
// ---------------------------------------------------------------------------

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, n).
  std::uint64_t index(std::uint64_t n) {
    if (n == 0) throw DomainError("Rng::index: n must be positive");
    const std::uint64_t bound = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t r = next_u64();
    while (r >= bound) r = next_u64();
    return r % n;
  }

  // Box-Muller; consumes exactly two draws per call.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
  }

  // Derive an independent sub-stream (per-file, per-pair seeds).
  Rng fork() { return Rng(next_u64() ^ 0x9e3779b97f4a7c15ULL); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(index(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // k distinct values from [0, n), in draw order.
  std::vector<std::uint64_t> sample_without_replacement(std::uint64_t n, std::uint64_t k) {
    if (k > n) throw DomainError("Rng::sample_without_replacement: k > n");
    std::vector<std::uint64_t> pool(n);
    for (std::uint64_t i = 0; i < n; ++i) pool[i] = i;
    std::vector<std::uint64_t> out;
    out.reserve(k);
    for (std::uint64_t i = 0; i < k; ++i) {
      const std::uint64_t j = index(pool.size());
      out.push_back(pool[j]);
      pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(j));
    }
    return out;
  }

 private:
  std::mt19937_64 engine_;
};

// ---------------------------------------------------------------------------
// Little-endian byte I/O for the binary file formats (WAV, features,
// checkpoints). Explicit byte assembly keeps the formats portable.
// ---------------------------------------------------------------------------

namespace io {

inline void write_bytes(std::ostream& os, const void* p, std::size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  if (!os) throw IoError("write failed");
}

inline void write_u16(std::ostream& os, std::uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff)};
  write_bytes(os, b, 2);
}

inline void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  write_bytes(os, b, 4);
}

inline void write_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  write_bytes(os, b, 8);
}

inline void write_i16(std::ostream& os, std::int16_t v) {
  write_u16(os, static_cast<std::uint16_t>(v));
}

inline void write_f32(std::ostream& os, float v) {
  std::uint32_t u;
  std::memcpy(&u, &v, 4);
  write_u32(os, u);
}

inline void write_f64(std::ostream& os, double v) {
  std::uint64_t u;
  std::memcpy(&u, &v, 8);
  write_u64(os, u);
}

inline bool try_read_bytes(std::istream& is, void* p, std::size_t n) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  return static_cast<std::size_t>(is.gcount()) == n;
}

inline void read_bytes(std::istream& is, void* p, std::size_t n, const char* what) {
  if (!try_read_bytes(is, p, n)) throw FormatError(std::string("truncated input while reading ") + what);
}

inline std::uint16_t read_u16(std::istream& is, const char* what) {
  unsigned char b[2];
  read_bytes(is, b, 2, what);
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

inline std::uint32_t read_u32(std::istream& is, const char* what) {
  unsigned char b[4];
  read_bytes(is, b, 4, what);
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

inline std::uint64_t read_u64(std::istream& is, const char* what) {
  unsigned char b[8];
  read_bytes(is, b, 8, what);
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

inline std::int16_t read_i16(std::istream& is, const char* what) {
  return static_cast<std::int16_t>(read_u16(is, what));
}

inline float read_f32(std::istream& is, const char* what) {
  const std::uint32_t u = read_u32(is, what);
  float v;
  std::memcpy(&v, &u, 4);
  return v;
}

inline double read_f64(std::istream& is, const char* what) {
  const std::uint64_t u = read_u64(is, what);
  double v;
  std::memcpy(&v, &u, 8);
  return v;
}

}  // namespace io

// CRC-32 (IEEE 802.3, reflected), used as the checkpoint payload checksum.
class Crc32 {
 public:
  Crc32() { init_table(); }

  void update(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) state_ = table_[(state_ ^ p[i]) & 0xff] ^ (state_ >> 8);
  }

  std::uint32_t value() const { return state_ ^ 0xffffffffu; }

 private:
  void init_table() {
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? (0xedb88320u ^ (c >> 1)) : (c >> 1);
      table_[i] = c;
    }
  }

  std::uint32_t table_[256];
  std::uint32_t state_ = 0xffffffffu;
};

// Worker-thread knob honored by the parallel-safe loops. With OpenMP absent
// this is a no-op; results are identical for every thread count by design
// (each output element is reduced sequentially by a single thread).
void set_thread_count(int n);
int thread_count();

#if defined(_OPENMP)
}  // namespace antispoof
#include <omp.h>
namespace antispoof {
inline void set_thread_count(int n) {
  if (n > 0) omp_set_num_threads(n);
}
inline int thread_count() { return omp_get_max_threads(); }
#else
inline void set_thread_count(int) {}
inline int thread_count() { return 1; }
#endif

}  // namespace antispoof
