#include <gtest/gtest.h>

#include <algorithm>
#include <cstdint>
#include <set>
#include <sstream>
#include <vector>

#include "antispoof/common.hpp"

using namespace antispoof;

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, DifferentSeedsDiffer) {
  Rng a(1), b(2);
  bool any_diff = false;
  for (int i = 0; i < 10; ++i) any_diff = any_diff || (a.next_u64() != b.next_u64());
  EXPECT_TRUE(any_diff);
}

TEST(Rng, UniformInHalfOpenUnit) {
  Rng rng(7);
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
  }
}

TEST(Rng, UniformRangeRespectsBounds) {
  Rng rng(9);
  for (int i = 0; i < 1000; ++i) {
    const double u = rng.uniform(-3.0, 5.0);
    EXPECT_GE(u, -3.0);
    EXPECT_LT(u, 5.0);
  }
}

TEST(Rng, IndexBoundsAndCoverage) {
  Rng rng(11);
  std::vector<int> counts(5, 0);
  for (int i = 0; i < 5000; ++i) {
    const auto v = rng.index(5);
    ASSERT_LT(v, 5u);
    counts[static_cast<std::size_t>(v)]++;
  }
  for (int c : counts) EXPECT_GT(c, 800);  // roughly uniform
  EXPECT_THROW(rng.index(0), DomainError);
}

TEST(Rng, NormalHasSaneMoments) {
  Rng rng(13);
  double sum = 0.0, sq = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double v = rng.normal();
    sum += v;
    sq += v * v;
  }
  EXPECT_NEAR(sum / n, 0.0, 0.05);
  EXPECT_NEAR(sq / n, 1.0, 0.05);
}

TEST(Rng, ShuffleIsPermutationAndDeterministic) {
  std::vector<int> v(50);
  for (int i = 0; i < 50; ++i) v[static_cast<std::size_t>(i)] = i;
  auto w = v;
  Rng a(3), b(3);
  a.shuffle(v);
  b.shuffle(w);
  EXPECT_EQ(v, w);
  auto sorted = v;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 50; ++i) EXPECT_EQ(sorted[static_cast<std::size_t>(i)], i);
}

TEST(Rng, SampleWithoutReplacementDistinctInRange) {
  Rng rng(17);
  const auto sample = rng.sample_without_replacement(20, 8);
  EXPECT_EQ(sample.size(), 8u);
  std::set<std::uint64_t> seen(sample.begin(), sample.end());
  EXPECT_EQ(seen.size(), 8u);
  for (auto v : sample) EXPECT_LT(v, 20u);
  EXPECT_THROW(rng.sample_without_replacement(3, 4), DomainError);
}

TEST(Rng, ForkDecorrelatesStreams) {
  Rng parent(5);
  Rng child = parent.fork();
  Rng parent2(5);
  Rng child2 = parent2.fork();
  for (int i = 0; i < 10; ++i) EXPECT_EQ(child.next_u64(), child2.next_u64());
  // child stream differs from a fresh parent stream
  Rng fresh(5);
  Rng child3 = Rng(5).fork();
  EXPECT_NE(child3.next_u64(), fresh.next_u64());
}

TEST(Io, RoundTripsAllWidths) {
  std::stringstream ss;
  io::write_u16(ss, 0xbeef);
  io::write_u32(ss, 0xdeadbeefu);
  io::write_u64(ss, 0x0123456789abcdefULL);
  io::write_i16(ss, -12345);
  io::write_f32(ss, 3.14159f);
  io::write_f64(ss, -2.718281828459045);
  EXPECT_EQ(io::read_u16(ss, "u16"), 0xbeef);
  EXPECT_EQ(io::read_u32(ss, "u32"), 0xdeadbeefu);
  EXPECT_EQ(io::read_u64(ss, "u64"), 0x0123456789abcdefULL);
  EXPECT_EQ(io::read_i16(ss, "i16"), -12345);
  EXPECT_EQ(io::read_f32(ss, "f32"), 3.14159f);
  EXPECT_EQ(io::read_f64(ss, "f64"), -2.718281828459045);
}

TEST(Io, LittleEndianLayout) {
  std::stringstream ss;
  io::write_u32(ss, 0x01020304u);
  const std::string bytes = ss.str();
  ASSERT_EQ(bytes.size(), 4u);
  EXPECT_EQ(static_cast<unsigned char>(bytes[0]), 0x04);
  EXPECT_EQ(static_cast<unsigned char>(bytes[3]), 0x01);
}

TEST(Io, TruncatedReadThrows) {
  std::stringstream ss;
  io::write_u16(ss, 7);
  EXPECT_THROW(io::read_u32(ss, "u32"), FormatError);
}

TEST(Crc32, KnownVector) {
  Crc32 crc;
  crc.update("123456789", 9);
  EXPECT_EQ(crc.value(), 0xcbf43926u);
}

TEST(Crc32, IncrementalEqualsOneShot) {
  Crc32 a, b;
  const std::string data = "the quick brown fox jumps over the lazy dog";
  a.update(data.data(), data.size());
  b.update(data.data(), 10);
  b.update(data.data() + 10, data.size() - 10);
  EXPECT_EQ(a.value(), b.value());
}

TEST(Errors, HierarchyMapsToBaseError) {
  EXPECT_THROW(throw DomainError("x"), Error);
  EXPECT_THROW(throw SampleRateError("x"), FormatError);
  EXPECT_THROW(throw UnsupportedFormatError("x"), FormatError);
  EXPECT_THROW(throw CheckpointError("x"), Error);
}
