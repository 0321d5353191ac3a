#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <limits>

#include "mmstack/errors.hpp"
#include "mmstack/feature_io.hpp"
#include "mmstack/random.hpp"
#include "test_support.hpp"

using namespace mmstack;

namespace {

FeatureMatrix sample_matrix() {
  FeatureMatrix m{"visual", Matrix(3, 4)};
  m.values << 0.1, -2.5, 3.0, 4.25,  //
      1e-3, 7.0, -0.0, 8.5,           //
      100.0, -1e5, 0.333, 2.0;
  return m;
}

SequenceSet sample_sequences() {
  SequenceSet s{"sound", 2, {}};
  Matrix a(3, 2);
  a << 1, 2, 3, 4, 5, 6;
  Matrix b(1, 2);
  b << -1, 0.5;
  s.frames = {a, b};
  return s;
}

template <typename T>
T read_le(const std::string& bytes, std::size_t offset) {
  T v;
  std::memcpy(&v, bytes.data() + offset, sizeof v);
  return v;
}

}  // namespace

TEST(FeatureFile, HeaderLayout) {
  const std::string bytes = encode_feature_matrix(sample_matrix());
  EXPECT_EQ(bytes.substr(0, 4), "MMFB");
  EXPECT_EQ(read_le<std::uint32_t>(bytes, 4), 1u);
  EXPECT_EQ(static_cast<std::uint8_t>(bytes[8]), 0u);
  EXPECT_EQ(read_le<std::uint64_t>(bytes, 9), 3u);
  EXPECT_EQ(read_le<std::uint64_t>(bytes, 17), 4u);
  EXPECT_EQ(bytes.size(), 25u + 3 * 4 * sizeof(float));
  EXPECT_EQ(read_le<float>(bytes, 25 + 4), -2.5f);
}

TEST(FeatureFile, MatrixRoundTripIsByteIdentical) {
  const std::string first = encode_feature_matrix(sample_matrix());
  const auto decoded = std::get<FeatureMatrix>(decode_feature_file(first, "visual"));
  EXPECT_EQ(decoded.modality, "visual");
  ASSERT_EQ(decoded.rows(), 3u);
  ASSERT_EQ(decoded.dim(), 4u);
  EXPECT_EQ(decoded.values(0, 3), 4.25);
  EXPECT_EQ(decoded.values(2, 2), static_cast<double>(0.333f));
  EXPECT_EQ(encode_feature_matrix(decoded), first);
}

TEST(FeatureFile, SequenceRoundTripIsByteIdentical) {
  const std::string first = encode_sequence_set(sample_sequences());
  EXPECT_EQ(static_cast<std::uint8_t>(first[8]), 1u);
  const auto decoded = std::get<SequenceSet>(decode_feature_file(first, "sound"));
  ASSERT_EQ(decoded.rows(), 2u);
  EXPECT_EQ(decoded.frames[0].rows(), 3);
  EXPECT_EQ(decoded.frames[1](0, 1), 0.5);
  EXPECT_EQ(encode_sequence_set(decoded), first);
}

TEST(FeatureFile, DiskWriteReadWriteIsByteIdentical) {
  fixtures::TempDir dir("fio");
  write_feature_matrix(sample_matrix(), dir / "a.mmfb");
  const FeatureMatrix loaded = load_feature_matrix(dir / "a.mmfb", "visual");
  write_feature_matrix(loaded, dir / "b.mmfb");
  EXPECT_EQ(read_file(dir / "a.mmfb"), read_file(dir / "b.mmfb"));

  write_sequence_set(sample_sequences(), dir / "s.mmfb");
  const auto seq = std::get<SequenceSet>(read_feature_file(dir / "s.mmfb"));
  write_sequence_set(seq, dir / "t.mmfb");
  EXPECT_EQ(read_file(dir / "s.mmfb"), read_file(dir / "t.mmfb"));
}

TEST(FeatureFile, RejectsBadMagic) {
  std::string bytes = encode_feature_matrix(sample_matrix());
  bytes[0] = 'X';
  EXPECT_THROW(decode_feature_file(bytes), FormatError);
}

TEST(FeatureFile, RejectsUnknownVersionAndKind) {
  std::string bytes = encode_feature_matrix(sample_matrix());
  std::string v2 = bytes;
  v2[4] = 2;
  EXPECT_THROW(decode_feature_file(v2), FormatError);
  std::string k9 = bytes;
  k9[8] = 9;
  EXPECT_THROW(decode_feature_file(k9), FormatError);
}

TEST(FeatureFile, TruncatedOrPaddedPayloadIsCorruption) {
  const std::string bytes = encode_feature_matrix(sample_matrix());
  EXPECT_THROW(decode_feature_file(bytes.substr(0, bytes.size() - 1)), CorruptionError);
  EXPECT_THROW(decode_feature_file(bytes + "x"), CorruptionError);
  EXPECT_THROW(decode_feature_file(bytes.substr(0, 10)), ValidationError);

  const std::string seq = encode_sequence_set(sample_sequences());
  EXPECT_THROW(decode_feature_file(seq.substr(0, seq.size() - 4)), CorruptionError);
}

TEST(FeatureFile, NonFiniteValuesRejected) {
  FeatureMatrix m = sample_matrix();
  m.values(1, 1) = std::numeric_limits<double>::quiet_NaN();
  // The encoder writes what it is given; the decoder refuses it.
  EXPECT_THROW(decode_feature_file(encode_feature_matrix(m)), ValidationError);
}

TEST(FeatureFile, EmptySequenceRejected) {
  SequenceSet s = sample_sequences();
  s.frames[1] = Matrix(0, 2);
  EXPECT_THROW(decode_feature_file(encode_sequence_set(s)), ValidationError);
}

TEST(FeatureFile, MissingFileIsIoError) {
  EXPECT_THROW(read_feature_file("/nonexistent/dir/x.mmfb"), IoError);
}

TEST(TemporalPool, MeanAndMax) {
  Matrix f(3, 2);
  f << 1, -4, 3, 0, 5, 1;
  const RowVector mean = temporal_pool(f, PoolMode::kMean);
  const RowVector max = temporal_pool(f, PoolMode::kMax);
  EXPECT_DOUBLE_EQ(mean(0), 3.0);
  EXPECT_DOUBLE_EQ(mean(1), -1.0);
  EXPECT_DOUBLE_EQ(max(0), 5.0);
  EXPECT_DOUBLE_EQ(max(1), 1.0);
  EXPECT_THROW(temporal_pool(Matrix(0, 2), PoolMode::kMean), ValidationError);
}

TEST(TemporalPool, SingleFrameIsIdentity) {
  Matrix f(1, 3);
  f << 0.5, -1.5, 2.0;
  EXPECT_EQ(temporal_pool(f, PoolMode::kMean), f.row(0));
  EXPECT_EQ(temporal_pool(f, PoolMode::kMax), f.row(0));
}

TEST(TemporalPool, PoolSequencesShapes) {
  const FeatureMatrix pooled = pool_sequences(sample_sequences(), PoolMode::kMean);
  EXPECT_EQ(pooled.modality, "sound");
  ASSERT_EQ(pooled.rows(), 2u);
  ASSERT_EQ(pooled.dim(), 2u);
  EXPECT_DOUBLE_EQ(pooled.values(0, 0), 3.0);
  EXPECT_DOUBLE_EQ(pooled.values(1, 1), 0.5);
}

TEST(PoolMode, ParseAndPrint) {
  EXPECT_EQ(parse_pool_mode("mean"), PoolMode::kMean);
  EXPECT_EQ(parse_pool_mode("max"), PoolMode::kMax);
  EXPECT_EQ(to_string(PoolMode::kMax), "max");
  EXPECT_THROW(parse_pool_mode("median"), ValidationError);
}

TEST(TemporalPool, TwoFrameMean) {
  Matrix f(2, 2);
  f << 1, 3, 3, 5;
  EXPECT_EQ(temporal_pool(f, PoolMode::kMean), (RowVector(2) << 2, 4).finished());
}

TEST(TemporalPool, SoundSizedSequenceReducesToFrameWidth) {
  EXPECT_EQ(temporal_pool(Matrix::Ones(62, 128), PoolMode::kMean).size(), 128);
}

TEST(TemporalPool, MeanIsLinearAndMaxIgnoresFrameOrder) {
  Rng rng(3);
  Matrix f(7, 5);
  for (Eigen::Index i = 0; i < f.size(); ++i) f.data()[i] = rng.normal();
  const RowVector base = temporal_pool(f, PoolMode::kMean);
  const RowVector scaled = temporal_pool(2.5 * f, PoolMode::kMean);
  EXPECT_TRUE(scaled.isApprox(2.5 * base, 1e-12));
  Matrix reversed = f.colwise().reverse();
  EXPECT_EQ(temporal_pool(reversed, PoolMode::kMax), temporal_pool(f, PoolMode::kMax));
}

TEST(FeatureFile, RandomMatrixRoundTripIsBitIdentical) {
  Rng rng(17);
  FeatureMatrix m{"x", Matrix(100, 16)};
  for (Eigen::Index i = 0; i < m.values.size(); ++i) m.values.data()[i] = static_cast<float>(rng.normal());
  const auto back = std::get<FeatureMatrix>(decode_feature_file(encode_feature_matrix(m)));
  EXPECT_EQ(back.values, m.values);
}
