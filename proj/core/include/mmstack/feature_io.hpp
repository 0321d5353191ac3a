#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "mmstack/types.hpp"

namespace mmstack {

// Dense per-modality sample x dimension matrix.
struct FeatureMatrix {
  std::string modality;
  Matrix values;

  std::size_t rows() const { return static_cast<std::size_t>(values.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(values.cols()); }
};

// Variable-length frame sequences (t_i x d per sample), e.g. audio embeddings.
struct SequenceSet {
  std::string modality;
  std::size_t dim = 0;
  std::vector<Matrix> frames;

  std::size_t rows() const { return frames.size(); }
};

enum class PoolMode { kMean, kMax };

PoolMode parse_pool_mode(const std::string& name);
std::string to_string(PoolMode mode);

// Column-wise mean or max over the frames of one sequence (t >= 1).
RowVector temporal_pool(const Matrix& frames, PoolMode mode);

FeatureMatrix pool_sequences(const SequenceSet& seq, PoolMode mode);

// Binary feature file, little-endian:
//   "MMFB" | u32 version=1 | u8 kind | u64 n | u64 d | payload
// kind 0 (matrix): n*d float32 row-major.
// kind 1 (sequence set): per sample u32 t followed by t*d float32.
inline constexpr char kFeatureMagic[4] = {'M', 'M', 'F', 'B'};
inline constexpr std::uint32_t kFeatureVersion = 1;

enum class FeatureKind : std::uint8_t { kMatrix = 0, kSequenceSet = 1 };

using FeatureFile = std::variant<FeatureMatrix, SequenceSet>;

// Decoders throw FormatError (magic/version/kind), CorruptionError (byte
// count disagrees with the header) and ValidationError (non-finite values).
FeatureFile decode_feature_file(const std::string& bytes, const std::string& modality = {});
std::string encode_feature_matrix(const FeatureMatrix& m);
std::string encode_sequence_set(const SequenceSet& s);

FeatureFile read_feature_file(const std::filesystem::path& path, const std::string& modality = {});
FeatureMatrix load_feature_matrix(const std::filesystem::path& path, const std::string& modality = {});
void write_feature_matrix(const FeatureMatrix& m, const std::filesystem::path& path);
void write_sequence_set(const SequenceSet& s, const std::filesystem::path& path);

// Whole-file helpers shared by every on-disk format. write_file_atomic writes
// to a sibling temp file and renames it into place.
std::string read_file(const std::filesystem::path& path);
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);

}  // namespace mmstack
