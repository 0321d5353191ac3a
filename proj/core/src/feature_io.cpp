#include "mmstack/feature_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mmstack/errors.hpp"

namespace mmstack {
namespace {

constexpr std::size_t kHeaderBytes = 4 + 4 + 1 + 8 + 8;

template <typename UInt>
void put_le(std::string& out, UInt v) {
  for (std::size_t i = 0; i < sizeof(UInt); ++i) {
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
}

void put_f32(std::string& out, double v) {
  put_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

class ByteReader {
 public:
  explicit ByteReader(const std::string& bytes) : bytes_(bytes) {}

  template <typename UInt>
  UInt get_le(const char* what) {
    require(sizeof(UInt), what);
    UInt v = 0;
    for (std::size_t i = 0; i < sizeof(UInt); ++i) {
      v |= static_cast<UInt>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(UInt);
    return v;
  }

  double get_f32() { return std::bit_cast<float>(get_le<std::uint32_t>("float32 payload")); }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void require(std::size_t count, const char* what) {
    if (remaining() < count) {
      throw CorruptionError(std::string("feature file truncated while reading ") + what);
    }
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

void check_finite(double v, std::size_t row, std::size_t col) {
  if (!std::isfinite(v)) {
    std::ostringstream msg;
    msg << "non-finite feature value at row " << row << ", column " << col;
    throw ValidationError(msg.str());
  }
}

std::string encode_header(FeatureKind kind, std::uint64_t n, std::uint64_t d) {
  std::string out(kFeatureMagic, 4);
  put_le(out, kFeatureVersion);
  out.push_back(static_cast<char>(kind));
  put_le(out, n);
  put_le(out, d);
  return out;
}

}  // namespace

PoolMode parse_pool_mode(const std::string& name) {
  if (name == "mean") return PoolMode::kMean;
  if (name == "max") return PoolMode::kMax;
  throw ValidationError("unknown pooling mode '" + name + "' (expected mean or max)");
}

std::string to_string(PoolMode mode) { return mode == PoolMode::kMean ? "mean" : "max"; }

RowVector temporal_pool(const Matrix& frames, PoolMode mode) {
  if (frames.rows() == 0) throw ValidationError("temporal_pool: empty sequence");
  if (mode == PoolMode::kMean) return frames.colwise().mean();
  return frames.colwise().maxCoeff();
}

FeatureMatrix pool_sequences(const SequenceSet& seq, PoolMode mode) {
  FeatureMatrix out{seq.modality, Matrix(static_cast<Eigen::Index>(seq.rows()),
                                         static_cast<Eigen::Index>(seq.dim))};
  for (std::size_t i = 0; i < seq.rows(); ++i) {
    if (static_cast<std::size_t>(seq.frames[i].cols()) != seq.dim) {
      throw ValidationError("sequence " + std::to_string(i) + " of '" + seq.modality +
                            "' has inconsistent frame dimension");
    }
    out.values.row(static_cast<Eigen::Index>(i)) = temporal_pool(seq.frames[i], mode);
  }
  return out;
}

std::string encode_feature_matrix(const FeatureMatrix& m) {
  std::string out = encode_header(FeatureKind::kMatrix, m.rows(), m.dim());
  out.reserve(kHeaderBytes + 4 * m.rows() * m.dim());
  for (Eigen::Index r = 0; r < m.values.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.values.cols(); ++c) put_f32(out, m.values(r, c));
  }
  return out;
}

std::string encode_sequence_set(const SequenceSet& s) {
  std::string out = encode_header(FeatureKind::kSequenceSet, s.rows(), s.dim);
  for (const Matrix& frames : s.frames) {
    if (static_cast<std::size_t>(frames.cols()) != s.dim) {
      throw ValidationError("sequence frame dimension differs from declared d");
    }
    put_le(out, static_cast<std::uint32_t>(frames.rows()));
    for (Eigen::Index r = 0; r < frames.rows(); ++r) {
      for (Eigen::Index c = 0; c < frames.cols(); ++c) put_f32(out, frames(r, c));
    }
  }
  return out;
}

FeatureFile decode_feature_file(const std::string& bytes, const std::string& modality) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kFeatureMagic, 4) != 0) {
    throw FormatError("not a feature file (bad magic bytes)");
  }
  if (bytes.size() < kHeaderBytes) throw CorruptionError("feature file header truncated");
  ByteReader in(bytes);
  in.get_le<std::uint32_t>("magic");
  const auto version = in.get_le<std::uint32_t>("version");
  if (version != kFeatureVersion) {
    throw FormatError("unsupported feature file version " + std::to_string(version));
  }
  const auto kind = in.get_le<std::uint8_t>("kind");
  const auto n = in.get_le<std::uint64_t>("n");
  const auto d = in.get_le<std::uint64_t>("d");

  if (kind == static_cast<std::uint8_t>(FeatureKind::kMatrix)) {
    if (d != 0 && n > in.remaining() / 4 / d) {
      throw CorruptionError("feature file payload shorter than header shape");
    }
    if (in.remaining() != 4 * n * d) {
      std::ostringstream msg;
      msg << "feature file payload has " << in.remaining() << " bytes, header (n=" << n
          << ", d=" << d << ") requires " << 4 * n * d;
      throw CorruptionError(msg.str());
    }
    FeatureMatrix m{modality, Matrix(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d))};
    for (std::uint64_t r = 0; r < n; ++r) {
      for (std::uint64_t c = 0; c < d; ++c) {
        const double v = in.get_f32();
        check_finite(v, r, c);
        m.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = v;
      }
    }
    return m;
  }

  if (kind == static_cast<std::uint8_t>(FeatureKind::kSequenceSet)) {
    SequenceSet s{modality, static_cast<std::size_t>(d), {}};
    if (n > in.remaining() / 4) throw CorruptionError("sequence count exceeds payload size");
    s.frames.reserve(n);
    for (std::uint64_t i = 0; i < n; ++i) {
      const auto t = in.get_le<std::uint32_t>("frame count");
      if (t == 0) throw ValidationError("sequence " + std::to_string(i) + " has zero frames");
      if (d != 0 && t > in.remaining() / 4 / d) {
        throw CorruptionError("sequence " + std::to_string(i) + " truncated");
      }
      Matrix frames(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(d));
      for (std::uint32_t r = 0; r < t; ++r) {
        for (std::uint64_t c = 0; c < d; ++c) {
          const double v = in.get_f32();
          check_finite(v, i, c);
          frames(r, static_cast<Eigen::Index>(c)) = v;
        }
      }
      s.frames.push_back(std::move(frames));
    }
    if (in.remaining() != 0) throw CorruptionError("trailing bytes after last sequence");
    return s;
  }

  throw FormatError("unknown feature file kind " + std::to_string(kind));
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::ostringstream buf;
  buf << in.rdbuf();
  if (in.bad()) throw IoError("error reading '" + path.string() + "'");
  return std::move(buf).str();
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw IoError("error writing '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
}

FeatureFile read_feature_file(const std::filesystem::path& path, const std::string& modality) {
  try {
    return decode_feature_file(read_file(path), modality);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  } catch (const CorruptionError& e) {
    throw CorruptionError(path.string() + ": " + e.what());
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

FeatureMatrix load_feature_matrix(const std::filesystem::path& path, const std::string& modality) {
  FeatureFile f = read_feature_file(path, modality);
  if (auto* m = std::get_if<FeatureMatrix>(&f)) return std::move(*m);
  throw FormatError(path.string() + ": expected a matrix feature file, found a sequence set");
}

void write_feature_matrix(const FeatureMatrix& m, const std::filesystem::path& path) {
  write_file_atomic(path, encode_feature_matrix(m));
}

void write_sequence_set(const SequenceSet& s, const std::filesystem::path& path) {
  write_file_atomic(path, encode_sequence_set(s));
}

}  // namespace mmstack
