#pragma once

#include <atomic>
#include <filesystem>
#include <string>

#include <unistd.h>

#include "mmstack/learners.hpp"
#include "mmstack/synth.hpp"

namespace mmstack::fixtures {

// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("mmstack_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline SynthModality dense_modality(const std::string& name, std::size_t dim, double sigma) {
  SynthModality m;
  m.name = name;
  m.dim = dim;
  m.noise_sigma = sigma;
  return m;
}

inline SynthModality text_modality(const std::string& name, double signal_rate) {
  SynthModality m;
  m.name = name;
  m.kind = SynthKind::kText;
  m.signal_rate = signal_rate;
  m.doc_length = 30;
  m.filler_vocab = 60;
  return m;
}

// Small three-modality config (two dense, one text) for fast tests.
inline SynthConfig small_config(std::size_t n = 120, std::size_t tags = 6) {
  SynthConfig c;
  c.num_samples = n;
  c.num_tags = tags;
  c.min_tags = 1;
  c.max_tags = 2;
  c.extra_dim = 2;
  c.k_folds = 2;
  c.modalities = {dense_modality("visual", 8, 0.8), dense_modality("sound", 6, 1.5), text_modality("asr", 0.3)};
  c.modalities[1].frames = 4;
  return c;
}

// Fast training settings for unit tests.
inline TrainConfig quick_train(int epochs = 5) {
  TrainConfig t;
  t.epochs = epochs;
  t.batch_size = 32;
  t.learning_rate = 1e-2;
  return t;
}

}  // namespace mmstack::fixtures
