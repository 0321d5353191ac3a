#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmstack/fusion.hpp"
#include "mmstack/metrics.hpp"
#include "mmstack/stacking.hpp"
#include "mmstack/synth.hpp"

namespace mmstack {

inline constexpr int kRunConfigVersion = 1;

// Ladder entries name modalities; this token switches the extra features on.
inline constexpr const char* kExtraToken = "extra";

// Logistic and squared-hinge one-vs-rest models.
std::vector<LearnerSpec> default_text_learner_specs();

struct RunConfig {
  // Exactly one of manifest / synth is set.
  std::optional<std::filesystem::path> manifest;
  std::optional<SynthConfig> synth;

  std::uint64_t seed = 0;
  std::size_t k_folds = 5;
  double holdout_fraction = 0.2;
  std::vector<std::string> modalities;  // empty: every dataset modality, in order
  LearnerSpec default_learner;                   // dense modalities
  std::vector<LearnerSpec> default_text_learners = default_text_learner_specs();  // tf-idf modalities
  std::map<std::string, std::vector<LearnerSpec>> learners;  // per-modality overrides
  std::vector<std::size_t> meta_hidden{512, 256};
  std::vector<double> meta_dropout{0.3, 0.3};
  TrainConfig meta_train;
  bool use_extra = true;
  bool stratified = false;
  std::vector<std::vector<std::string>> ladder;  // empty: prefixes of modalities, then + extra
  std::vector<FusionKind> fusion_strategies{FusionKind::kConcat, FusionKind::kSumPool, FusionKind::kMaxPool,
                                            FusionKind::kAttention};
  FusionConfig fusion;
  MetricConfig metrics;
  std::filesystem::path output_dir = "mmstack_out";
  std::size_t threads = 1;

  void validate() const;

  // Canonical form: every field spelled out, fixed key order.
  nlohmann::ordered_json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);

  // Learners stacked for one modality: the override if configured, else the
  // text or dense default.
  std::vector<LearnerSpec> learners_for(const std::string& modality, bool is_text) const;
  StackingConfig stacking(bool with_extra) const;
};

// Reads a config file; a relative manifest path resolves against the file's
// directory.
RunConfig load_run_config(const std::filesystem::path& path);

// 16 hex digits of FNV-1a over the canonical config dump, leaving out
// output_dir and threads.
std::string config_hash(const RunConfig& cfg);

}  // namespace mmstack
