#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmstack/feature_io.hpp"
#include "mmstack/text_features.hpp"
#include "mmstack/types.hpp"

namespace mmstack {

// Tag label space. Ids are the positions 0..T-1; categories are optional and
// only used by the per-category GAP mode.
struct TagVocabulary {
  std::vector<std::string> names;
  std::vector<int> category_of;  // empty, or one entry per tag

  std::size_t size() const { return names.size(); }
  bool has_categories() const { return !category_of.empty(); }
  int num_categories() const;

  void validate() const;
  nlohmann::json to_json() const;
  static TagVocabulary from_json(const nlohmann::json& j);
  static TagVocabulary numbered(std::size_t num_tags);
};

// Positive tag ids of one sample, sorted and unique. An empty set marks the
// sample as unlabeled: it is kept for prediction but excluded from training.
using MultiLabelTarget = std::vector<int>;

struct Dataset {
  std::vector<std::string> sample_ids;
  TagVocabulary vocabulary;
  std::vector<MultiLabelTarget> targets;
  std::vector<FeatureMatrix> modalities;  // declared order
  Matrix extra;                           // n x e, e may be 0
  std::map<std::string, NgramVocabulary> text_vocabularies;

  std::size_t size() const { return sample_ids.size(); }
  std::size_t num_tags() const { return vocabulary.size(); }
  std::size_t extra_dim() const { return static_cast<std::size_t>(extra.cols()); }

  bool has_modality(const std::string& name) const;
  const FeatureMatrix& modality(const std::string& name) const;
  FeatureMatrix& modality(const std::string& name);
  std::vector<std::string> modality_names() const;

  std::vector<std::size_t> labeled_indices() const;

  // Rows in the given order; every component is sliced consistently.
  Dataset subset(const std::vector<std::size_t>& rows) const;

  // Throws AlignmentError / ValidationError on any broken invariant.
  void validate() const;
};

// n x T multi-hot matrix for the given rows.
Matrix multi_hot(const std::vector<MultiLabelTarget>& targets, const std::vector<std::size_t>& rows,
                 std::size_t num_tags);

struct ModalityEntry {
  std::string name;
  std::filesystem::path path;
  std::optional<PoolMode> pooling;  // sequence files only
};

struct TextModalityEntry {
  std::string name;
  std::filesystem::path tokens;  // JSON array of token arrays
  std::size_t truncate = 0;      // 0 keeps whole streams
  std::size_t min_df = kDefaultMinDf;
};

struct HoldoutSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

// Seeded shuffle of all sample indices; the first round(n * test_fraction)
// go to test. Both parts are returned in ascending index order.
HoldoutSplit split_holdout(std::size_t n, double test_fraction, std::uint64_t seed);

struct DatasetManifest {
  std::filesystem::path base_dir;  // relative paths resolve against this
  std::vector<std::string> sample_ids;
  std::vector<ModalityEntry> modalities;
  std::vector<TextModalityEntry> text_modalities;
  std::filesystem::path labels;  // empty: every sample unlabeled (inference input)
  std::optional<std::filesystem::path> extra;
  std::filesystem::path vocabulary;
  PoolMode pooling = PoolMode::kMean;

  std::filesystem::path resolve(const std::filesystem::path& p) const;
  void validate() const;
  nlohmann::ordered_json to_json() const;
};

DatasetManifest parse_manifest(const std::string& text, const std::filesystem::path& base_dir);
DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

std::vector<MultiLabelTarget> load_labels(const std::filesystem::path& path, std::size_t num_tags);
void save_labels(const std::vector<MultiLabelTarget>& labels, const std::filesystem::path& path);
TagVocabulary load_vocabulary(const std::filesystem::path& path);
void save_vocabulary(const TagVocabulary& vocab, const std::filesystem::path& path);

struct AssembleOptions {
  // Fixed n-gram vocabularies per text modality (used at inference so columns
  // match training); text modalities without one build it from the corpus.
  std::map<std::string, NgramVocabulary> text_vocabularies;
};

Dataset assemble_dataset(const DatasetManifest& manifest, const AssembleOptions& options = {});

}  // namespace mmstack
