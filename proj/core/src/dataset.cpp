#include "mmstack/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "mmstack/errors.hpp"
#include "mmstack/random.hpp"

namespace mmstack {
namespace {

using nlohmann::json;

json parse_json_file(const std::filesystem::path& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void check_rows(const std::string& what, std::size_t rows, std::size_t expected) {
  if (rows != expected) {
    throw AlignmentError(what + " has " + std::to_string(rows) + " rows, expected " +
                         std::to_string(expected));
  }
}

}  // namespace

int TagVocabulary::num_categories() const {
  if (category_of.empty()) return 0;
  return *std::max_element(category_of.begin(), category_of.end()) + 1;
}

void TagVocabulary::validate() const {
  std::set<std::string> seen;
  for (const std::string& name : names) {
    if (!seen.insert(name).second) throw ValidationError("duplicate tag name '" + name + "'");
  }
  if (!category_of.empty()) {
    if (category_of.size() != names.size()) {
      throw ValidationError("category map must cover every tag");
    }
    for (int c : category_of) {
      if (c < 0) throw ValidationError("negative tag category");
    }
  }
}

json TagVocabulary::to_json() const {
  json out = json::array();
  for (std::size_t i = 0; i < names.size(); ++i) {
    json tag = {{"id", i}, {"name", names[i]}};
    if (has_categories()) tag["category"] = category_of[i];
    out.push_back(std::move(tag));
  }
  return out;
}

TagVocabulary TagVocabulary::from_json(const json& j) {
  if (!j.is_array()) throw ValidationError("vocabulary must be a JSON array");
  TagVocabulary v;
  v.names.resize(j.size());
  std::vector<bool> filled(j.size(), false);
  std::size_t with_category = 0;
  std::vector<int> categories(j.size(), -1);
  try {
    for (const auto& tag : j) {
      const auto id = tag.at("id").get<std::int64_t>();
      if (id < 0 || static_cast<std::size_t>(id) >= j.size() || filled[static_cast<std::size_t>(id)]) {
        throw ValidationError("tag ids must be the contiguous range 0..T-1");
      }
      filled[static_cast<std::size_t>(id)] = true;
      v.names[static_cast<std::size_t>(id)] = tag.at("name").get<std::string>();
      if (tag.contains("category")) {
        categories[static_cast<std::size_t>(id)] = tag.at("category").get<int>();
        ++with_category;
      }
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed vocabulary: ") + e.what());
  }
  if (with_category != 0 && with_category != j.size()) {
    throw ValidationError("either every tag or no tag may declare a category");
  }
  if (with_category != 0) v.category_of = std::move(categories);
  v.validate();
  return v;
}

TagVocabulary TagVocabulary::numbered(std::size_t num_tags) {
  TagVocabulary v;
  for (std::size_t t = 0; t < num_tags; ++t) v.names.push_back("tag_" + std::to_string(t));
  return v;
}

bool Dataset::has_modality(const std::string& name) const {
  return std::any_of(modalities.begin(), modalities.end(),
                     [&](const FeatureMatrix& m) { return m.modality == name; });
}

const FeatureMatrix& Dataset::modality(const std::string& name) const {
  for (const FeatureMatrix& m : modalities) {
    if (m.modality == name) return m;
  }
  throw ValidationError("dataset has no modality '" + name + "'");
}

FeatureMatrix& Dataset::modality(const std::string& name) {
  return const_cast<FeatureMatrix&>(std::as_const(*this).modality(name));
}

std::vector<std::string> Dataset::modality_names() const {
  std::vector<std::string> out;
  for (const FeatureMatrix& m : modalities) out.push_back(m.modality);
  return out;
}

std::vector<std::size_t> Dataset::labeled_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (!targets[i].empty()) out.push_back(i);
  }
  return out;
}

Dataset Dataset::subset(const std::vector<std::size_t>& rows) const {
  Dataset out;
  out.vocabulary = vocabulary;
  out.text_vocabularies = text_vocabularies;
  for (std::size_t r : rows) {
    out.sample_ids.push_back(sample_ids.at(r));
    out.targets.push_back(targets.at(r));
  }
  for (const FeatureMatrix& m : modalities) {
    out.modalities.push_back({m.modality, gather_rows(m.values, rows)});
  }
  out.extra = gather_rows(extra, rows);
  return out;
}

void Dataset::validate() const {
  const std::size_t n = sample_ids.size();
  vocabulary.validate();
  check_rows("labels", targets.size(), n);
  check_rows("extra features", static_cast<std::size_t>(extra.rows()), n);
  std::set<std::string> names;
  for (const FeatureMatrix& m : modalities) {
    if (!names.insert(m.modality).second) {
      throw ValidationError("duplicate modality name '" + m.modality + "'");
    }
    check_rows("modality '" + m.modality + "'", m.rows(), n);
    if (!m.values.allFinite()) throw ValidationError("modality '" + m.modality + "' has non-finite values");
  }
  if (!extra.allFinite()) throw ValidationError("extra features contain non-finite values");
  for (const MultiLabelTarget& t : targets) {
    for (std::size_t k = 0; k < t.size(); ++k) {
      if (t[k] < 0 || static_cast<std::size_t>(t[k]) >= num_tags()) {
        throw ValidationError("tag id " + std::to_string(t[k]) + " outside vocabulary");
      }
      if (k > 0 && t[k - 1] >= t[k]) throw ValidationError("label sets must be sorted and unique");
    }
  }
}

Matrix multi_hot(const std::vector<MultiLabelTarget>& targets, const std::vector<std::size_t>& rows,
                 std::size_t num_tags) {
  Matrix y = Matrix::Zero(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(num_tags));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (int tag : targets.at(rows[r])) y(static_cast<Eigen::Index>(r), tag) = 1.0;
  }
  return y;
}

std::filesystem::path DatasetManifest::resolve(const std::filesystem::path& p) const {
  return p.is_absolute() ? p : base_dir / p;
}

void DatasetManifest::validate() const {
  std::set<std::string> ids;
  for (const std::string& id : sample_ids) {
    if (!ids.insert(id).second) throw ValidationError("duplicate sample id '" + id + "'");
  }
  std::set<std::string> names;
  for (const ModalityEntry& m : modalities) {
    if (!names.insert(m.name).second) throw ValidationError("duplicate modality name '" + m.name + "'");
  }
  for (const TextModalityEntry& t : text_modalities) {
    if (!names.insert(t.name).second) throw ValidationError("duplicate modality name '" + t.name + "'");
    if (t.min_df < 1) throw ValidationError("text modality '" + t.name + "': min_df must be >= 1");
  }
  if (names.empty()) throw ValidationError("manifest declares no modalities");
  auto must_exist = [&](const std::filesystem::path& p, const std::string& what) {
    if (!std::filesystem::exists(resolve(p))) {
      throw IoError(what + " file '" + resolve(p).string() + "' does not exist");
    }
  };
  for (const ModalityEntry& m : modalities) must_exist(m.path, "modality '" + m.name + "'");
  for (const TextModalityEntry& t : text_modalities) must_exist(t.tokens, "text modality '" + t.name + "'");
  if (!labels.empty()) must_exist(labels, "labels");
  must_exist(vocabulary, "vocabulary");
  if (extra) must_exist(*extra, "extra");
}

nlohmann::ordered_json DatasetManifest::to_json() const {
  using ojson = nlohmann::ordered_json;
  ojson mods = ojson::object();
  ojson pooling_overrides = ojson::object();
  for (const ModalityEntry& m : modalities) {
    mods[m.name] = m.path.generic_string();
    if (m.pooling) pooling_overrides[m.name] = to_string(*m.pooling);
  }
  ojson out;
  out["sample_ids"] = sample_ids;
  out["modalities"] = std::move(mods);
  if (!pooling_overrides.empty()) out["modality_pooling"] = std::move(pooling_overrides);
  out["pooling"] = to_string(pooling);
  if (!labels.empty()) out["labels"] = labels.generic_string();
  if (extra) out["extra"] = extra->generic_string();
  out["vocabulary"] = vocabulary.generic_string();
  if (!text_modalities.empty()) {
    ojson text = ojson::array();
    for (const TextModalityEntry& t : text_modalities) {
      ojson entry;
      entry["name"] = t.name;
      entry["tokens"] = t.tokens.generic_string();
      entry["truncate"] = t.truncate;
      entry["min_df"] = t.min_df;
      text.push_back(std::move(entry));
    }
    out["text"] = std::move(text);
  }
  return out;
}

DatasetManifest parse_manifest(const std::string& text, const std::filesystem::path& base_dir) {
  // A JSON object silently keeps the last of two equal keys, so duplicate
  // modality names are caught while parsing.
  std::string top_key;
  std::vector<std::string> modality_order;
  std::set<std::string> modality_keys;
  std::string duplicate;
  json::parser_callback_t watch = [&](int depth, json::parse_event_t event, json& parsed) {
    if (event == json::parse_event_t::key) {
      if (depth == 1) {
        top_key = parsed.get<std::string>();
      } else if (depth == 2 && top_key == "modalities") {
        const auto name = parsed.get<std::string>();
        if (!modality_keys.insert(name).second) duplicate = name;
        modality_order.push_back(name);
      }
    }
    return true;
  };

  json j;
  try {
    j = json::parse(text, watch);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("manifest: ") + e.what());
  }
  if (!duplicate.empty()) throw ValidationError("duplicate modality name '" + duplicate + "'");

  DatasetManifest m;
  m.base_dir = base_dir;
  try {
    m.sample_ids = j.at("sample_ids").get<std::vector<std::string>>();
    if (j.contains("labels") && !j.at("labels").is_null()) m.labels = j.at("labels").get<std::string>();
    m.vocabulary = j.at("vocabulary").get<std::string>();
    if (j.contains("extra") && !j.at("extra").is_null()) m.extra = j.at("extra").get<std::string>();
    if (j.contains("pooling")) m.pooling = parse_pool_mode(j.at("pooling").get<std::string>());

    const json& mods = j.at("modalities");
    if (mods.is_object()) {
      // json objects iterate in key order; declared order comes from the text.
      for (const std::string& name : modality_order) {
        m.modalities.push_back({name, mods.at(name).get<std::string>(), std::nullopt});
      }
    } else if (mods.is_array()) {
      for (const json& e : mods) {
        ModalityEntry entry{e.at("name").get<std::string>(), e.at("path").get<std::string>(), std::nullopt};
        if (e.contains("pooling")) entry.pooling = parse_pool_mode(e.at("pooling").get<std::string>());
        m.modalities.push_back(std::move(entry));
      }
    } else {
      throw ValidationError("manifest 'modalities' must be an object or an array");
    }
    if (j.contains("modality_pooling")) {
      for (auto& [name, mode] : j.at("modality_pooling").items()) {
        auto it = std::find_if(m.modalities.begin(), m.modalities.end(),
                               [&](const ModalityEntry& e) { return e.name == name; });
        if (it == m.modalities.end()) throw ValidationError("pooling override for unknown modality '" + name + "'");
        it->pooling = parse_pool_mode(mode.get<std::string>());
      }
    }
    if (j.contains("text")) {
      for (const json& t : j.at("text")) {
        TextModalityEntry entry;
        entry.name = t.at("name").get<std::string>();
        entry.tokens = t.at("tokens").get<std::string>();
        entry.truncate = t.value("truncate", std::size_t{0});
        entry.min_df = t.value("min_df", kDefaultMinDf);
        m.text_modalities.push_back(std::move(entry));
      }
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed manifest: ") + e.what());
  }
  return m;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  return parse_manifest(read_file(path), path.parent_path());
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  write_file_atomic(path, manifest.to_json().dump(2) + "\n");
}

std::vector<MultiLabelTarget> load_labels(const std::filesystem::path& path, std::size_t num_tags) {
  const json j = parse_json_file(path);
  if (!j.is_array()) throw ValidationError(path.string() + ": labels must be a JSON array");
  std::vector<MultiLabelTarget> out;
  out.reserve(j.size());
  for (const json& row : j) {
    if (!row.is_array()) throw ValidationError(path.string() + ": each label entry must be an array");
    MultiLabelTarget tags;
    for (const json& t : row) {
      if (!t.is_number_integer()) throw ValidationError(path.string() + ": tag ids must be integers");
      const auto id = t.get<std::int64_t>();
      if (id < 0 || static_cast<std::size_t>(id) >= num_tags) {
        throw ValidationError(path.string() + ": tag id " + std::to_string(id) + " outside vocabulary");
      }
      tags.push_back(static_cast<int>(id));
    }
    std::sort(tags.begin(), tags.end());
    if (std::adjacent_find(tags.begin(), tags.end()) != tags.end()) {
      throw ValidationError(path.string() + ": duplicate tag id within one sample");
    }
    out.push_back(std::move(tags));
  }
  return out;
}

void save_labels(const std::vector<MultiLabelTarget>& labels, const std::filesystem::path& path) {
  write_file_atomic(path, json(labels).dump() + "\n");
}

TagVocabulary load_vocabulary(const std::filesystem::path& path) {
  try {
    return TagVocabulary::from_json(parse_json_file(path));
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void save_vocabulary(const TagVocabulary& vocab, const std::filesystem::path& path) {
  write_file_atomic(path, vocab.to_json().dump(2) + "\n");
}

Dataset assemble_dataset(const DatasetManifest& manifest, const AssembleOptions& options) {
  manifest.validate();
  const std::size_t n = manifest.sample_ids.size();

  Dataset ds;
  ds.sample_ids = manifest.sample_ids;
  ds.vocabulary = load_vocabulary(manifest.resolve(manifest.vocabulary));
  if (manifest.labels.empty()) {
    ds.targets.assign(n, {});
  } else {
    ds.targets = load_labels(manifest.resolve(manifest.labels), ds.vocabulary.size());
    check_rows("labels", ds.targets.size(), n);
  }

  for (const ModalityEntry& entry : manifest.modalities) {
    FeatureFile file = read_feature_file(manifest.resolve(entry.path), entry.name);
    FeatureMatrix m = std::holds_alternative<FeatureMatrix>(file)
                          ? std::get<FeatureMatrix>(std::move(file))
                          : pool_sequences(std::get<SequenceSet>(file), entry.pooling.value_or(manifest.pooling));
    check_rows("modality '" + entry.name + "'", m.rows(), n);
    ds.modalities.push_back(std::move(m));
  }

  for (const TextModalityEntry& entry : manifest.text_modalities) {
    std::vector<TokenStream> corpus = load_token_corpus(manifest.resolve(entry.tokens));
    check_rows("text modality '" + entry.name + "'", corpus.size(), n);
    if (entry.truncate > 0) {
      for (TokenStream& doc : corpus) doc = truncate_first_last(doc, entry.truncate);
    }
    auto fixed = options.text_vocabularies.find(entry.name);
    NgramVocabulary vocab =
        fixed != options.text_vocabularies.end() ? fixed->second : build_ngram_vocab(corpus, entry.min_df);
    ds.modalities.push_back(tfidf_matrix(corpus, vocab, entry.name));
    ds.text_vocabularies.emplace(entry.name, std::move(vocab));
  }

  if (manifest.extra) {
    FeatureMatrix extra = load_feature_matrix(manifest.resolve(*manifest.extra), "extra");
    check_rows("extra features", extra.rows(), n);
    ds.extra = std::move(extra.values);
  } else {
    ds.extra = Matrix(static_cast<Eigen::Index>(n), 0);
  }

  ds.validate();
  return ds;
}

HoldoutSplit split_holdout(std::size_t n, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ValidationError("holdout fraction must lie in (0, 1)");
  const auto n_test = static_cast<std::size_t>(std::llround(static_cast<double>(n) * test_fraction));
  if (n_test == 0 || n_test == n) {
    throw ValidationError("holdout split of " + std::to_string(n) + " samples leaves an empty side");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(order);
  HoldoutSplit split;
  split.test.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
  split.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
  std::sort(split.test.begin(), split.test.end());
  std::sort(split.train.begin(), split.train.end());
  return split;
}

}  // namespace mmstack
