#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmstack/feature_io.hpp"

namespace mmstack {

// Pre-segmented tokens of one document (OCR or ASR output).
using TokenStream = std::vector<std::string>;

// A unigram or an adjacent bigram.
using Ngram = std::vector<std::string>;

inline constexpr std::size_t kDefaultTruncateWords = 128;
inline constexpr std::size_t kDefaultMinDf = 2;

// Keeps the first m and last m tokens of streams longer than 2m; shorter
// streams are returned unchanged so no token is counted twice.
TokenStream truncate_first_last(const TokenStream& tokens, std::size_t m = kDefaultTruncateWords);

struct NgramEntry {
  Ngram ngram;
  std::size_t df = 0;
};

// Column index of an n-gram is its position in `entries`, which is sorted
// lexicographically at build time.
class NgramVocabulary {
 public:
  NgramVocabulary() = default;
  NgramVocabulary(std::vector<NgramEntry> entries, std::size_t num_documents, std::size_t min_df);

  const std::vector<NgramEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t num_documents() const { return num_documents_; }
  std::size_t min_df() const { return min_df_; }

  // Returns size() when the n-gram is not in the vocabulary.
  std::size_t index_of(const Ngram& ngram) const;

  // ln((1 + N) / (1 + df)) + 1
  double idf(std::size_t column) const;

  nlohmann::json to_json() const;
  static NgramVocabulary from_json(const nlohmann::json& j);

 private:
  std::vector<NgramEntry> entries_;
  std::map<Ngram, std::size_t> index_;
  std::size_t num_documents_ = 0;
  std::size_t min_df_ = 1;
};

// Document frequency counts documents, not occurrences.
NgramVocabulary build_ngram_vocab(const std::vector<TokenStream>& corpus,
                                  std::size_t min_df = kDefaultMinDf);

struct SparseVector {
  std::size_t dim = 0;
  std::vector<std::size_t> indices;  // strictly increasing
  std::vector<double> weights;

  std::size_t nnz() const { return indices.size(); }
};

// Raw-count tf times smoothed idf, L2-normalized. Out-of-vocabulary n-grams
// are ignored; a document with none in vocabulary maps to the zero vector.
SparseVector tfidf_transform(const TokenStream& doc, const NgramVocabulary& vocab);

// Densified tf-idf block so text can be ingested like any other modality.
FeatureMatrix tfidf_matrix(const std::vector<TokenStream>& docs, const NgramVocabulary& vocab,
                           const std::string& modality = "tfidf");

std::vector<TokenStream> load_token_corpus(const std::filesystem::path& path);
void save_token_corpus(const std::vector<TokenStream>& corpus, const std::filesystem::path& path);

}  // namespace mmstack
