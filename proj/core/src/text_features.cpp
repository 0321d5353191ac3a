#include "mmstack/text_features.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "mmstack/errors.hpp"

namespace mmstack {
namespace {

// Unigrams and adjacent bigrams of a stream, in occurrence order.
std::vector<Ngram> ngrams_of(const TokenStream& doc) {
  std::vector<Ngram> out;
  out.reserve(doc.size() * 2);
  for (std::size_t i = 0; i < doc.size(); ++i) {
    out.push_back({doc[i]});
    if (i + 1 < doc.size()) out.push_back({doc[i], doc[i + 1]});
  }
  return out;
}

}  // namespace

TokenStream truncate_first_last(const TokenStream& tokens, std::size_t m) {
  if (m == 0) throw ValidationError("truncate_first_last: m must be >= 1");
  if (tokens.size() <= 2 * m) return tokens;
  TokenStream out;
  out.reserve(2 * m);
  out.insert(out.end(), tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(m));
  out.insert(out.end(), tokens.end() - static_cast<std::ptrdiff_t>(m), tokens.end());
  return out;
}

NgramVocabulary::NgramVocabulary(std::vector<NgramEntry> entries, std::size_t num_documents,
                                 std::size_t min_df)
    : entries_(std::move(entries)), num_documents_(num_documents), min_df_(min_df) {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const NgramEntry& e = entries_[i];
    if (e.ngram.empty() || e.ngram.size() > 2) {
      throw ValidationError("n-gram vocabulary entries must have 1 or 2 tokens");
    }
    if (e.df < 1 || e.df > num_documents_) {
      throw ValidationError("n-gram document frequency outside [1, N]");
    }
    if (i > 0 && !(entries_[i - 1].ngram < e.ngram)) {
      throw ValidationError("n-gram vocabulary entries must be unique and sorted");
    }
    index_.emplace(e.ngram, i);
  }
}

std::size_t NgramVocabulary::index_of(const Ngram& ngram) const {
  auto it = index_.find(ngram);
  return it == index_.end() ? entries_.size() : it->second;
}

double NgramVocabulary::idf(std::size_t column) const {
  const double n = static_cast<double>(num_documents_);
  const double df = static_cast<double>(entries_.at(column).df);
  return std::log((1.0 + n) / (1.0 + df)) + 1.0;
}

nlohmann::json NgramVocabulary::to_json() const {
  nlohmann::json entries = nlohmann::json::array();
  for (const NgramEntry& e : entries_) {
    entries.push_back({{"ngram", e.ngram}, {"df", e.df}});
  }
  return {{"num_documents", num_documents_}, {"min_df", min_df_}, {"entries", std::move(entries)}};
}

NgramVocabulary NgramVocabulary::from_json(const nlohmann::json& j) {
  try {
    std::vector<NgramEntry> entries;
    for (const auto& e : j.at("entries")) {
      entries.push_back({e.at("ngram").get<Ngram>(), e.at("df").get<std::size_t>()});
    }
    return NgramVocabulary(std::move(entries), j.at("num_documents").get<std::size_t>(),
                           j.at("min_df").get<std::size_t>());
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed n-gram vocabulary: ") + e.what());
  }
}

NgramVocabulary build_ngram_vocab(const std::vector<TokenStream>& corpus, std::size_t min_df) {
  if (corpus.empty()) throw ValidationError("build_ngram_vocab: corpus is empty");
  if (min_df < 1) throw ValidationError("build_ngram_vocab: min_df must be >= 1");

  std::map<Ngram, std::size_t> df;
  for (const TokenStream& doc : corpus) {
    std::vector<Ngram> grams = ngrams_of(doc);
    std::sort(grams.begin(), grams.end());
    grams.erase(std::unique(grams.begin(), grams.end()), grams.end());
    for (Ngram& g : grams) ++df[std::move(g)];
  }

  std::vector<NgramEntry> entries;
  for (auto& [gram, count] : df) {
    if (count >= min_df) entries.push_back({gram, count});
  }
  return NgramVocabulary(std::move(entries), corpus.size(), min_df);
}

SparseVector tfidf_transform(const TokenStream& doc, const NgramVocabulary& vocab) {
  std::map<std::size_t, double> tf;
  for (const Ngram& g : ngrams_of(doc)) {
    const std::size_t col = vocab.index_of(g);
    if (col < vocab.size()) tf[col] += 1.0;
  }

  SparseVector out;
  out.dim = vocab.size();
  double norm2 = 0.0;
  for (const auto& [col, count] : tf) {
    const double w = count * vocab.idf(col);
    out.indices.push_back(col);
    out.weights.push_back(w);
    norm2 += w * w;
  }
  if (norm2 > 0.0) {
    const double inv = 1.0 / std::sqrt(norm2);
    for (double& w : out.weights) w *= inv;
  }
  return out;
}

FeatureMatrix tfidf_matrix(const std::vector<TokenStream>& docs, const NgramVocabulary& vocab,
                           const std::string& modality) {
  FeatureMatrix out{modality, Matrix::Zero(static_cast<Eigen::Index>(docs.size()),
                                           static_cast<Eigen::Index>(vocab.size()))};
  for (std::size_t i = 0; i < docs.size(); ++i) {
    const SparseVector v = tfidf_transform(docs[i], vocab);
    for (std::size_t k = 0; k < v.nnz(); ++k) {
      out.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(v.indices[k])) = v.weights[k];
    }
  }
  return out;
}

std::vector<TokenStream> load_token_corpus(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  if (!j.is_array()) throw ValidationError(path.string() + ": token corpus must be a JSON array");
  std::vector<TokenStream> corpus;
  corpus.reserve(j.size());
  for (const auto& doc : j) {
    if (!doc.is_array()) throw ValidationError(path.string() + ": each document must be an array");
    TokenStream tokens;
    for (const auto& t : doc) {
      if (!t.is_string() || t.get_ref<const std::string&>().empty()) {
        throw ValidationError(path.string() + ": tokens must be non-empty strings");
      }
      tokens.push_back(t.get<std::string>());
    }
    corpus.push_back(std::move(tokens));
  }
  return corpus;
}

void save_token_corpus(const std::vector<TokenStream>& corpus, const std::filesystem::path& path) {
  write_file_atomic(path, nlohmann::json(corpus).dump() + "\n");
}

}  // namespace mmstack
