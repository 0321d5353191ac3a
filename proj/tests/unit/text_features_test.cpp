#include <gtest/gtest.h>

#include <cmath>

#include "mmstack/errors.hpp"
#include "mmstack/random.hpp"
#include "mmstack/text_features.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace mmstack;

namespace {

TokenStream numbered(std::size_t n) {
  TokenStream ts;
  for (std::size_t i = 0; i < n; ++i) ts.push_back("w" + std::to_string(i));
  return ts;
}

double l2(const SparseVector& v) {
  double s = 0.0;
  for (double w : v.weights) s += w * w;
  return std::sqrt(s);
}

}  // namespace

TEST(Truncate, LongStreamKeepsHeadAndTail) {
  const TokenStream in = numbered(300);
  const TokenStream out = truncate_first_last(in, 128);
  ASSERT_EQ(out.size(), 256u);
  for (std::size_t i = 0; i < 128; ++i) EXPECT_EQ(out[i], in[i]);
  for (std::size_t i = 0; i < 128; ++i) EXPECT_EQ(out[128 + i], in[172 + i]);
}

TEST(Truncate, ShortAndBoundaryStreamsUnchanged) {
  EXPECT_EQ(truncate_first_last(numbered(100), 128), numbered(100));
  EXPECT_EQ(truncate_first_last(numbered(256), 128), numbered(256));
  EXPECT_TRUE(truncate_first_last({}, 128).empty());
  EXPECT_EQ(truncate_first_last(numbered(257), 128).size(), 256u);
}

TEST(Truncate, Idempotent) {
  for (std::size_t n : {0u, 5u, 9u, 10u, 11u, 40u}) {
    const TokenStream once = truncate_first_last(numbered(n), 5);
    EXPECT_EQ(truncate_first_last(once, 5), once) << n;
  }
}

TEST(NgramVocab, TwoDocumentExample) {
  const NgramVocabulary v = build_ngram_vocab({{"a", "b"}, {"a", "c"}}, 1);
  ASSERT_EQ(v.size(), 5u);
  EXPECT_EQ(v.num_documents(), 2u);
  std::map<Ngram, std::size_t> got;
  for (const NgramEntry& e : v.entries()) got[e.ngram] = e.df;
  const std::map<Ngram, std::size_t> want{{{"a"}, 2}, {{"b"}, 1}, {{"c"}, 1}, {{"a", "b"}, 1}, {{"a", "c"}, 1}};
  EXPECT_EQ(got, want);
}

TEST(NgramVocab, MinDfFilters) {
  const NgramVocabulary v = build_ngram_vocab({{"a", "b"}, {"a", "c"}}, 2);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v.entries()[0].ngram, Ngram{"a"});
  EXPECT_EQ(v.entries()[0].df, 2u);
}

TEST(NgramVocab, EmptyDocumentGivesEmptyVocabulary) {
  EXPECT_EQ(build_ngram_vocab({{}}, 1).size(), 0u);
}

TEST(NgramVocab, Errors) {
  EXPECT_THROW(build_ngram_vocab({{"a"}}, 0), ValidationError);
  EXPECT_THROW(build_ngram_vocab({}, 1), ValidationError);
}

TEST(NgramVocab, DfCountsDocumentsNotOccurrences) {
  const NgramVocabulary v = build_ngram_vocab({{"a", "a", "a"}, {"b"}}, 1);
  EXPECT_EQ(v.entries()[v.index_of({"a"})].df, 1u);
  EXPECT_EQ(v.entries()[v.index_of({"a", "a"})].df, 1u);
  EXPECT_EQ(v.index_of({"zzz"}), v.size());
}

TEST(NgramVocab, JsonRoundTrip) {
  const NgramVocabulary v = build_ngram_vocab({{"x", "y", "z"}, {"y", "z"}, {"q"}}, 1);
  const NgramVocabulary back = NgramVocabulary::from_json(v.to_json());
  EXPECT_EQ(back.to_json(), v.to_json());
  EXPECT_EQ(back.index_of({"y", "z"}), v.index_of({"y", "z"}));
}

TEST(Tfidf, WorkedExample) {
  const NgramVocabulary v = build_ngram_vocab({{"a", "b"}, {"a", "c"}}, 1);
  EXPECT_NEAR(v.idf(v.index_of({"a"})), 1.0, 1e-12);
  EXPECT_NEAR(v.idf(v.index_of({"b"})), 1.4055, 1e-4);
  const SparseVector s = tfidf_transform({"a", "b"}, v);
  EXPECT_EQ(s.nnz(), 3u);
  EXPECT_NEAR(fixtures::sparse_weight(s, v, {"a"}), 0.4494, 1e-3);
  EXPECT_NEAR(fixtures::sparse_weight(s, v, {"b"}), 0.6317, 1e-3);
  EXPECT_NEAR(fixtures::sparse_weight(s, v, {"a", "b"}), 0.6317, 1e-3);
  EXPECT_EQ(fixtures::sparse_weight(s, v, {"c"}), 0.0);
}

TEST(Tfidf, OutOfVocabularyDocumentIsZero) {
  const NgramVocabulary v = build_ngram_vocab({{"a", "b"}, {"a", "c"}}, 1);
  const SparseVector s = tfidf_transform({"q", "r"}, v);
  EXPECT_EQ(s.nnz(), 0u);
  EXPECT_EQ(s.dim, v.size());
}

TEST(Tfidf, RepeatedTokenNormalizesToSameVector) {
  const NgramVocabulary v = build_ngram_vocab({{"a"}, {"b"}}, 1);
  const SparseVector once = tfidf_transform({"a"}, v);
  const SparseVector twice = tfidf_transform({"a", "a"}, v);
  ASSERT_EQ(once.nnz(), 1u);
  EXPECT_EQ(once.indices, twice.indices);
  EXPECT_NEAR(twice.weights[0], 1.0, 1e-12);
  EXPECT_NEAR(once.weights[0], 1.0, 1e-12);
}

TEST(Tfidf, HigherDfNeverRaisesIdf) {
  const NgramVocabulary v = build_ngram_vocab({{"a", "b"}, {"a", "c"}, {"a", "b"}, {"d"}}, 1);
  for (const NgramEntry& x : v.entries()) {
    for (const NgramEntry& y : v.entries()) {
      if (x.df < y.df) EXPECT_GE(v.idf(v.index_of(x.ngram)), v.idf(v.index_of(y.ngram)));
    }
  }
}

TEST(Tfidf, MatchesIndependentOracleOnRandomCorpora) {
  Rng rng(2024);
  const std::vector<std::string> alphabet{"a", "b", "c", "d", "e", "f", "g"};
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<TokenStream> corpus(1 + rng.below(6));
    for (TokenStream& d : corpus) {
      d.resize(rng.below(9));
      for (std::string& t : d) t = alphabet[rng.below(alphabet.size())];
    }
    const std::size_t min_df = 1 + rng.below(2);
    const NgramVocabulary v = build_ngram_vocab(corpus, min_df);
    for (const TokenStream& doc : corpus) {
      const SparseVector s = tfidf_transform(doc, v);
      const auto want = fixtures::oracle_tfidf(corpus, doc, min_df);
      ASSERT_EQ(s.nnz(), want.size()) << "trial " << trial;
      for (const auto& [g, w] : want) EXPECT_NEAR(fixtures::sparse_weight(s, v, g), w, 1e-9) << "trial " << trial;
      for (std::size_t i = 1; i < s.nnz(); ++i) EXPECT_LT(s.indices[i - 1], s.indices[i]);
      if (s.nnz() > 0) EXPECT_NEAR(l2(s), 1.0, 1e-9);
    }
  }
}

TEST(Tfidf, TransformIsStableAcrossCalls) {
  const std::vector<TokenStream> corpus{{"x", "y", "x"}, {"y", "z"}};
  const NgramVocabulary v = build_ngram_vocab(corpus, 1);
  const SparseVector a = tfidf_transform(corpus[0], v);
  const SparseVector b = tfidf_transform(corpus[0], v);
  EXPECT_EQ(a.indices, b.indices);
  EXPECT_EQ(a.weights, b.weights);
}

TEST(Tfidf, DenseMatrixMatchesSparseRows) {
  const std::vector<TokenStream> corpus{{"x", "y", "x"}, {"y", "z"}, {}};
  const NgramVocabulary v = build_ngram_vocab(corpus, 1);
  const FeatureMatrix m = tfidf_matrix(corpus, v, "asr");
  EXPECT_EQ(m.modality, "asr");
  ASSERT_EQ(m.rows(), 3u);
  ASSERT_EQ(m.dim(), v.size());
  for (std::size_t r = 0; r < corpus.size(); ++r) {
    const SparseVector s = tfidf_transform(corpus[r], v);
    RowVector dense = RowVector::Zero(static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < s.nnz(); ++i) dense(static_cast<Eigen::Index>(s.indices[i])) = s.weights[i];
    EXPECT_EQ(m.values.row(static_cast<Eigen::Index>(r)), dense);
  }
  EXPECT_EQ(m.values.row(2).norm(), 0.0);
}

TEST(TokenCorpus, FileRoundTrip) {
  fixtures::TempDir dir("tok");
  const std::vector<TokenStream> corpus{{"hello", "world"}, {}, {"a,b", "\"q\""}};
  save_token_corpus(corpus, dir / "t.json");
  EXPECT_EQ(load_token_corpus(dir / "t.json"), corpus);
}
