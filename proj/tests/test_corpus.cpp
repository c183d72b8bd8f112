#include <gtest/gtest.h>

#include <sstream>

#include "memoattn/corpus.hpp"
#include "memoattn/model.hpp"
#include "memoattn/similarity.hpp"

using namespace memoattn;

namespace {

double hamming_similarity(const TokenSequence& a, const TokenSequence& b) {
  std::size_t same = 0;
  for (std::size_t i = 0; i < a.tokens.size(); ++i) same += a.tokens[i] == b.tokens[i];
  return static_cast<double>(same) / static_cast<double>(a.tokens.size());
}

}  // namespace

TEST(Generate, ZeroMutationCopiesTemplates) {
  CorpusSpec spec;
  spec.mutation_rate = 0.0;
  spec.num_sequences = 200;
  const auto c = generate(spec);
  ASSERT_EQ(c.size(), 200u);
  std::vector<const TokenSequence*> first(spec.num_templates, nullptr);
  for (const auto& s : c) {
    auto& f = first[s.label];
    if (!f) f = &s;
    EXPECT_EQ(s.tokens, f->tokens);
  }
}

TEST(Generate, FullMutationIsUniform) {
  CorpusSpec spec;
  spec.mutation_rate = 1.0;
  spec.vocab_size = 16;
  spec.num_sequences = 400;
  spec.seq_len = 32;
  const auto c = generate(spec);
  double overlap = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    for (std::size_t j = i + 1; j < c.size(); j += 7) overlap += hamming_similarity(c[i], c[j]), ++pairs;
  }
  // Tokens are uniform over the 15 non-pad ids.
  EXPECT_NEAR(overlap / static_cast<double>(pairs), 1.0 / 15.0, 0.01);
}

TEST(Generate, WithinTemplateMoreSimilarThanAcross) {
  CorpusSpec spec;
  spec.mutation_rate = 0.2;
  spec.num_templates = 2;
  spec.num_sequences = 100;
  const auto c = generate(spec);
  double within = 0, across = 0;
  std::size_t nw = 0, na = 0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    for (std::size_t j = i + 1; j < c.size(); ++j) {
      const double h = hamming_similarity(c[i], c[j]);
      if (c[i].label == c[j].label) within += h, ++nw;
      else across += h, ++na;
    }
  }
  ASSERT_GT(nw, 0u);
  ASSERT_GT(na, 0u);
  EXPECT_GE(within / nw, across / na);
  EXPECT_GT(within / nw, 0.5);
}

TEST(Generate, DeterministicAndPrefixStable) {
  CorpusSpec spec;
  spec.num_sequences = 50;
  const auto a = generate(spec);
  EXPECT_EQ(a, generate(spec));
  spec.num_sequences = 120;
  const auto b = generate(spec);
  EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin()));
  spec.seed = 2;
  EXPECT_NE(generate(spec)[0].tokens, b[0].tokens);
}

TEST(Generate, TokensInRangeAndLabels) {
  CorpusSpec spec;
  spec.vocab_size = 10;
  spec.label_rule = LabelRule::parity;
  for (const auto& s : generate(spec)) {
    ASSERT_EQ(s.tokens.size(), spec.seq_len);
    std::uint64_t sum = 0;
    for (auto t : s.tokens) {
      EXPECT_GE(t, 1u);
      EXPECT_LT(t, spec.vocab_size);
      sum += t;
    }
    EXPECT_EQ(s.label, sum % 2);
  }
  EXPECT_EQ(spec.num_classes(), 2u);
}

TEST(Generate, RejectsBadSpecs) {
  CorpusSpec spec;
  spec.mutation_rate = 1.5;
  EXPECT_THROW(generate(spec), std::invalid_argument);
  spec.mutation_rate = 0.2;
  spec.num_templates = 0;
  EXPECT_THROW(generate(spec), std::invalid_argument);
  spec.num_templates = 1;
  spec.vocab_size = 1;
  EXPECT_THROW(generate(spec), std::invalid_argument);
}

TEST(Tokenize, RepeatedWordsAndPadding) {
  const auto s = tokenize("a a a", 256, 8);
  ASSERT_EQ(s.tokens.size(), 8u);
  EXPECT_EQ(s.tokens[0], s.tokens[1]);
  EXPECT_EQ(s.tokens[1], s.tokens[2]);
  EXPECT_NE(s.tokens[0], kPadToken);
  for (std::size_t i = 3; i < 8; ++i) EXPECT_EQ(s.tokens[i], kPadToken);
}

TEST(Tokenize, StableHashAndTruncation) {
  EXPECT_EQ(tokenize("I like apple", 1000, 4), tokenize("I  like\tapple\n", 1000, 4));
  // FNV-1a 64 of "a" is 0xaf63dc4c8601ec8c.
  EXPECT_EQ(detail::fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(tokenize("a", 1000, 1).tokens[0], 1 + 0xaf63dc4c8601ec8cULL % 999);
  const auto t = tokenize("w1 w2 w3 w4 w5", 64, 3);
  EXPECT_EQ(t.tokens.size(), 3u);
  EXPECT_EQ(t.tokens, tokenize("w1 w2 w3", 64, 3).tokens);
}

TEST(CorpusFile, RoundTrip) {
  CorpusSpec spec;
  spec.num_sequences = 30;
  const auto c = generate(spec);
  std::stringstream ss;
  write_corpus(ss, c);
  EXPECT_EQ(ss.str().substr(0, kCorpusHeader.size()), kCorpusHeader);
  EXPECT_EQ(read_corpus(ss), c);
}

TEST(CorpusFile, IngestText) {
  std::istringstream in("3\tI like apple\n\n   \nI like banana\n");
  const auto c = ingest_text(in, 128, 6);
  ASSERT_EQ(c.size(), 2u);
  EXPECT_EQ(c[0].label, 3u);
  EXPECT_EQ(c[1].label, 0u);
  EXPECT_EQ(c[0].tokens[0], c[1].tokens[0]);
  EXPECT_EQ(c[0].tokens[1], c[1].tokens[1]);
  EXPECT_NE(c[0].tokens[2], c[1].tokens[2]);
  EXPECT_EQ(c[0].tokens[5], kPadToken);
}

// Lower mutation rate gives higher best-match APM similarity.
TEST(Generate, MutationRateControlsApmSimilarity) {
  ModelConfig mc;
  mc.hidden_dim = 32;
  mc.num_heads = 2;
  mc.ffn_dim = 64;
  const ToyTransformer model(mc);
  std::vector<double> mean_best;
  for (double rate : {0.0, 0.2, 0.5, 1.0}) {
    CorpusSpec spec;
    spec.seq_len = 16;
    spec.num_sequences = 60;
    spec.mutation_rate = rate;
    spec.num_templates = 4;
    std::vector<std::vector<Apm>> apms;
    for (const auto& s : generate(spec)) {
      model.forward(s, [&](std::size_t l, const HiddenState&, const AttentionResult& a) {
        if (l == 0) apms.push_back(a.apms);
      });
    }
    double acc = 0.0;
    for (std::size_t q = 0; q < 20; ++q) {
      double best = 0.0;
      for (std::size_t i = 20; i < apms.size(); ++i) best = std::max(best, similarity_score_multihead(apms[q], apms[i]).value);
      acc += best;
    }
    mean_best.push_back(acc / 20.0);
  }
  for (std::size_t i = 1; i < mean_best.size(); ++i) EXPECT_LE(mean_best[i], mean_best[i - 1]) << i;
  EXPECT_NEAR(mean_best[0], 1.0, 1e-9);
}
