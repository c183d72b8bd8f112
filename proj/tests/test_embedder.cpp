#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "memoattn/corpus.hpp"
#include "memoattn/embedder.hpp"
#include "memoattn/model.hpp"
#include "memoattn/similarity.hpp"

using namespace memoattn;

namespace {

template <typename Real>
BasicEmbedder<Real> random_embedder(std::size_t in, std::size_t h0, std::size_t h1, std::size_t out,
                                    std::uint64_t seed, double out_scale = 1.0) {
  BasicEmbedder<Real> e(in, h0, h1, out);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.5, 2.0);
  auto fill = [&](std::vector<Real>& v, double s) {
    for (auto& x : v) x = static_cast<Real>(n(rng) * s);
  };
  fill(e.params.w1, 1.0 / std::sqrt(static_cast<double>(in)));
  fill(e.params.b1, 0.1);
  fill(e.params.w2, 1.0 / std::sqrt(static_cast<double>(h0)));
  fill(e.params.b2, 0.1);
  fill(e.params.w3, out_scale / std::sqrt(static_cast<double>(h1)));
  fill(e.params.b3, 0.1);
  fill(e.in_mean, 0.2);
  fill(e.norm_mean, 0.2);
  for (auto& s : e.in_std) s = static_cast<Real>(u(rng));
  for (auto& s : e.norm_var) s = static_cast<Real>(u(rng));
  return e;
}

HiddenState random_hidden(std::size_t l, std::size_t h, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return Matrix::random_normal(l, h, 1.0f, rng);
}

// Layer-by-layer double evaluation of the embedder definition.
std::vector<double> naive_embed(const Embedder& e, const HiddenState& hs) {
  std::vector<double> x(e.input_dim, 0.0);
  for (std::size_t r = 0; r < hs.rows(); ++r)
    for (std::size_t c = 0; c < hs.cols(); ++c) x[c] += hs(r, c) / static_cast<double>(hs.rows());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = (x[i] - e.in_mean[i]) / e.in_std[i];
  auto dense = [](const std::vector<float>& w, const std::vector<float>& b, const std::vector<double>& v) {
    std::vector<double> y(b.size());
    for (std::size_t o = 0; o < b.size(); ++o) {
      double s = b[o];
      for (std::size_t i = 0; i < v.size(); ++i) s += static_cast<double>(w[o * v.size() + i]) * v[i];
      y[o] = s;
    }
    return y;
  };
  auto a1 = dense(e.params.w1, e.params.b1, x);
  for (std::size_t i = 0; i < a1.size(); ++i)
    a1[i] = (a1[i] - e.norm_mean[i]) / std::sqrt(static_cast<double>(e.norm_var[i]) + 1e-5);
  return dense(e.params.w3, e.params.b3, dense(e.params.w2, e.params.b2, a1));
}

// Largest singular value of an out x in row-major matrix, by power iteration.
double spectral_norm(const std::vector<double>& w, std::size_t out, std::size_t in) {
  std::vector<double> v(in, 1.0), u(out);
  double sigma = 0.0;
  for (int it = 0; it < 500; ++it) {
    for (std::size_t o = 0; o < out; ++o) {
      u[o] = 0.0;
      for (std::size_t i = 0; i < in; ++i) u[o] += w[o * in + i] * v[i];
    }
    std::fill(v.begin(), v.end(), 0.0);
    for (std::size_t o = 0; o < out; ++o)
      for (std::size_t i = 0; i < in; ++i) v[i] += w[o * in + i] * u[o];
    double n = 0.0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    for (double& x : v) x /= n;
    sigma = std::sqrt(n);
  }
  return sigma;
}

}  // namespace

TEST(Embed, ZeroWeightsGiveZeroVector) {
  Embedder e(8, 4, 4, 3);
  const auto f = e.embed(random_hidden(5, 8, 1));
  EXPECT_EQ(f, FeatureVector(3, 0.0f));
}

TEST(Embed, DeterministicAndIndependentOfCallOrder) {
  const auto e = random_embedder<double>(16, 12, 10, 8, 3).cast<float>();
  const auto x = random_hidden(7, 16, 9);
  const auto first = e.embed(x);
  for (int i = 0; i < 5; ++i) e.embed(random_hidden(7, 16, 100 + i));
  EXPECT_EQ(first, e.embed(x));
}

TEST(Embed, MatchesNaiveOracle) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto e = random_embedder<double>(64, 128, 128, 128, seed).cast<float>();
    const auto x = random_hidden(32, 64, seed + 50);
    const auto got = e.embed(x);
    const auto want = naive_embed(e, x);
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-6 * std::max(1.0, std::abs(want[i])));
  }
}

TEST(Embed, UsesStoredStatistics) {
  auto e = random_embedder<double>(8, 6, 6, 4, 1).cast<float>();
  const auto x = random_hidden(3, 8, 2);
  const auto before = e.embed(x);
  e.norm_mean[0] += 1.0f;
  EXPECT_NE(before, e.embed(x));
}

TEST(Embed, RejectsShapeMismatch) {
  const Embedder e(8, 4, 4, 3);
  EXPECT_THROW(e.embed(random_hidden(3, 9, 0)), std::invalid_argument);
  EXPECT_THROW(e.embed(Matrix(0, 8)), std::invalid_argument);
}

TEST(Embed, LipschitzInPooledInput) {
  const auto e = random_embedder<double>(16, 12, 10, 8, 21);
  double bound = spectral_norm(e.params.w1, 12, 16) * spectral_norm(e.params.w2, 10, 12) *
                 spectral_norm(e.params.w3, 8, 10);
  double max_in = 0.0, max_norm = 0.0;
  for (auto s : e.in_std) max_in = std::max(max_in, 1.0 / s);
  for (auto v : e.norm_var) max_norm = std::max(max_norm, 1.0 / std::sqrt(v + 1e-5));
  bound *= max_in * max_norm;
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> x(16), y(16);
    double dx = 0.0;
    for (std::size_t i = 0; i < 16; ++i) {
      x[i] = n(rng);
      y[i] = x[i] + 0.1 * n(rng);
      dx += (x[i] - y[i]) * (x[i] - y[i]);
    }
    const auto fx = e.forward_pooled(x), fy = e.forward_pooled(y);
    double df = 0.0;
    for (std::size_t i = 0; i < fx.size(); ++i) df += (fx[i] - fy[i]) * (fx[i] - fy[i]);
    EXPECT_LE(std::sqrt(df), bound * std::sqrt(dx) * (1 + 1e-9));
  }
}

TEST(Similarity, PredictedFromDistance) {
  const FeatureVector a{0, 0}, b{0.6f, 0.8f}, c{3, 4};
  EXPECT_DOUBLE_EQ(predicted_similarity(a, a), 1.0);
  EXPECT_NEAR(predicted_similarity(a, b), 0.0, 1e-7);
  EXPECT_DOUBLE_EQ(predicted_similarity(a, c), 0.0);
  const FeatureVector d{0.3f, 0.4f};
  EXPECT_NEAR(predicted_similarity(a, d), 0.5, 1e-7);
  EXPECT_NEAR(siamese_loss(a, d, 0.25), 0.0625, 1e-7);
  EXPECT_NEAR(siamese_loss(a, a, 1.0), 0.0, 0.0);
  EXPECT_THROW(predicted_similarity(a, FeatureVector{1, 2, 3}), std::invalid_argument);
}

TEST(Gradient, MatchesFiniteDifferences) {
  int checked = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const std::size_t in = 6, h0 = 5, h1 = 4, out = 3;
    auto e = random_embedder<double>(in, h0, h1, out, seed, 0.15);
    std::mt19937_64 rng(seed + 1000);
    std::normal_distribution<double> n(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<std::vector<double>> inputs(4, std::vector<double>(in));
    for (auto& v : inputs)
      for (auto& x : v) x = n(rng);
    std::vector<TrainingPair> pairs{{0, 1, u(rng)}, {1, 2, u(rng)}, {2, 3, u(rng)}, {0, 3, u(rng)}};
    // Keep every pair strictly inside the unclamped region.
    auto fwd = [&](const std::vector<double>& z) {
      BasicEmbedder<double>::Trace t;
      e.forward_from_standardized(z, t);
      return t.out;
    };
    bool inside = true;
    for (const auto& p : pairs) {
      const auto fa = fwd(inputs[p.a]);
      const auto fb = fwd(inputs[p.b]);
      double d = 0.0;
      for (std::size_t i = 0; i < out; ++i) d += (fa[i] - fb[i]) * (fa[i] - fb[i]);
      d = std::sqrt(d);
      inside = inside && d > 0.05 && d < 0.95;
    }
    if (!inside) continue;
    ++checked;
    EmbedderParams<double> grad;
    siamese_batch_loss<double>(e, inputs, pairs, &grad);
    auto tensors = e.params.tensors();
    auto gtensors = grad.tensors();
    for (std::size_t t = 0; t < tensors.size(); ++t) {
      for (std::size_t i = 0; i < tensors[t]->size(); ++i) {
        const double h = 1e-6, orig = (*tensors[t])[i];
        (*tensors[t])[i] = orig + h;
        const double lp = siamese_batch_loss<double>(e, inputs, pairs, nullptr);
        (*tensors[t])[i] = orig - h;
        const double lm = siamese_batch_loss<double>(e, inputs, pairs, nullptr);
        (*tensors[t])[i] = orig;
        const double fd = (lp - lm) / (2 * h), an = (*gtensors[t])[i];
        const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6});
        EXPECT_LT(rel, 1e-4) << "seed " << seed << " tensor " << t << " index " << i << " fd " << fd << " an " << an;
      }
    }
  }
  EXPECT_GE(checked, 10);
}

TEST(PairSampler, SmallCasesAndDeterminism) {
  auto half = [](std::size_t, std::size_t) { return 0.5; };
  const auto two = pair_sampler(2, 1, 0, half);
  ASSERT_EQ(two.size(), 1u);
  EXPECT_EQ(std::min(two[0].a, two[0].b), 0u);
  EXPECT_EQ(std::max(two[0].a, two[0].b), 1u);
  EXPECT_THROW(pair_sampler(1, 1, 0, half), std::invalid_argument);
  EXPECT_THROW(pair_sampler(3, 1, 0, [](std::size_t, std::size_t) { return 1.5; }), std::runtime_error);
  const auto a = pair_sampler(50, 8, 7, half), b = pair_sampler(50, 8, 7, half);
  EXPECT_EQ(a, b);
  EXPECT_GE(a.size(), 50u * 8 / 2);
  for (const auto& p : a) {
    EXPECT_NE(p.a, p.b);
    EXPECT_LT(p.a, 50u);
    EXPECT_LT(p.b, 50u);
  }
}

TEST(Train, IdenticalPairsConverge) {
  EmbedderConfig cfg;
  cfg.input_dim = 8;
  cfg.hidden_dims = {16, 16};
  cfg.output_dim = 8;
  cfg.epochs = 50;
  PairDataset data;
  for (std::uint64_t s = 0; s < 20; ++s) data.hidden.push_back(random_hidden(4, 8, s));
  for (std::size_t i = 0; i + 1 < 20; i += 2) data.pairs.push_back({i, i + 1, 1.0});
  const auto r = train(cfg, data);
  EXPECT_LT(r.loss_curve.back(), 1e-3);
  EXPECT_EQ(r.loss_curve.size(), cfg.epochs + 1);
}

TEST(Train, DissimilarPairPushedApart) {
  EmbedderConfig cfg;
  cfg.input_dim = 8;
  cfg.hidden_dims = {16, 16};
  cfg.output_dim = 8;
  cfg.epochs = 100;
  PairDataset data;
  data.hidden = {random_hidden(4, 8, 1), random_hidden(4, 8, 2)};
  data.pairs = {{0, 1, 0.0}};
  const auto r = train(cfg, data);
  EXPECT_LT(predicted_similarity(r.embedder.embed(data.hidden[0]), r.embedder.embed(data.hidden[1])), 0.1);
}

TEST(Train, DeterministicForSeed) {
  EmbedderConfig cfg;
  cfg.input_dim = 8;
  cfg.hidden_dims = {8, 8};
  cfg.output_dim = 4;
  cfg.epochs = 3;
  PairDataset data;
  for (std::uint64_t s = 0; s < 10; ++s) data.hidden.push_back(random_hidden(4, 8, s));
  data.pairs = pair_sampler(10, 3, 1, [](std::size_t a, std::size_t b) { return (a % 2 == b % 2) ? 0.9 : 0.2; });
  EXPECT_EQ(train(cfg, data).embedder, train(cfg, data).embedder);
  auto other = cfg;
  other.seed += 1;
  EXPECT_NE(train(cfg, data).embedder, train(other, data).embedder);
  EXPECT_THROW(train(EmbedderConfig{.input_dim = 9}, data), std::invalid_argument);
}

TEST(Train, SaveLoadBitExact) {
  const auto e = random_embedder<double>(8, 6, 5, 4, 77).cast<float>();
  std::stringstream ss;
  save_embedder(ss, e);
  const auto back = load_embedder(ss);
  EXPECT_EQ(back, e);
  const auto x = random_hidden(3, 8, 5);
  EXPECT_EQ(back.embed(x), e.embed(x));
  std::stringstream bad("XXXX");
  EXPECT_THROW(load_embedder(bad), std::runtime_error);
}

// On a clustered corpus the trained embedder predicts held-out APM similarity.
TEST(Train, HeldOutErrorOnClusteredCorpus) {
  ModelConfig mc;
  mc.hidden_dim = 32;
  mc.num_heads = 2;
  mc.ffn_dim = 64;
  mc.num_layers = 1;
  const ToyTransformer model(mc);
  CorpusSpec spec;
  spec.seq_len = 16;
  spec.num_sequences = 400;
  spec.num_templates = 8;
  spec.mutation_rate = 0.2;
  std::vector<HiddenState> hidden;
  std::vector<std::vector<Apm>> apms;
  for (const auto& s : generate(spec)) {
    model.forward(s, [&](std::size_t, const HiddenState& h, const AttentionResult& a) {
      hidden.push_back(h);
      apms.push_back(a.apms);
    });
  }
  auto gt = [&](std::size_t a, std::size_t b) { return similarity_score_multihead(apms[a], apms[b]).value; };
  PairDataset data;
  data.hidden.assign(hidden.begin(), hidden.begin() + 300);
  data.pairs = pair_sampler(300, 8, 5, gt);
  EmbedderConfig cfg;
  cfg.input_dim = 32;
  cfg.epochs = 10;
  const auto r = train(cfg, data);
  EXPECT_LT(r.loss_curve.back(), r.loss_curve.front());
  double err = 0.0;
  std::size_t n = 0;
  for (std::size_t a = 300; a < 400; ++a) {
    for (std::size_t b = a + 1; b < 400; b += 9) {
      err += std::abs(predicted_similarity(r.embedder.embed(hidden[a]), r.embedder.embed(hidden[b])) - gt(a, b));
      ++n;
    }
  }
  EXPECT_LT(err / static_cast<double>(n), 0.15);
}
