#pragma once

// Seeded toy transformer encoder: token + position embeddings, E post-norm
// blocks of (self-attention, feed-forward), and a mean-pool linear classifier.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "memoattn/binary_io.hpp"
#include "memoattn/corpus.hpp"
#include "memoattn/tensor.hpp"

namespace memoattn {

struct ModelConfig {
  std::uint32_t vocab_size = 256;
  std::size_t max_seq_len = 64;
  std::size_t hidden_dim = 64;
  std::size_t num_heads = 4;
  std::size_t num_layers = 2;
  std::size_t ffn_dim = 128;
  std::size_t num_classes = 8;
  std::uint64_t seed = 7;
  // Gain on the Q/K projection init. Values above 1 sharpen the attention
  // distributions of the randomly initialized model.
  float qk_gain = 1.0f;

  void validate() const {
    if (num_heads == 0 || hidden_dim % num_heads != 0) {
      throw std::invalid_argument("ModelConfig: hidden_dim must be divisible by num_heads");
    }
    if (num_layers == 0 || vocab_size < 2 || max_seq_len == 0 || ffn_dim == 0 || num_classes == 0) {
      throw std::invalid_argument("ModelConfig: all dimensions must be positive");
    }
  }
  bool operator==(const ModelConfig&) const = default;
};

struct Classifier {
  Matrix weight;              // H x C
  std::vector<float> bias;    // C
};

class ToyTransformer {
 public:
  ToyTransformer() = default;

  explicit ToyTransformer(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    std::mt19937_64 rng(cfg.seed);
    const std::size_t h = cfg.hidden_dim;
    const float proj = 1.0f / std::sqrt(static_cast<float>(h));
    token_embedding_ = Matrix::random_normal(cfg.vocab_size, h, 1.0f, rng);
    position_embedding_ = Matrix::random_normal(cfg.max_seq_len, h, 0.5f, rng);
    layers_.resize(cfg.num_layers);
    for (auto& l : layers_) {
      l.num_heads = cfg.num_heads;
      l.w_q = Matrix::random_normal(h, h, cfg.qk_gain * proj, rng);
      l.w_k = Matrix::random_normal(h, h, cfg.qk_gain * proj, rng);
      l.w_v = Matrix::random_normal(h, h, proj, rng);
      l.w_out = Matrix::random_normal(h, h, proj, rng);
      l.ffn_w1 = Matrix::random_normal(h, cfg.ffn_dim, proj, rng);
      l.ffn_b1.assign(cfg.ffn_dim, 0.0f);
      l.ffn_w2 = Matrix::random_normal(cfg.ffn_dim, h, 1.0f / std::sqrt(static_cast<float>(cfg.ffn_dim)), rng);
      l.ffn_b2.assign(h, 0.0f);
    }
    classifier_.weight = Matrix(h, cfg.num_classes);
    classifier_.bias.assign(cfg.num_classes, 0.0f);
  }

  const ModelConfig& config() const noexcept { return cfg_; }
  std::size_t num_layers() const noexcept { return layers_.size(); }
  const LayerWeights& layer(std::size_t i) const { return layers_.at(i); }
  const Classifier& classifier() const noexcept { return classifier_; }

  /// Input hidden state of layer 0.
  HiddenState embed_tokens(const TokenSequence& seq) const {
    if (seq.tokens.size() > cfg_.max_seq_len) {
      throw std::invalid_argument("embed_tokens: sequence length " + std::to_string(seq.tokens.size()) +
                                  " exceeds max_seq_len " + std::to_string(cfg_.max_seq_len));
    }
    HiddenState x(seq.tokens.size(), cfg_.hidden_dim);
    for (std::size_t i = 0; i < seq.tokens.size(); ++i) {
      const auto t = seq.tokens[i];
      if (t >= cfg_.vocab_size) throw std::invalid_argument("embed_tokens: token id out of range");
      auto row = x.row(i);
      auto te = token_embedding_.row(t);
      auto pe = position_embedding_.row(i);
      for (std::size_t c = 0; c < row.size(); ++c) row[c] = te[c] + pe[c];
    }
    layer_norm_inplace(x);
    return x;
  }

  /// Everything in a block after self-attention: LN(FFN(LN(x + attn))).
  HiddenState post_attention(std::size_t layer_index, const HiddenState& x, const Matrix& attn_out) const {
    Matrix h = add(x, attn_out);
    layer_norm_inplace(h);
    Matrix y = feed_forward(h, layers_.at(layer_index));
    layer_norm_inplace(y);
    return y;
  }

  using LayerHook = std::function<void(std::size_t layer, const HiddenState& input, const AttentionResult& attn)>;

  /// Computation-only forward pass; `hook` sees each layer's input and APMs.
  HiddenState forward(const TokenSequence& seq, const LayerHook& hook = {}) const {
    HiddenState x = embed_tokens(seq);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      AttentionResult attn = attention_full(x, layers_[l]);
      if (hook) hook(l, x, attn);
      x = post_attention(l, x, attn.output);
    }
    return x;
  }

  static std::vector<float> mean_pool(const Matrix& hidden) {
    std::vector<float> out(hidden.cols(), 0.0f);
    for (std::size_t r = 0; r < hidden.rows(); ++r) {
      auto row = hidden.row(r);
      for (std::size_t c = 0; c < out.size(); ++c) out[c] += row[c];
    }
    const float inv = hidden.rows() ? 1.0f / static_cast<float>(hidden.rows()) : 0.0f;
    for (float& v : out) v *= inv;
    return out;
  }

  std::vector<float> logits_from_pooled(std::span<const float> pooled) const {
    std::vector<float> z(classifier_.bias);
    for (std::size_t c = 0; c < cfg_.hidden_dim; ++c) {
      const float p = pooled[c];
      auto wrow = classifier_.weight.row(c);
      for (std::size_t k = 0; k < z.size(); ++k) z[k] += p * wrow[k];
    }
    return z;
  }

  std::vector<float> logits(const HiddenState& final_hidden) const { return logits_from_pooled(mean_pool(final_hidden)); }

  static std::uint32_t argmax(std::span<const float> z) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < z.size(); ++k) {
      if (z[k] > z[best]) best = k;
    }
    return static_cast<std::uint32_t>(best);
  }

  /// Multinomial logistic regression on pooled final hidden states, full-batch
  /// gradient descent with L2 regularization. Deterministic.
  void fit_classifier(const std::vector<std::vector<float>>& pooled, const std::vector<std::uint32_t>& labels,
                      std::size_t iterations = 300, double learning_rate = 0.5, double l2 = 1e-3) {
    if (pooled.empty() || pooled.size() != labels.size()) throw std::invalid_argument("fit_classifier: bad dataset");
    const std::size_t h = cfg_.hidden_dim, k = cfg_.num_classes, n = pooled.size();
    std::vector<double> w(h * k, 0.0), b(k, 0.0), gw(h * k), gb(k), z(k);
    for (std::size_t it = 0; it < iterations; ++it) {
      std::fill(gw.begin(), gw.end(), 0.0);
      std::fill(gb.begin(), gb.end(), 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        const auto& x = pooled[i];
        for (std::size_t c = 0; c < k; ++c) z[c] = b[c];
        for (std::size_t d = 0; d < h; ++d) {
          for (std::size_t c = 0; c < k; ++c) z[c] += x[d] * w[d * k + c];
        }
        const double mx = *std::max_element(z.begin(), z.end());
        double s = 0.0;
        for (auto& v : z) s += (v = std::exp(v - mx));
        for (std::size_t c = 0; c < k; ++c) {
          const double g = z[c] / s - (labels[i] == c ? 1.0 : 0.0);
          gb[c] += g;
          for (std::size_t d = 0; d < h; ++d) gw[d * k + c] += g * x[d];
        }
      }
      const double inv_n = 1.0 / static_cast<double>(n);
      for (std::size_t j = 0; j < w.size(); ++j) w[j] -= learning_rate * (gw[j] * inv_n + l2 * w[j]);
      for (std::size_t c = 0; c < k; ++c) b[c] -= learning_rate * gb[c] * inv_n;
    }
    classifier_.weight = Matrix(h, k);
    for (std::size_t j = 0; j < w.size(); ++j) classifier_.weight.data()[j] = static_cast<float>(w[j]);
    classifier_.bias.assign(k, 0.0f);
    for (std::size_t c = 0; c < k; ++c) classifier_.bias[c] = static_cast<float>(b[c]);
  }

  // "MMDL" model file: config followed by every weight tensor as raw f32.
  static constexpr std::uint32_t kFormatVersion = 1;

  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write model " + path);
    io::put_magic(os, "MMDL");
    io::put<std::uint32_t>(os, kFormatVersion);
    io::put<std::uint32_t>(os, cfg_.vocab_size);
    for (auto v : {cfg_.max_seq_len, cfg_.hidden_dim, cfg_.num_heads, cfg_.num_layers, cfg_.ffn_dim, cfg_.num_classes}) {
      io::put<std::uint64_t>(os, v);
    }
    io::put<std::uint64_t>(os, cfg_.seed);
    io::put<float>(os, cfg_.qk_gain);
    auto put_m = [&](const Matrix& m) { io::put_array<float>(os, m.values()); };
    auto put_v = [&](const std::vector<float>& v) { io::put_array<float>(os, std::span<const float>(v)); };
    put_m(token_embedding_);
    put_m(position_embedding_);
    for (const auto& l : layers_) {
      put_m(l.w_q), put_m(l.w_k), put_m(l.w_v), put_m(l.w_out);
      put_m(l.ffn_w1), put_v(l.ffn_b1), put_m(l.ffn_w2), put_v(l.ffn_b2);
    }
    put_m(classifier_.weight);
    put_v(classifier_.bias);
    if (!os) throw std::runtime_error("write failed: " + path);
  }

  static ToyTransformer load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot read model " + path);
    io::expect_magic(is, "MMDL");
    if (io::get<std::uint32_t>(is) != kFormatVersion) throw std::runtime_error("unsupported model format version");
    ModelConfig cfg;
    cfg.vocab_size = io::get<std::uint32_t>(is);
    cfg.max_seq_len = io::get<std::uint64_t>(is);
    cfg.hidden_dim = io::get<std::uint64_t>(is);
    cfg.num_heads = io::get<std::uint64_t>(is);
    cfg.num_layers = io::get<std::uint64_t>(is);
    cfg.ffn_dim = io::get<std::uint64_t>(is);
    cfg.num_classes = io::get<std::uint64_t>(is);
    cfg.seed = io::get<std::uint64_t>(is);
    cfg.qk_gain = io::get<float>(is);
    cfg.validate();
    ToyTransformer m;
    m.cfg_ = cfg;
    auto get_m = [&](std::size_t r, std::size_t c) { return Matrix(r, c, io::get_array<float>(is, r * c)); };
    auto get_v = [&](std::size_t n) { return io::get_array<float>(is, n); };
    const std::size_t h = cfg.hidden_dim;
    m.token_embedding_ = get_m(cfg.vocab_size, h);
    m.position_embedding_ = get_m(cfg.max_seq_len, h);
    m.layers_.resize(cfg.num_layers);
    for (auto& l : m.layers_) {
      l.num_heads = cfg.num_heads;
      l.w_q = get_m(h, h), l.w_k = get_m(h, h), l.w_v = get_m(h, h), l.w_out = get_m(h, h);
      l.ffn_w1 = get_m(h, cfg.ffn_dim), l.ffn_b1 = get_v(cfg.ffn_dim);
      l.ffn_w2 = get_m(cfg.ffn_dim, h), l.ffn_b2 = get_v(h);
    }
    m.classifier_.weight = get_m(h, cfg.num_classes);
    m.classifier_.bias = get_v(cfg.num_classes);
    return m;
  }

 private:
  ModelConfig cfg_;
  Matrix token_embedding_;
  Matrix position_embedding_;
  std::vector<LayerWeights> layers_;
  Classifier classifier_;
};

}  // namespace memoattn
