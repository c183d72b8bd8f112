#pragma once

// Hidden-state embedder: mean-pool over tokens, standardize, then three affine
// layers H -> h0 -> h1 -> d with a fixed standardization between the first and
// second layer. Trained as a weight-shared Siamese pair so that
//   1 - ||embed(a) - embed(b)||_2   tracks   similarity_score_multihead(apm(a), apm(b)).
//
// The network is templated on its scalar type: training and gradient checks
// run in double, the serving embedder is float.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "memoattn/binary_io.hpp"
#include "memoattn/tensor.hpp"

namespace memoattn {

using FeatureVector = std::vector<float>;

struct EmbedderConfig {
  std::size_t input_dim = 64;
  std::array<std::size_t, 2> hidden_dims{128, 128};
  std::size_t output_dim = 128;
  double learning_rate = 0.1;
  double momentum = 0.9;
  std::size_t batch_size = 32;
  std::size_t epochs = 20;
  std::uint64_t seed = 11;
  // Exponential-average factor for the running statistics of the inner
  // standardization layer.
  double norm_momentum = 0.1;
  // Global gradient-norm clip applied before each SGD step; 0 disables.
  double grad_clip = 0.1;
  // Output layer is rescaled at init so the mean training-pair distance
  // starts at this value (keeps pairs inside the unclamped region).
  double init_pair_distance = 0.5;

  void validate() const {
    if (input_dim == 0 || hidden_dims[0] == 0 || hidden_dims[1] == 0 || output_dim == 0) {
      throw std::invalid_argument("EmbedderConfig: dimensions must be >= 1");
    }
    if (!(learning_rate > 0.0)) throw std::invalid_argument("EmbedderConfig: learning_rate must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("EmbedderConfig: momentum must lie in [0, 1)");
    if (batch_size == 0) throw std::invalid_argument("EmbedderConfig: batch_size must be >= 1");
  }
};

/// A training pair refers to two records of a PairDataset by index.
struct TrainingPair {
  std::size_t a = 0;
  std::size_t b = 0;
  double ground_truth = 0.0;
  bool operator==(const TrainingPair&) const = default;
};

/// Trainable parameters, also used as the gradient container.
template <typename Real>
struct EmbedderParams {
  std::vector<Real> w1, b1, w2, b2, w3, b3;  // weights are out x in, row-major

  std::array<std::vector<Real>*, 6> tensors() { return {&w1, &b1, &w2, &b2, &w3, &b3}; }
  std::array<const std::vector<Real>*, 6> tensors() const { return {&w1, &b1, &w2, &b2, &w3, &b3}; }

  void zero_like(const EmbedderParams& o) {
    auto dst = tensors();
    auto src = o.tensors();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i]->assign(src[i]->size(), Real(0));
  }

  bool operator==(const EmbedderParams&) const = default;
};

namespace detail {

// y = W x + b, W is out x in. Eight interleaved partial sums per row.
template <typename Real>
void affine(const std::vector<Real>& w, const std::vector<Real>& b, const Real* x, Real* y, std::size_t in,
            std::size_t out) {
  constexpr std::size_t kLanes = 8;
  for (std::size_t o = 0; o < out; ++o) {
    const Real* wr = w.data() + o * in;
    Real acc[kLanes] = {};
    std::size_t i = 0;
    for (; i + kLanes <= in; i += kLanes) {
      for (std::size_t j = 0; j < kLanes; ++j) acc[j] += wr[i + j] * x[i + j];
    }
    Real tail = 0;
    for (; i < in; ++i) tail += wr[i] * x[i];
    y[o] = b[o] + (((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]))) + tail;
  }
}

}  // namespace detail

template <typename Real>
class BasicEmbedder {
 public:
  std::size_t input_dim = 0, hidden0 = 0, hidden1 = 0, output_dim = 0;
  std::vector<Real> in_mean, in_std;    // input standardization
  std::vector<Real> norm_mean, norm_var;  // standardization after layer 1
  EmbedderParams<Real> params;

  static constexpr Real kNormEps = Real(1e-5);

  BasicEmbedder() = default;
  BasicEmbedder(std::size_t in, std::size_t h0, std::size_t h1, std::size_t out)
      : input_dim(in), hidden0(h0), hidden1(h1), output_dim(out),
        in_mean(in, Real(0)), in_std(in, Real(1)), norm_mean(h0, Real(0)), norm_var(h0, Real(1)) {
    params.w1.assign(h0 * in, Real(0));
    params.b1.assign(h0, Real(0));
    params.w2.assign(h1 * h0, Real(0));
    params.b2.assign(h1, Real(0));
    params.w3.assign(out * h1, Real(0));
    params.b3.assign(out, Real(0));
  }

  template <typename To>
  BasicEmbedder<To> cast() const {
    auto conv = [](const std::vector<Real>& v) { return std::vector<To>(v.begin(), v.end()); };
    BasicEmbedder<To> e;
    e.input_dim = input_dim, e.hidden0 = hidden0, e.hidden1 = hidden1, e.output_dim = output_dim;
    e.in_mean = conv(in_mean), e.in_std = conv(in_std);
    e.norm_mean = conv(norm_mean), e.norm_var = conv(norm_var);
    e.params.w1 = conv(params.w1), e.params.b1 = conv(params.b1);
    e.params.w2 = conv(params.w2), e.params.b2 = conv(params.b2);
    e.params.w3 = conv(params.w3), e.params.b3 = conv(params.b3);
    return e;
  }

  /// Activations kept for backprop.
  struct Trace {
    std::vector<Real> z0, a1, z1, a2, out;
  };

  std::vector<Real> standardize(std::span<const Real> pooled) const {
    if (pooled.size() != input_dim) {
      throw std::invalid_argument("embed: input width " + std::to_string(pooled.size()) + " != " +
                                  std::to_string(input_dim));
    }
    std::vector<Real> z(input_dim);
    for (std::size_t i = 0; i < input_dim; ++i) z[i] = (pooled[i] - in_mean[i]) / in_std[i];
    return z;
  }

  /// Layer-1 pre-activation of a standardized input.
  std::vector<Real> layer1(const std::vector<Real>& z0) const {
    std::vector<Real> a1(hidden0);
    detail::affine(params.w1, params.b1, z0.data(), a1.data(), input_dim, hidden0);
    return a1;
  }

  void forward_from_standardized(const std::vector<Real>& z0, Trace& t) const {
    t.z0 = z0;
    t.a1 = layer1(z0);
    t.z1.resize(hidden0);
    for (std::size_t i = 0; i < hidden0; ++i) t.z1[i] = (t.a1[i] - norm_mean[i]) / std::sqrt(norm_var[i] + kNormEps);
    t.a2.resize(hidden1);
    detail::affine(params.w2, params.b2, t.z1.data(), t.a2.data(), hidden0, hidden1);
    t.out.resize(output_dim);
    detail::affine(params.w3, params.b3, t.a2.data(), t.out.data(), hidden1, output_dim);
  }

  std::vector<Real> forward_pooled(std::span<const Real> pooled) const {
    Trace t;
    forward_from_standardized(standardize(pooled), t);
    return std::move(t.out);
  }

  /// Feature vector of an L x H hidden state.
  FeatureVector embed(const HiddenState& hs) const {
    if (hs.cols() != input_dim || hs.rows() == 0) {
      throw std::invalid_argument("embed: hidden state " + shape_str(hs) + " does not match input dim " +
                                  std::to_string(input_dim));
    }
    std::vector<Real> pooled(input_dim, Real(0));
    for (std::size_t r = 0; r < hs.rows(); ++r) {
      auto row = hs.row(r);
      for (std::size_t c = 0; c < input_dim; ++c) pooled[c] += static_cast<Real>(row[c]);
    }
    for (auto& v : pooled) v /= static_cast<Real>(hs.rows());
    auto out = forward_pooled(pooled);
    return FeatureVector(out.begin(), out.end());
  }

  bool operator==(const BasicEmbedder&) const = default;
};

using Embedder = BasicEmbedder<float>;

inline double euclidean(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw std::invalid_argument("feature vectors differ in length");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    s += d * d;
  }
  return std::sqrt(s);
}

/// Affine map from embedding distance to similarity, clamped to [0, 1].
inline double similarity_from_distance(double distance) { return std::clamp(1.0 - distance, 0.0, 1.0); }

inline double predicted_similarity(std::span<const float> fa, std::span<const float> fb) {
  if (fa.size() != fb.size()) {
    throw std::invalid_argument("predicted_similarity: length mismatch " + std::to_string(fa.size()) + " vs " +
                                std::to_string(fb.size()));
  }
  return similarity_from_distance(euclidean(fa, fb));
}

inline double siamese_loss(std::span<const float> fa, std::span<const float> fb, double ground_truth) {
  const double d = predicted_similarity(fa, fb) - ground_truth;
  return d * d;
}

/// Mean squared error between predicted and ground-truth similarity over
/// `pairs`, where `inputs` are standardized pooled vectors. When `grad` is
/// non-null it receives d(loss)/d(params). Standardization statistics are
/// treated as constants.
template <typename Real>
Real siamese_batch_loss(const BasicEmbedder<Real>& e, const std::vector<std::vector<Real>>& inputs,
                        std::span<const TrainingPair> pairs, EmbedderParams<Real>* grad) {
  if (pairs.empty()) return Real(0);
  if (grad) grad->zero_like(e.params);
  using Trace = typename BasicEmbedder<Real>::Trace;
  Trace ta, tb;
  std::vector<Real> dout(e.output_dim);
  const Real inv_n = Real(1) / static_cast<Real>(pairs.size());
  Real total = 0;

  auto backprop = [&](const Trace& t, const std::vector<Real>& d_out) {
    auto& g = *grad;
    std::vector<Real> d_a2(e.hidden1, Real(0)), d_a1(e.hidden0, Real(0));
    for (std::size_t o = 0; o < e.output_dim; ++o) {
      const Real d = d_out[o];
      if (d == Real(0)) continue;
      g.b3[o] += d;
      Real* gw = g.w3.data() + o * e.hidden1;
      const Real* w = e.params.w3.data() + o * e.hidden1;
      for (std::size_t i = 0; i < e.hidden1; ++i) {
        gw[i] += d * t.a2[i];
        d_a2[i] += d * w[i];
      }
    }
    for (std::size_t o = 0; o < e.hidden1; ++o) {
      const Real d = d_a2[o];
      g.b2[o] += d;
      Real* gw = g.w2.data() + o * e.hidden0;
      const Real* w = e.params.w2.data() + o * e.hidden0;
      for (std::size_t i = 0; i < e.hidden0; ++i) {
        gw[i] += d * t.z1[i];
        d_a1[i] += d * w[i];
      }
    }
    for (std::size_t o = 0; o < e.hidden0; ++o) {
      const Real d = d_a1[o] / std::sqrt(e.norm_var[o] + BasicEmbedder<Real>::kNormEps);
      g.b1[o] += d;
      Real* gw = g.w1.data() + o * e.input_dim;
      for (std::size_t i = 0; i < e.input_dim; ++i) gw[i] += d * t.z0[i];
    }
  };

  for (const auto& p : pairs) {
    e.forward_from_standardized(inputs.at(p.a), ta);
    e.forward_from_standardized(inputs.at(p.b), tb);
    Real dist2 = 0;
    for (std::size_t i = 0; i < e.output_dim; ++i) {
      const Real d = ta.out[i] - tb.out[i];
      dist2 += d * d;
    }
    const Real dist = std::sqrt(dist2);
    const Real pred = dist < Real(1) ? Real(1) - dist : Real(0);
    const Real err = pred - static_cast<Real>(p.ground_truth);
    total += err * err;
    // d(pred)/d(dist) = -1 inside the clamp; zero at dist == 0 and beyond 1.
    if (grad && dist > Real(0) && dist < Real(1)) {
      const Real coeff = Real(2) * err * (-Real(1)) / dist * inv_n;
      for (std::size_t i = 0; i < e.output_dim; ++i) dout[i] = coeff * (ta.out[i] - tb.out[i]);
      backprop(ta, dout);
      for (auto& v : dout) v = -v;
      backprop(tb, dout);
    }
  }
  return total * inv_n;
}

/// Records referenced by TrainingPair indices.
struct PairDataset {
  std::vector<HiddenState> hidden;
  std::vector<TrainingPair> pairs;
};

struct TrainResult {
  Embedder embedder;
  // loss_curve[0] is the loss before training, then one entry per epoch.
  std::vector<double> loss_curve;
  double train_ms = 0.0;
};

/// Partners for every anchor are drawn uniformly without replacement; the
/// result holds each unordered pair once, in first-drawn order.
inline std::vector<TrainingPair> pair_sampler(std::size_t num_records, std::size_t pairs_per_anchor,
                                              std::uint64_t seed,
                                              const std::function<double(std::size_t, std::size_t)>& similarity) {
  if (num_records < 2) throw std::invalid_argument("pair_sampler: need at least 2 records");
  std::mt19937_64 rng(seed);
  const std::size_t k = std::min(pairs_per_anchor, num_records - 1);
  std::uniform_int_distribution<std::size_t> pick(0, num_records - 2);
  std::set<std::pair<std::size_t, std::size_t>> seen;
  std::vector<TrainingPair> out;
  std::vector<std::size_t> chosen;
  for (std::size_t a = 0; a < num_records; ++a) {
    chosen.clear();
    while (chosen.size() < k) {
      std::size_t b = pick(rng);
      if (b >= a) ++b;
      if (std::find(chosen.begin(), chosen.end(), b) != chosen.end()) continue;
      chosen.push_back(b);
    }
    for (auto b : chosen) {
      const auto key = std::minmax(a, b);
      if (!seen.insert(key).second) continue;
      out.push_back({a, b, 0.0});
    }
  }
  for (auto& p : out) {
    p.ground_truth = similarity(p.a, p.b);
    if (!(p.ground_truth >= 0.0 && p.ground_truth <= 1.0)) {
      throw std::runtime_error("pair_sampler: ground-truth similarity outside [0, 1]");
    }
  }
  return out;
}

namespace detail {

template <typename Real>
std::vector<Real> pooled_of(const HiddenState& hs) {
  std::vector<Real> p(hs.cols(), Real(0));
  for (std::size_t r = 0; r < hs.rows(); ++r) {
    auto row = hs.row(r);
    for (std::size_t c = 0; c < p.size(); ++c) p[c] += static_cast<Real>(row[c]);
  }
  for (auto& v : p) v /= static_cast<Real>(hs.rows());
  return p;
}

inline void init_dense(std::vector<double>& w, std::size_t in, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(in)));
  for (auto& v : w) v = dist(rng);
}

inline void recompute_norm_stats(BasicEmbedder<double>& e, const std::vector<std::vector<double>>& inputs) {
  std::fill(e.norm_mean.begin(), e.norm_mean.end(), 0.0);
  std::fill(e.norm_var.begin(), e.norm_var.end(), 0.0);
  std::vector<std::vector<double>> acts;
  acts.reserve(inputs.size());
  for (const auto& z : inputs) acts.push_back(e.layer1(z));
  const double n = static_cast<double>(inputs.size());
  for (const auto& a : acts) {
    for (std::size_t i = 0; i < a.size(); ++i) e.norm_mean[i] += a[i] / n;
  }
  for (const auto& a : acts) {
    for (std::size_t i = 0; i < a.size(); ++i) e.norm_var[i] += (a[i] - e.norm_mean[i]) * (a[i] - e.norm_mean[i]) / n;
  }
}

}  // namespace detail

/// Siamese SGD with momentum over mini-batches of pairs.
inline TrainResult train(const EmbedderConfig& cfg, const PairDataset& data) {
  cfg.validate();
  if (data.pairs.empty() || data.hidden.empty()) throw std::invalid_argument("train: empty dataset");
  for (const auto& hs : data.hidden) {
    if (hs.cols() != cfg.input_dim || hs.rows() == 0) {
      throw std::invalid_argument("train: hidden state " + shape_str(hs) + " does not match input dim " +
                                  std::to_string(cfg.input_dim));
    }
  }
  for (const auto& p : data.pairs) {
    if (p.a >= data.hidden.size() || p.b >= data.hidden.size()) throw std::invalid_argument("train: pair index out of range");
  }
  const auto t0 = std::chrono::steady_clock::now();

  BasicEmbedder<double> e(cfg.input_dim, cfg.hidden_dims[0], cfg.hidden_dims[1], cfg.output_dim);

  // Input standardization from the training records.
  std::vector<std::vector<double>> pooled;
  pooled.reserve(data.hidden.size());
  for (const auto& hs : data.hidden) pooled.push_back(detail::pooled_of<double>(hs));
  const double n = static_cast<double>(pooled.size());
  std::fill(e.in_mean.begin(), e.in_mean.end(), 0.0);
  for (const auto& p : pooled) {
    for (std::size_t i = 0; i < p.size(); ++i) e.in_mean[i] += p[i] / n;
  }
  std::vector<double> var(cfg.input_dim, 0.0);
  for (const auto& p : pooled) {
    for (std::size_t i = 0; i < p.size(); ++i) var[i] += (p[i] - e.in_mean[i]) * (p[i] - e.in_mean[i]) / n;
  }
  for (std::size_t i = 0; i < var.size(); ++i) e.in_std[i] = std::max(std::sqrt(var[i]), 1e-6);
  std::vector<std::vector<double>> inputs;
  inputs.reserve(pooled.size());
  for (const auto& p : pooled) inputs.push_back(e.standardize(p));

  std::mt19937_64 rng(cfg.seed);
  detail::init_dense(e.params.w1, cfg.input_dim, rng);
  detail::init_dense(e.params.w2, cfg.hidden_dims[0], rng);
  detail::init_dense(e.params.w3, cfg.hidden_dims[1], rng);
  detail::recompute_norm_stats(e, inputs);

  if (cfg.init_pair_distance > 0.0) {
    double mean_dist = 0.0;
    for (const auto& p : data.pairs) {
      auto fa = e.forward_pooled(pooled[p.a]);
      auto fb = e.forward_pooled(pooled[p.b]);
      double s = 0.0;
      for (std::size_t i = 0; i < fa.size(); ++i) s += (fa[i] - fb[i]) * (fa[i] - fb[i]);
      mean_dist += std::sqrt(s) / static_cast<double>(data.pairs.size());
    }
    if (mean_dist > 0.0) {
      const double scale = cfg.init_pair_distance / mean_dist;
      for (auto& v : e.params.w3) v *= scale;
    }
  }

  TrainResult result;
  result.loss_curve.push_back(siamese_batch_loss<double>(e, inputs, data.pairs, nullptr));

  EmbedderParams<double> grad, velocity;
  velocity.zero_like(e.params);
  std::vector<TrainingPair> order = data.pairs;
  std::vector<double> batch_mean(cfg.hidden_dims[0]), batch_var(cfg.hidden_dims[0]);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::span<const TrainingPair> batch(order.data() + start, end - start);

      // Running statistics of the inner standardization layer.
      if (cfg.norm_momentum > 0.0) {
        std::fill(batch_mean.begin(), batch_mean.end(), 0.0);
        std::fill(batch_var.begin(), batch_var.end(), 0.0);
        std::vector<std::vector<double>> acts;
        acts.reserve(batch.size() * 2);
        for (const auto& p : batch) {
          acts.push_back(e.layer1(inputs[p.a]));
          acts.push_back(e.layer1(inputs[p.b]));
        }
        const double m = static_cast<double>(acts.size());
        for (const auto& a : acts) {
          for (std::size_t i = 0; i < a.size(); ++i) batch_mean[i] += a[i] / m;
        }
        for (const auto& a : acts) {
          for (std::size_t i = 0; i < a.size(); ++i) batch_var[i] += (a[i] - batch_mean[i]) * (a[i] - batch_mean[i]) / m;
        }
        for (std::size_t i = 0; i < batch_mean.size(); ++i) {
          e.norm_mean[i] = (1.0 - cfg.norm_momentum) * e.norm_mean[i] + cfg.norm_momentum * batch_mean[i];
          e.norm_var[i] = (1.0 - cfg.norm_momentum) * e.norm_var[i] + cfg.norm_momentum * batch_var[i];
        }
      }

      const double loss = siamese_batch_loss<double>(e, inputs, batch, &grad);
      if (!std::isfinite(loss)) {
        throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch) + ", pair offset " +
                                 std::to_string(start) + " (try a lower learning rate)");
      }
      double norm2 = 0.0;
      for (const auto* t : std::as_const(grad).tensors()) {
        for (double g : *t) norm2 += g * g;
      }
      const double norm = std::sqrt(norm2);
      const double clip = (cfg.grad_clip > 0.0 && norm > cfg.grad_clip) ? cfg.grad_clip / norm : 1.0;
      auto gt = grad.tensors();
      auto vt = velocity.tensors();
      auto pt = e.params.tensors();
      for (std::size_t t = 0; t < pt.size(); ++t) {
        for (std::size_t i = 0; i < pt[t]->size(); ++i) {
          double& v = (*vt[t])[i];
          v = cfg.momentum * v + clip * (*gt[t])[i];
          (*pt[t])[i] -= cfg.learning_rate * v;
        }
      }
    }
    const double epoch_loss = siamese_batch_loss<double>(e, inputs, data.pairs, nullptr);
    if (!std::isfinite(epoch_loss)) {
      throw std::runtime_error("train: non-finite loss after epoch " + std::to_string(epoch));
    }
    result.loss_curve.push_back(epoch_loss);
  }

  result.embedder = e.cast<float>();
  result.train_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

// "MEMB" embedder file.
inline constexpr std::uint32_t kEmbedderFormatVersion = 1;

inline void save_embedder(std::ostream& os, const Embedder& e) {
  io::put_magic(os, "MEMB");
  io::put<std::uint32_t>(os, kEmbedderFormatVersion);
  for (auto d : {e.input_dim, e.hidden0, e.hidden1, e.output_dim}) io::put<std::uint32_t>(os, static_cast<std::uint32_t>(d));
  for (const auto* v : {&e.in_mean, &e.in_std, &e.params.w1, &e.params.b1, &e.norm_mean, &e.norm_var, &e.params.w2,
                        &e.params.b2, &e.params.w3, &e.params.b3}) {
    io::put_array<float>(os, std::span<const float>(*v));
  }
}

inline Embedder load_embedder(std::istream& is) {
  io::expect_magic(is, "MEMB");
  const auto version = io::get<std::uint32_t>(is);
  if (version != kEmbedderFormatVersion) throw std::runtime_error("unsupported embedder version " + std::to_string(version));
  const auto in = io::get<std::uint32_t>(is), h0 = io::get<std::uint32_t>(is), h1 = io::get<std::uint32_t>(is),
             out = io::get<std::uint32_t>(is);
  Embedder e(in, h0, h1, out);
  for (auto* v : {&e.in_mean, &e.in_std, &e.params.w1, &e.params.b1, &e.norm_mean, &e.norm_var, &e.params.w2,
                  &e.params.b2, &e.params.w3, &e.params.b3}) {
    *v = io::get_array<float>(is, v->size());
  }
  return e;
}

inline void save_embedder(const std::string& path, const Embedder& e) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write embedder " + path);
  save_embedder(os, e);
}

inline Embedder load_embedder(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read embedder " + path);
  return load_embedder(is);
}

}  // namespace memoattn
