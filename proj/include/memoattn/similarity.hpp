#pragma once

// APM similarity: one minus the row-averaged total-variation distance, and the
// memoization rate M / (N x L).

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "memoattn/tensor.hpp"

namespace memoattn {

struct SimilarityScore {
  double value = 0.0;
};

struct MemoizationRate {
  double value = 0.0;
  std::uint64_t successes = 0;
  std::uint64_t sequences = 0;
  std::uint64_t layers = 0;
};

namespace detail {

inline double half_l1(const float* p, const float* q, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += std::abs(static_cast<double>(p[i]) - static_cast<double>(q[i]));
  return 0.5 * acc;
}

inline void check_distribution(std::span<const float> p, const char* name) {
  double s = 0.0;
  for (float v : p) {
    if (!(v >= 0.0f)) throw std::invalid_argument(std::string("tv_distance: ") + name + " has a negative or NaN entry");
    s += v;
  }
  if (std::abs(s - 1.0) > 1e-4) {
    throw std::invalid_argument(std::string("tv_distance: ") + name + " sums to " + std::to_string(s));
  }
}

}  // namespace detail

/// (1/2) sum |p_i - q_i| for two probability rows.
inline double tv_distance(std::span<const float> p, std::span<const float> q) {
  if (p.size() != q.size()) {
    throw std::invalid_argument("tv_distance: length mismatch " + std::to_string(p.size()) + " vs " +
                                std::to_string(q.size()));
  }
  detail::check_distribution(p, "p");
  detail::check_distribution(q, "q");
  return detail::half_l1(p.data(), q.data(), p.size());
}

/// Similarity of two L x L APMs stored row-major. No distribution checks: this
/// is the hot path of exhaustive search over stored records.
inline double similarity_unchecked(std::span<const float> a, std::span<const float> b, std::size_t seq_len) {
  double tv = 0.0;
  for (std::size_t r = 0; r < seq_len; ++r) tv += detail::half_l1(a.data() + r * seq_len, b.data() + r * seq_len, seq_len);
  return 1.0 - tv / static_cast<double>(seq_len);
}

inline SimilarityScore similarity_score(const Apm& a, const Apm& b) {
  if (a.seq_len() != b.seq_len()) {
    throw std::invalid_argument("similarity_score: APM shapes differ (" + shape_str(a.probs) + " vs " +
                                shape_str(b.probs) + ")");
  }
  const std::size_t n = a.seq_len();
  if (n == 0) throw std::invalid_argument("similarity_score: empty APM");
  double tv = 0.0;
  for (std::size_t r = 0; r < n; ++r) tv += tv_distance(a.probs.row(r), b.probs.row(r));
  return {1.0 - tv / static_cast<double>(n)};
}

/// Unweighted mean of per-head scores.
inline SimilarityScore similarity_score_multihead(const std::vector<Apm>& a, const std::vector<Apm>& b) {
  if (a.size() != b.size() || a.empty()) {
    throw std::invalid_argument("similarity_score_multihead: head count mismatch (" + std::to_string(a.size()) +
                                " vs " + std::to_string(b.size()) + ")");
  }
  double acc = 0.0;
  for (std::size_t h = 0; h < a.size(); ++h) acc += similarity_score(a[h], b[h]).value;
  return {acc / static_cast<double>(a.size())};
}

/// Multi-head similarity over flat payloads of num_heads consecutive L x L blocks.
inline double similarity_multihead_unchecked(std::span<const float> a, std::span<const float> b, std::size_t num_heads,
                                             std::size_t seq_len) {
  const std::size_t block = seq_len * seq_len;
  double acc = 0.0;
  for (std::size_t h = 0; h < num_heads; ++h) {
    acc += similarity_unchecked(a.subspan(h * block, block), b.subspan(h * block, block), seq_len);
  }
  return acc / static_cast<double>(num_heads);
}

inline MemoizationRate memoization_rate(std::uint64_t successes, std::uint64_t sequences, std::uint64_t layers) {
  if (sequences == 0 || layers == 0) throw std::invalid_argument("memoization_rate: zero denominator");
  if (successes > sequences * layers) {
    throw std::invalid_argument("memoization_rate: " + std::to_string(successes) + " successes exceed " +
                                std::to_string(sequences * layers) + " attention computations");
  }
  return {static_cast<double>(successes) / static_cast<double>(sequences * layers), successes, sequences, layers};
}

}  // namespace memoattn
