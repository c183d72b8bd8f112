#pragma once

// Dense row-major f32 matrices and the multi-head self-attention forward pass.
//
// Two attention paths share one implementation of the context stage
// (probs . V followed by the output projection):
//
//   attention_full      X -> Q, K, V -> softmax(Q K^T / sqrt(dh)) -> APMs -> context
//   attention_memoized  X -> V, externally supplied APMs           -> context
//
// Because the context stage is literally the same code, feeding the APMs that
// attention_full produced back into attention_memoized reproduces its output
// bit-for-bit.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace memoattn {

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, float fill = 0.0f)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<float> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw std::invalid_argument("Matrix: data length " + std::to_string(data_.size()) +
                                  " != " + std::to_string(rows_) + "x" + std::to_string(cols_));
    }
  }
  Matrix(std::initializer_list<std::initializer_list<float>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw std::invalid_argument("Matrix: ragged initializer");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0f;
    return m;
  }

  /// Entries drawn i.i.d. from N(0, stddev^2).
  template <typename Rng>
  static Matrix random_normal(std::size_t rows, std::size_t cols, float stddev, Rng& rng) {
    Matrix m(rows, cols);
    std::normal_distribution<float> dist(0.0f, stddev);
    for (auto& v : m.data_) v = dist(rng);
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  float& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  float operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<float> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const float> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

  float* data() noexcept { return data_.data(); }
  const float* data() const noexcept { return data_.data(); }
  std::span<const float> values() const noexcept { return data_; }
  std::span<float> values() noexcept { return data_; }

  bool operator==(const Matrix& o) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<float> data_;
};

using HiddenState = Matrix;

inline bool all_finite(std::span<const float> v) {
  return std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); });
}

inline std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

/// Row-stochastic L x L attention probability matrix of one head.
struct Apm {
  Matrix probs;

  Apm() = default;
  explicit Apm(Matrix m) : probs(std::move(m)) {
    if (probs.rows() != probs.cols()) throw std::invalid_argument("Apm: matrix must be square");
  }
  std::size_t seq_len() const noexcept { return probs.rows(); }
  bool operator==(const Apm&) const = default;

  /// Rows sum to 1 within `tol` and entries lie in [0, 1].
  bool is_valid(double tol = 1e-5) const {
    for (std::size_t r = 0; r < probs.rows(); ++r) {
      double s = 0.0;
      for (float v : probs.row(r)) {
        if (!(v >= 0.0f && v <= 1.0f)) return false;
        s += v;
      }
      if (std::abs(s - 1.0) > tol) return false;
    }
    return true;
  }
};

struct LayerWeights {
  Matrix w_q, w_k, w_v, w_out;  // H x H
  Matrix ffn_w1;                // H x F
  std::vector<float> ffn_b1;    // F
  Matrix ffn_w2;                // F x H
  std::vector<float> ffn_b2;    // H
  std::size_t num_heads = 1;

  std::size_t hidden_dim() const noexcept { return w_q.rows(); }
  std::size_t head_dim() const noexcept { return hidden_dim() / num_heads; }

  void validate() const {
    const std::size_t h = hidden_dim();
    if (num_heads == 0 || h % num_heads != 0) {
      throw std::invalid_argument("LayerWeights: hidden dim " + std::to_string(h) +
                                  " not divisible by num_heads " + std::to_string(num_heads));
    }
    for (const Matrix* m : {&w_q, &w_k, &w_v, &w_out}) {
      if (m->rows() != h || m->cols() != h) throw std::invalid_argument("LayerWeights: projection must be HxH");
    }
    if (ffn_w1.rows() != h || ffn_w2.cols() != h || ffn_w1.cols() != ffn_w2.rows() ||
        ffn_b1.size() != ffn_w1.cols() || ffn_b2.size() != h) {
      throw std::invalid_argument("LayerWeights: inconsistent feed-forward shapes");
    }
  }
};

namespace detail {

// out[i, :] += a[i, k] * b[k, :], i-k-j order so the inner loop vectorizes.
inline void gemm_accumulate(const float* a, const float* b, float* out, std::size_t n, std::size_t k,
                            std::size_t m, std::size_t lda, std::size_t ldb, std::size_t ldo) {
  for (std::size_t i = 0; i < n; ++i) {
    float* orow = out + i * ldo;
    const float* arow = a + i * lda;
    for (std::size_t p = 0; p < k; ++p) {
      const float av = arow[p];
      const float* brow = b + p * ldb;
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
}

inline void require(bool cond, const std::string& what) {
  if (!cond) throw std::invalid_argument(what);
}

}  // namespace detail

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  detail::require(a.cols() == b.rows(), "matmul: dimension mismatch " + shape_str(a) + " * " + shape_str(b));
  Matrix out(a.rows(), b.cols());
  detail::gemm_accumulate(a.data(), b.data(), out.data(), a.rows(), a.cols(), b.cols(), a.cols(), b.cols(),
                          b.cols());
  return out;
}

/// Numerically stable softmax of one row in place (max-subtraction).
inline void softmax_inplace(std::span<float> row) {
  if (row.empty()) return;
  const float mx = *std::max_element(row.begin(), row.end());
  float sum = 0.0f;
  for (float& v : row) {
    v = std::exp(v - mx);
    sum += v;
  }
  const float inv = 1.0f / sum;
  for (float& v : row) v *= inv;
}

inline Matrix softmax_rows(const Matrix& m) {
  Matrix out = m;
  for (std::size_t r = 0; r < out.rows(); ++r) softmax_inplace(out.row(r));
  return out;
}

/// Per-row normalization to zero mean, unit variance (no learned affine).
inline void layer_norm_inplace(Matrix& m, float eps = 1e-5f) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    double mean = 0.0;
    for (float v : row) mean += v;
    mean /= static_cast<double>(row.size());
    double var = 0.0;
    for (float v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(row.size());
    const float inv = static_cast<float>(1.0 / std::sqrt(var + eps));
    const float mu = static_cast<float>(mean);
    for (float& v : row) v = (v - mu) * inv;
  }
}

inline Matrix add(const Matrix& a, const Matrix& b) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  Matrix out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += b.data()[i];
  return out;
}

/// Context stage shared by both attention paths: for each head h,
/// ctx[:, h] = probs_h . V[:, h], then output = ctx . W_out.
/// `probs` holds num_heads consecutive L x L row-major matrices.
inline Matrix attention_context(const Matrix& v, std::span<const float> probs, const LayerWeights& w) {
  const std::size_t seq = v.rows();
  const std::size_t hd = w.head_dim();
  detail::require(probs.size() == w.num_heads * seq * seq, "attention: APM payload does not match heads x L x L");
  Matrix ctx(seq, v.cols());
  for (std::size_t h = 0; h < w.num_heads; ++h) {
    const float* p = probs.data() + h * seq * seq;
    detail::gemm_accumulate(p, v.data() + h * hd, ctx.data() + h * hd, seq, seq, hd, seq, v.cols(), ctx.cols());
  }
  return matmul(ctx, w.w_out);
}

struct AttentionResult {
  Matrix output;
  std::vector<Apm> apms;  // one per head
};

/// Full scaled dot-product multi-head self-attention.
inline AttentionResult attention_full(const HiddenState& hidden, const LayerWeights& w) {
  detail::require(hidden.cols() == w.hidden_dim(),
                  "attention_full: hidden " + shape_str(hidden) + " vs H=" + std::to_string(w.hidden_dim()));
  const std::size_t seq = hidden.rows();
  const std::size_t hd = w.head_dim();
  const Matrix q = matmul(hidden, w.w_q);
  const Matrix k = matmul(hidden, w.w_k);
  const Matrix v = matmul(hidden, w.w_v);
  const float scale = 1.0f / std::sqrt(static_cast<float>(hd));

  std::vector<float> probs(w.num_heads * seq * seq, 0.0f);
  std::vector<float> kt(hd * seq);  // K_h^T
  for (std::size_t h = 0; h < w.num_heads; ++h) {
    for (std::size_t j = 0; j < seq; ++j) {
      const float* kj = k.data() + j * k.cols() + h * hd;
      for (std::size_t d = 0; d < hd; ++d) kt[d * seq + j] = kj[d] * scale;
    }
    float* ph = probs.data() + h * seq * seq;
    detail::gemm_accumulate(q.data() + h * hd, kt.data(), ph, seq, hd, seq, q.cols(), seq, seq);
    for (std::size_t i = 0; i < seq; ++i) softmax_inplace({ph + i * seq, seq});
  }

  AttentionResult res;
  res.output = attention_context(v, probs, w);
  res.apms.reserve(w.num_heads);
  for (std::size_t h = 0; h < w.num_heads; ++h) {
    auto first = probs.begin() + static_cast<std::ptrdiff_t>(h * seq * seq);
    res.apms.emplace_back(Matrix(seq, seq, std::vector<float>(first, first + static_cast<std::ptrdiff_t>(seq * seq))));
  }
  return res;
}

/// Reduced attention: only V = X W_V is computed; APMs come from the caller.
inline Matrix attention_memoized(const HiddenState& hidden, const LayerWeights& w, std::span<const float> probs) {
  detail::require(hidden.cols() == w.hidden_dim(), "attention_memoized: hidden width mismatch");
  const std::size_t seq = hidden.rows();
  detail::require(probs.size() == w.num_heads * seq * seq,
                  "attention_memoized: expected " + std::to_string(w.num_heads) + " APMs of " + std::to_string(seq) +
                      "x" + std::to_string(seq));
  const Matrix v = matmul(hidden, w.w_v);
  return attention_context(v, probs, w);
}

inline Matrix attention_memoized(const HiddenState& hidden, const LayerWeights& w, const std::vector<Apm>& apms) {
  detail::require(apms.size() == w.num_heads, "attention_memoized: got " + std::to_string(apms.size()) +
                                                  " APMs for " + std::to_string(w.num_heads) + " heads");
  const std::size_t seq = hidden.rows();
  std::vector<float> probs;
  probs.reserve(apms.size() * seq * seq);
  for (const auto& a : apms) {
    detail::require(a.seq_len() == seq, "attention_memoized: APM is " + shape_str(a.probs) + ", sequence length " +
                                            std::to_string(seq));
    probs.insert(probs.end(), a.probs.values().begin(), a.probs.values().end());
  }
  return attention_memoized(hidden, w, std::span<const float>(probs));
}

/// x + relu(x W1 + b1) W2 + b2
inline Matrix feed_forward(const Matrix& hidden, const LayerWeights& w) {
  detail::require(hidden.cols() == w.ffn_w1.rows(), "feed_forward: hidden width mismatch");
  Matrix inner = matmul(hidden, w.ffn_w1);
  for (std::size_t r = 0; r < inner.rows(); ++r) {
    auto row = inner.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] = std::max(0.0f, row[c] + w.ffn_b1[c]);
  }
  Matrix out = matmul(inner, w.ffn_w2);
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    auto in = hidden.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] = in[c] + row[c] + w.ffn_b2[c];
  }
  return out;
}

}  // namespace memoattn
