#pragma once

// Naive double-precision reference implementations used only by tests. They
// deliberately share no code with the library beyond reading Matrix entries.

#include <cmath>
#include <vector>

#include "memoattn/tensor.hpp"

namespace oracle {

using Grid = std::vector<std::vector<double>>;

inline Grid to_grid(const memoattn::Matrix& m) {
  Grid g(m.rows(), std::vector<double>(m.cols()));
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) g[i][j] = m(i, j);
  return g;
}

inline Grid matmul(const Grid& a, const Grid& b) {
  const std::size_t n = a.size(), k = b.size(), m = b.empty() ? 0 : b[0].size();
  Grid out(n, std::vector<double>(m, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t p = 0; p < k; ++p) out[i][j] += a[i][p] * b[p][j];
  return out;
}

inline Grid matmul(const memoattn::Matrix& a, const memoattn::Matrix& b) { return matmul(to_grid(a), to_grid(b)); }

struct Attention {
  Grid output;
  std::vector<Grid> apms;
};

inline Attention attention(const memoattn::Matrix& x, const memoattn::LayerWeights& w) {
  const Grid X = to_grid(x);
  const Grid Q = matmul(X, to_grid(w.w_q)), K = matmul(X, to_grid(w.w_k)), V = matmul(X, to_grid(w.w_v));
  const std::size_t L = x.rows(), H = x.cols(), heads = w.num_heads, hd = H / heads;
  Grid ctx(L, std::vector<double>(H, 0.0));
  Attention res;
  for (std::size_t h = 0; h < heads; ++h) {
    Grid p(L, std::vector<double>(L));
    for (std::size_t i = 0; i < L; ++i) {
      double mx = -1e300;
      for (std::size_t j = 0; j < L; ++j) {
        double dot = 0;
        for (std::size_t d = 0; d < hd; ++d) dot += Q[i][h * hd + d] * K[j][h * hd + d];
        p[i][j] = dot / std::sqrt(static_cast<double>(hd));
        mx = std::max(mx, p[i][j]);
      }
      double s = 0;
      for (auto& v : p[i]) s += (v = std::exp(v - mx));
      for (auto& v : p[i]) v /= s;
    }
    for (std::size_t i = 0; i < L; ++i)
      for (std::size_t d = 0; d < hd; ++d)
        for (std::size_t j = 0; j < L; ++j) ctx[i][h * hd + d] += p[i][j] * V[j][h * hd + d];
    res.apms.push_back(std::move(p));
  }
  res.output = matmul(ctx, to_grid(w.w_out));
  return res;
}

inline Grid feed_forward(const memoattn::Matrix& x, const memoattn::LayerWeights& w) {
  const Grid X = to_grid(x);
  Grid inner = matmul(X, to_grid(w.ffn_w1));
  for (auto& row : inner)
    for (std::size_t c = 0; c < row.size(); ++c) row[c] = std::max(0.0, row[c] + w.ffn_b1[c]);
  Grid out = matmul(inner, to_grid(w.ffn_w2));
  for (std::size_t r = 0; r < out.size(); ++r)
    for (std::size_t c = 0; c < out[r].size(); ++c) out[r][c] += X[r][c] + w.ffn_b2[c];
  return out;
}

}  // namespace oracle
