#pragma once

// Index database: HNSW approximate nearest-neighbour search over feature
// vectors (Euclidean metric), plus the exhaustive-scan oracle.
//
// Layer assignment is drawn from a seeded generator and every priority queue
// orders by (distance, internal index), so builds are reproducible. Results
// are ordered by (distance, record id).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <queue>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "memoattn/binary_io.hpp"

namespace memoattn {

struct IndexConfig {
  std::size_t dim = 128;
  std::size_t max_neighbors = 16;
  std::size_t ef_construction = 200;
  std::size_t ef_search = 64;
  std::uint64_t seed = 42;

  void validate() const {
    if (dim == 0) throw std::invalid_argument("IndexConfig: dim must be >= 1");
    if (max_neighbors < 2) throw std::invalid_argument("IndexConfig: max_neighbors must be >= 2");
    if (ef_search < 1 || ef_construction < 1) throw std::invalid_argument("IndexConfig: ef values must be >= 1");
  }
  bool operator==(const IndexConfig&) const = default;
};

struct QueryResult {
  std::uint64_t record_id = 0;
  double distance = 0.0;
  bool operator==(const QueryResult&) const = default;
};

using IdVector = std::pair<std::uint64_t, std::vector<float>>;

namespace detail {

inline float l2_squared(const float* a, const float* b, std::size_t n) {
  float s0 = 0, s1 = 0, s2 = 0, s3 = 0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const float d0 = a[i] - b[i], d1 = a[i + 1] - b[i + 1], d2 = a[i + 2] - b[i + 2], d3 = a[i + 3] - b[i + 3];
    s0 += d0 * d0, s1 += d1 * d1, s2 += d2 * d2, s3 += d3 * d3;
  }
  for (; i < n; ++i) {
    const float d = a[i] - b[i];
    s0 += d * d;
  }
  return (s0 + s1) + (s2 + s3);
}

inline double l2_exact(const float* a, const float* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    s += d * d;
  }
  return std::sqrt(s);
}

inline void sort_results(std::vector<QueryResult>& r) {
  std::sort(r.begin(), r.end(), [](const QueryResult& x, const QueryResult& y) {
    return x.distance != y.distance ? x.distance < y.distance : x.record_id < y.record_id;
  });
}

}  // namespace detail

/// Exact k-NN by full scan; ties broken by lower id.
inline std::vector<QueryResult> exhaustive_query(std::span<const IdVector> vectors, std::span<const float> v,
                                                 std::size_t k) {
  std::vector<QueryResult> all;
  all.reserve(vectors.size());
  for (const auto& [id, vec] : vectors) {
    if (vec.size() != v.size()) {
      throw std::invalid_argument("exhaustive_query: dimension mismatch " + std::to_string(vec.size()) + " vs " +
                                  std::to_string(v.size()));
    }
    all.push_back({id, detail::l2_exact(vec.data(), v.data(), v.size())});
  }
  const std::size_t take = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(take), all.end(),
                    [](const QueryResult& x, const QueryResult& y) {
                      return x.distance != y.distance ? x.distance < y.distance : x.record_id < y.record_id;
                    });
  all.resize(take);
  return all;
}

class AnnIndex {
 public:
  AnnIndex() : AnnIndex(IndexConfig{}) {}
  explicit AnnIndex(const IndexConfig& cfg)
      : cfg_(cfg), rng_(cfg.seed), level_mult_(1.0 / std::log(static_cast<double>(cfg.max_neighbors))) {
    cfg_.validate();
  }

  static AnnIndex build(const IndexConfig& cfg, std::span<const IdVector> vectors) {
    AnnIndex idx(cfg);
    for (const auto& [id, v] : vectors) {
      if (v.size() != cfg.dim) {
        throw std::invalid_argument("AnnIndex::build: vector for id " + std::to_string(id) + " has dimension " +
                                    std::to_string(v.size()) + ", expected " + std::to_string(cfg.dim));
      }
      if (idx.lookup_.count(id)) throw std::invalid_argument("AnnIndex::build: duplicate id " + std::to_string(id));
    }
    for (const auto& [id, v] : vectors) idx.insert(id, v);
    return idx;
  }

  const IndexConfig& config() const noexcept { return cfg_; }
  std::size_t size() const noexcept { return ids_.size(); }
  bool empty() const noexcept { return ids_.empty(); }
  bool contains(std::uint64_t id) const { return lookup_.count(id) != 0; }
  int max_level() const noexcept { return max_level_; }

  std::span<const float> vector_of(std::uint64_t id) const {
    auto it = lookup_.find(id);
    if (it == lookup_.end()) throw std::out_of_range("AnnIndex: unknown id " + std::to_string(id));
    return {data_.data() + static_cast<std::size_t>(it->second) * cfg_.dim, cfg_.dim};
  }

  std::uint64_t id_at(std::size_t internal) const { return ids_.at(internal); }
  int level_of(std::size_t internal) const { return static_cast<int>(links_.at(internal).size()) - 1; }
  const std::vector<std::uint32_t>& neighbors(std::size_t internal, int level) const {
    return links_.at(internal).at(static_cast<std::size_t>(level));
  }
  std::size_t max_degree(int level) const noexcept { return level == 0 ? 2 * cfg_.max_neighbors : cfg_.max_neighbors; }

  void insert(std::uint64_t id, std::span<const float> v) {
    if (v.size() != cfg_.dim) {
      throw std::invalid_argument("AnnIndex::insert: dimension " + std::to_string(v.size()) + ", expected " +
                                  std::to_string(cfg_.dim));
    }
    if (lookup_.count(id)) throw std::invalid_argument("AnnIndex::insert: duplicate id " + std::to_string(id));

    const auto node = static_cast<std::uint32_t>(ids_.size());
    ids_.push_back(id);
    lookup_.emplace(id, node);
    data_.insert(data_.end(), v.begin(), v.end());

    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const double u = 1.0 - unif(rng_);  // (0, 1]
    const int level = static_cast<int>(std::floor(-std::log(u) * level_mult_));
    links_.emplace_back(static_cast<std::size_t>(level) + 1);

    if (max_level_ < 0) {
      entry_ = node;
      max_level_ = level;
      return;
    }

    const float* q = point(node);
    Candidate ep{dist(q, entry_), entry_};
    for (int l = max_level_; l > level; --l) ep = greedy(q, ep, l);

    std::vector<Candidate> entry_points{ep};
    for (int l = std::min(level, max_level_); l >= 0; --l) {
      auto found = search_layer(q, entry_points, cfg_.ef_construction, l, node);
      auto selected = select_neighbors(found, cfg_.max_neighbors);
      auto& mine = links_[node][static_cast<std::size_t>(l)];
      for (const auto& c : selected) mine.push_back(c.second);
      for (const auto& c : selected) connect(c.second, node, l);
      entry_points = std::move(found);
    }
    if (level > max_level_) {
      max_level_ = level;
      entry_ = node;
    }
  }

  std::vector<QueryResult> query(std::span<const float> v, std::size_t k) const { return query(v, k, cfg_.ef_search); }

  /// Up to k results sorted by (Euclidean distance, record id).
  std::vector<QueryResult> query(std::span<const float> v, std::size_t k, std::size_t ef) const {
    if (v.size() != cfg_.dim) {
      throw std::invalid_argument("AnnIndex::query: dimension " + std::to_string(v.size()) + ", expected " +
                                  std::to_string(cfg_.dim));
    }
    if (k == 0) throw std::invalid_argument("AnnIndex::query: k must be >= 1");
    if (empty()) return {};
    const float* q = v.data();
    Candidate ep{dist(q, entry_), entry_};
    for (int l = max_level_; l > 0; --l) ep = greedy(q, ep, l);
    auto found = search_layer(q, {ep}, std::max(ef, k), 0, kNone);
    std::vector<QueryResult> out;
    out.reserve(found.size());
    for (const auto& c : found) out.push_back({ids_[c.second], detail::l2_exact(q, point(c.second), cfg_.dim)});
    detail::sort_results(out);
    if (out.size() > k) out.resize(k);
    return out;
  }

  // "MIDX" index file.
  static constexpr std::uint32_t kFormatVersion = 1;

  void save(std::ostream& os) const {
    io::put_magic(os, "MIDX");
    io::put<std::uint32_t>(os, kFormatVersion);
    io::put<std::uint64_t>(os, cfg_.dim);
    io::put<std::uint64_t>(os, cfg_.max_neighbors);
    io::put<std::uint64_t>(os, cfg_.ef_construction);
    io::put<std::uint64_t>(os, cfg_.ef_search);
    io::put<std::uint64_t>(os, cfg_.seed);
    std::ostringstream rs;
    rs << rng_;
    const std::string rng_state = rs.str();
    io::put<std::uint64_t>(os, rng_state.size());
    os.write(rng_state.data(), static_cast<std::streamsize>(rng_state.size()));
    io::put<std::uint64_t>(os, ids_.size());
    io::put<std::int32_t>(os, max_level_);
    io::put<std::uint32_t>(os, entry_);
    for (std::size_t n = 0; n < ids_.size(); ++n) {
      io::put<std::uint64_t>(os, ids_[n]);
      io::put_array<float>(os, std::span<const float>(point(static_cast<std::uint32_t>(n)), cfg_.dim));
      io::put<std::uint32_t>(os, static_cast<std::uint32_t>(links_[n].size()));
      for (const auto& lv : links_[n]) {
        io::put<std::uint32_t>(os, static_cast<std::uint32_t>(lv.size()));
        io::put_array<std::uint32_t>(os, std::span<const std::uint32_t>(lv));
      }
    }
  }

  static AnnIndex load(std::istream& is) {
    io::expect_magic(is, "MIDX");
    const auto version = io::get<std::uint32_t>(is);
    if (version != kFormatVersion) throw std::runtime_error("unsupported index version " + std::to_string(version));
    IndexConfig cfg;
    cfg.dim = io::get<std::uint64_t>(is);
    cfg.max_neighbors = io::get<std::uint64_t>(is);
    cfg.ef_construction = io::get<std::uint64_t>(is);
    cfg.ef_search = io::get<std::uint64_t>(is);
    cfg.seed = io::get<std::uint64_t>(is);
    AnnIndex idx(cfg);
    const auto rng_len = io::get<std::uint64_t>(is);
    std::string rng_state(rng_len, '\0');
    is.read(rng_state.data(), static_cast<std::streamsize>(rng_len));
    std::istringstream(rng_state) >> idx.rng_;
    const auto n = io::get<std::uint64_t>(is);
    idx.max_level_ = io::get<std::int32_t>(is);
    idx.entry_ = io::get<std::uint32_t>(is);
    idx.ids_.reserve(n);
    idx.data_.reserve(n * cfg.dim);
    idx.links_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto id = io::get<std::uint64_t>(is);
      idx.ids_.push_back(id);
      idx.lookup_.emplace(id, static_cast<std::uint32_t>(i));
      auto v = io::get_array<float>(is, cfg.dim);
      idx.data_.insert(idx.data_.end(), v.begin(), v.end());
      const auto levels = io::get<std::uint32_t>(is);
      idx.links_[i].resize(levels);
      for (auto& lv : idx.links_[i]) lv = io::get_array<std::uint32_t>(is, io::get<std::uint32_t>(is));
    }
    return idx;
  }

  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write index " + path);
    save(os);
  }
  static AnnIndex load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot read index " + path);
    return load(is);
  }

 private:
  using Candidate = std::pair<float, std::uint32_t>;  // (squared distance, node)
  static constexpr std::uint32_t kNone = std::numeric_limits<std::uint32_t>::max();

  const float* point(std::uint32_t n) const { return data_.data() + static_cast<std::size_t>(n) * cfg_.dim; }
  float dist(const float* q, std::uint32_t n) const { return detail::l2_squared(q, point(n), cfg_.dim); }

  Candidate greedy(const float* q, Candidate cur, int level) const {
    bool changed = true;
    while (changed) {
      changed = false;
      for (auto nb : links_[cur.second][static_cast<std::size_t>(level)]) {
        Candidate c{dist(q, nb), nb};
        if (c < cur) {
          cur = c;
          changed = true;
        }
      }
    }
    return cur;
  }

  /// Best `ef` candidates reachable at `level`, ascending. `skip` is excluded
  /// from traversal (the node being inserted).
  std::vector<Candidate> search_layer(const float* q, const std::vector<Candidate>& entry, std::size_t ef, int level,
                                      std::uint32_t skip) const {
    std::vector<std::uint8_t> visited(ids_.size(), 0);
    if (skip != kNone) visited[skip] = 1;
    std::priority_queue<Candidate, std::vector<Candidate>, std::greater<>> frontier;
    std::priority_queue<Candidate> best;
    for (const auto& e : entry) {
      if (visited[e.second]) continue;
      visited[e.second] = 1;
      frontier.push(e);
      best.push(e);
    }
    while (best.size() > ef) best.pop();
    while (!frontier.empty()) {
      const Candidate c = frontier.top();
      if (best.size() >= ef && c > best.top()) break;
      frontier.pop();
      for (auto nb : links_[c.second][static_cast<std::size_t>(level)]) {
        if (visited[nb]) continue;
        visited[nb] = 1;
        Candidate n{dist(q, nb), nb};
        if (best.size() < ef || n < best.top()) {
          frontier.push(n);
          best.push(n);
          if (best.size() > ef) best.pop();
        }
      }
    }
    std::vector<Candidate> out(best.size());
    for (std::size_t i = out.size(); i-- > 0;) {
      out[i] = best.top();
      best.pop();
    }
    return out;
  }

  /// Diversity heuristic: keep a candidate only if it is closer to the base
  /// point than to every neighbour already kept. `sorted` is ascending.
  std::vector<Candidate> select_neighbors(const std::vector<Candidate>& sorted, std::size_t m) const {
    std::vector<Candidate> kept;
    for (const auto& c : sorted) {
      if (kept.size() >= m) break;
      bool good = true;
      for (const auto& k : kept) {
        if (detail::l2_squared(point(c.second), point(k.second), cfg_.dim) < c.first) {
          good = false;
          break;
        }
      }
      if (good) kept.push_back(c);
    }
    return kept;
  }

  void connect(std::uint32_t from, std::uint32_t to, int level) {
    auto& lst = links_[from][static_cast<std::size_t>(level)];
    lst.push_back(to);
    const std::size_t cap = max_degree(level);
    if (lst.size() <= cap) return;
    std::vector<Candidate> cands;
    cands.reserve(lst.size());
    const float* base = point(from);
    for (auto n : lst) cands.push_back({dist(base, n), n});
    std::sort(cands.begin(), cands.end());
    auto kept = select_neighbors(cands, cap);
    lst.clear();
    for (const auto& c : kept) lst.push_back(c.second);
  }

  IndexConfig cfg_;
  std::mt19937_64 rng_;
  double level_mult_;
  std::vector<float> data_;
  std::vector<std::uint64_t> ids_;
  std::unordered_map<std::uint64_t, std::uint32_t> lookup_;
  std::vector<std::vector<std::vector<std::uint32_t>>> links_;  // node -> level -> neighbours
  int max_level_ = -1;
  std::uint32_t entry_ = 0;
};

}  // namespace memoattn
