#pragma once

// Online inference with per-layer APM memoization.
//
// For each batch and layer: if the layer is enabled (always, or by the cost
// model when selective), every sequence's layer-input hidden state is embedded
// and looked up in the layer's index. Sequences whose nearest record is
// similar enough take the memoized attention path with APMs mapped from the
// store; the rest run full attention.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <istream>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "memoattn/ann_index.hpp"
#include "memoattn/apm_store.hpp"
#include "memoattn/corpus.hpp"
#include "memoattn/embedder.hpp"
#include "memoattn/model.hpp"
#include "memoattn/profile.hpp"
#include "memoattn/tensor.hpp"

namespace memoattn {

using Clock = std::chrono::steady_clock;

inline double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

enum class MemoLevel { conservative, moderate, aggressive, custom };

inline std::string_view to_string(MemoLevel l) {
  switch (l) {
    case MemoLevel::conservative: return "conservative";
    case MemoLevel::moderate: return "moderate";
    case MemoLevel::aggressive: return "aggressive";
    case MemoLevel::custom: return "custom";
  }
  return "custom";
}

inline MemoLevel parse_level(std::string_view s) {
  if (s == "conservative") return MemoLevel::conservative;
  if (s == "moderate") return MemoLevel::moderate;
  if (s == "aggressive") return MemoLevel::aggressive;
  if (s == "custom") return MemoLevel::custom;
  throw std::invalid_argument("unknown memoization level '" + std::string(s) + "'");
}

/// Thresholds for the named levels, calibrated per asset set as percentiles
/// of the top-1 predicted similarity.
struct LevelThresholds {
  double conservative = 0.9;
  double moderate = 0.75;
  double aggressive = 0.5;

  double at(MemoLevel l) const {
    switch (l) {
      case MemoLevel::conservative: return conservative;
      case MemoLevel::moderate: return moderate;
      case MemoLevel::aggressive: return aggressive;
      case MemoLevel::custom: break;
    }
    throw std::invalid_argument("LevelThresholds: custom level has no calibrated threshold");
  }
  bool operator==(const LevelThresholds&) const = default;
};

struct MemoConfig {
  double memo_threshold = 1.0;
  MemoLevel level = MemoLevel::custom;
  bool selective = true;
  std::size_t batch_size = 16;
  Scaling scaling = Scaling::linear;

  void validate() const {
    if (!(memo_threshold >= 0.0 && memo_threshold <= 1.0)) {
      throw std::invalid_argument("MemoConfig: threshold must lie in [0, 1]");
    }
    if (batch_size == 0) throw std::invalid_argument("MemoConfig: batch_size must be >= 1");
  }

  /// Config for a named level using calibrated thresholds.
  static MemoConfig for_level(MemoLevel level, const LevelThresholds& t, bool selective = true) {
    MemoConfig c;
    c.level = level;
    c.memo_threshold = t.at(level);
    c.selective = selective;
    return c;
  }
};

struct Hit {
  std::uint64_t record_id = 0;
  double predicted_sim = 0.0;
  bool operator==(const Hit&) const = default;
};
struct Miss {
  bool operator==(const Miss&) const = default;
};
using LookupOutcome = std::variant<Miss, Hit>;

inline bool is_hit(const LookupOutcome& o) { return std::holds_alternative<Hit>(o); }

/// Strict gate; threshold 0 accepts any retrieved record.
inline bool passes_gate(double predicted_sim, double threshold) {
  return threshold <= 0.0 || predicted_sim > threshold;
}

/// Everything needed to memoize one layer.
struct LayerAssets {
  Embedder embedder;
  AnnIndex index;
  ApmStore store;
};

struct LayerCounters {
  std::uint64_t sequences = 0;  // sequences that passed through the layer
  std::uint64_t attempted = 0;  // sequences looked up
  std::uint64_t hits = 0;
  std::uint64_t misses = 0;
  std::uint64_t embed_calls = 0;
  std::uint64_t search_calls = 0;
  std::uint64_t gather_calls = 0;
  std::uint64_t batches_enabled = 0;
  std::uint64_t batches_skipped = 0;
  double embed_ms = 0.0;
  double search_ms = 0.0;
  double gather_ms = 0.0;
  double attention_ms = 0.0;
  double other_ms = 0.0;  // post-attention block

  double alpha() const { return sequences ? static_cast<double>(hits) / static_cast<double>(sequences) : 0.0; }
  double overhead_ms() const { return embed_ms + search_ms + gather_ms; }

  LayerCounters& operator+=(const LayerCounters& o) {
    sequences += o.sequences, attempted += o.attempted, hits += o.hits, misses += o.misses;
    embed_calls += o.embed_calls, search_calls += o.search_calls, gather_calls += o.gather_calls;
    batches_enabled += o.batches_enabled, batches_skipped += o.batches_skipped;
    embed_ms += o.embed_ms, search_ms += o.search_ms, gather_ms += o.gather_ms;
    attention_ms += o.attention_ms, other_ms += o.other_ms;
    return *this;
  }
};

struct HitRecord {
  std::uint64_t sequence = 0;
  std::size_t layer = 0;
  std::uint64_t record_id = 0;
  double predicted_sim = 0.0;
  bool operator==(const HitRecord&) const = default;
};

/// One line of the run report: one layer of one batch.
struct BatchLayerRow {
  std::size_t batch = 0;
  std::size_t layer = 0;
  std::size_t sequences = 0;
  bool enabled = false;
  std::uint64_t hits = 0;
  double alpha = 0.0;
  double embed_ms = 0.0, search_ms = 0.0, gather_ms = 0.0, attention_ms = 0.0;
  double deviation = std::numeric_limits<double>::quiet_NaN();  // filled when a baseline is supplied
};

struct InferenceStats {
  std::vector<LayerCounters> layers;
  std::vector<BatchLayerRow> rows;
  std::vector<HitRecord> hit_log;
  std::uint64_t sequences = 0;
  double embed_tokens_ms = 0.0;
  double head_ms = 0.0;
  double total_ms = 0.0;

  /// Memoization rate over all layers, M / (N x E).
  double overall_alpha() const {
    std::uint64_t h = 0;
    for (const auto& l : layers) h += l.hits;
    return sequences && !layers.empty()
               ? static_cast<double>(h) / static_cast<double>(sequences * layers.size())
               : 0.0;
  }
  std::uint64_t attempted_lookups() const {
    std::uint64_t n = 0;
    for (const auto& l : layers) n += l.attempted;
    return n;
  }
};

struct InferenceResult {
  std::vector<std::uint32_t> predictions;
  std::vector<std::vector<float>> logits;
  InferenceStats stats;
};

struct BaselineTimings {
  double embed_tokens_ms = 0.0;
  std::vector<double> layer_ms;           // attention + post-attention, per layer
  std::vector<double> attention_ms;       // attention only, per layer
  double head_ms = 0.0;
  double total_ms = 0.0;
};

struct BaselineResult {
  std::vector<std::uint32_t> predictions;
  std::vector<std::vector<float>> logits;
  BaselineTimings timings;
};

/// Relative L2 distance ||a - b|| / ||b||.
inline double relative_l2(std::span<const float> a, std::span<const float> b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    num += d * d;
    den += static_cast<double>(b[i]) * b[i];
  }
  if (den == 0.0) return num == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return std::sqrt(num / den);
}

inline double mean_logit_deviation(const std::vector<std::vector<float>>& run,
                                   const std::vector<std::vector<float>>& baseline) {
  if (run.size() != baseline.size() || run.empty()) throw std::invalid_argument("deviation: result sizes differ");
  double acc = 0.0;
  for (std::size_t i = 0; i < run.size(); ++i) acc += relative_l2(run[i], baseline[i]);
  return acc / static_cast<double>(run.size());
}

inline double accuracy(const std::vector<std::uint32_t>& predictions, const std::vector<TokenSequence>& corpus) {
  if (predictions.size() != corpus.size() || corpus.empty()) throw std::invalid_argument("accuracy: size mismatch");
  std::size_t ok = 0;
  for (std::size_t i = 0; i < corpus.size(); ++i) ok += predictions[i] == corpus[i].label;
  return static_cast<double>(ok) / static_cast<double>(corpus.size());
}

/// Computation-only inference; the comparator for every speedup and deviation.
/// Unmemoized inference with the same batch-major, layer-by-layer loop as
/// run_inference, so the two differ only in memoization.
inline BaselineResult run_baseline(const ToyTransformer& model, const std::vector<TokenSequence>& corpus,
                                   std::size_t batch_size = 16) {
  if (batch_size == 0) throw std::invalid_argument("run_baseline: batch_size must be >= 1");
  BaselineResult res;
  auto& t = res.timings;
  t.layer_ms.assign(model.num_layers(), 0.0);
  t.attention_ms.assign(model.num_layers(), 0.0);
  res.predictions.reserve(corpus.size());
  res.logits.reserve(corpus.size());
  const auto t_start = Clock::now();
  for (std::size_t start = 0; start < corpus.size(); start += batch_size) {
    const std::size_t end = std::min(corpus.size(), start + batch_size);
    std::vector<HiddenState> xs;
    xs.reserve(end - start);
    auto t0 = Clock::now();
    for (std::size_t i = start; i < end; ++i) xs.push_back(model.embed_tokens(corpus[i]));
    t.embed_tokens_ms += ms_since(t0);
    std::vector<Matrix> attn(xs.size());
    for (std::size_t l = 0; l < model.num_layers(); ++l) {
      t0 = Clock::now();
      for (std::size_t i = 0; i < xs.size(); ++i) attn[i] = attention_full(xs[i], model.layer(l)).output;
      const double a = ms_since(t0);
      for (std::size_t i = 0; i < xs.size(); ++i) xs[i] = model.post_attention(l, xs[i], attn[i]);
      t.attention_ms[l] += a;
      t.layer_ms[l] += ms_since(t0);
    }
    t0 = Clock::now();
    for (const auto& x : xs) {
      auto z = model.logits(x);
      res.predictions.push_back(ToyTransformer::argmax(z));
      res.logits.push_back(std::move(z));
    }
    t.head_ms += ms_since(t0);
  }
  t.total_ms = ms_since(t_start);
  return res;
}

/// Embeds each hidden state, queries its nearest record and applies the gate.
inline std::vector<LookupOutcome> layer_lookup(const std::vector<HiddenState>& hidden_batch, const LayerAssets& assets,
                                               double threshold, LayerCounters* counters = nullptr) {
  if (hidden_batch.empty()) throw std::invalid_argument("layer_lookup: empty batch");
  if (assets.embedder.output_dim != assets.index.config().dim) {
    throw std::invalid_argument("layer_lookup: embedder output " + std::to_string(assets.embedder.output_dim) +
                                " != index dimension " + std::to_string(assets.index.config().dim));
  }
  std::vector<LookupOutcome> out;
  out.reserve(hidden_batch.size());
  for (const auto& hs : hidden_batch) {
    auto t0 = Clock::now();
    const FeatureVector f = assets.embedder.embed(hs);
    if (counters) counters->embed_ms += ms_since(t0), ++counters->embed_calls;
    t0 = Clock::now();
    const auto found = assets.index.query(f, 1);
    if (counters) counters->search_ms += ms_since(t0), ++counters->search_calls;
    if (found.empty()) {
      out.emplace_back(Miss{});
      continue;
    }
    const double sim = similarity_from_distance(found.front().distance);
    if (passes_gate(sim, threshold)) {
      out.emplace_back(Hit{found.front().record_id, sim});
    } else {
      out.emplace_back(Miss{});
    }
  }
  return out;
}

/// Hits take the memoized path with their records mapped from the store in
/// one batch; misses run full attention. Output order follows the input.
inline std::vector<Matrix> mixed_attention(const LayerWeights& w, const std::vector<HiddenState>& hidden_batch,
                                           std::vector<LookupOutcome>& outcomes, const ApmStore& store,
                                           LayerCounters* counters = nullptr) {
  if (outcomes.size() != hidden_batch.size()) throw std::invalid_argument("mixed_attention: outcomes not aligned");
  std::vector<Matrix> out(hidden_batch.size());

  // Records that cannot serve their sequence's shape are demoted to misses.
  std::map<std::size_t, std::vector<std::size_t>> hits_by_len;
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    const Hit* h = std::get_if<Hit>(&outcomes[i]);
    if (!h) continue;
    if (!store.contains(h->record_id)) {
      throw std::runtime_error("mixed_attention: index returned record " + std::to_string(h->record_id) +
                               " missing from the store");
    }
    const auto& e = store.entry(h->record_id);
    if (e.num_heads != w.num_heads || e.seq_len != hidden_batch[i].rows()) {
      outcomes[i] = Miss{};
      continue;
    }
    hits_by_len[e.seq_len].push_back(i);
  }

  for (const auto& [len, members] : hits_by_len) {
    std::vector<std::uint64_t> ids;
    ids.reserve(members.size());
    for (auto i : members) ids.push_back(std::get<Hit>(outcomes[i]).record_id);
    auto t0 = Clock::now();
    MappedBatch batch = store.gather_mapped(ids);
    if (counters) counters->gather_ms += ms_since(t0), ++counters->gather_calls;
    t0 = Clock::now();
    for (std::size_t j = 0; j < members.size(); ++j) {
      out[members[j]] = attention_memoized(hidden_batch[members[j]], w, batch.record(j));
    }
    if (counters) counters->attention_ms += ms_since(t0);
    t0 = Clock::now();
    release(std::move(batch));
    if (counters) counters->gather_ms += ms_since(t0);
  }

  const auto t0 = Clock::now();
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    if (!is_hit(outcomes[i])) out[i] = attention_full(hidden_batch[i], w).output;
  }
  if (counters) counters->attention_ms += ms_since(t0);
  return out;
}

struct EngineAssets {
  std::vector<LayerAssets> layers;
  std::vector<LayerProfile> profiles;  // one per layer
  LevelThresholds levels;

  const LayerProfile* profile_for(std::size_t layer) const {
    for (const auto& p : profiles) {
      if (p.layer == layer) return &p;
    }
    return nullptr;
  }
};

/// Whether a batch of `tokens` tokens should attempt memoization at `layer`.
inline bool layer_enabled(const EngineAssets& assets, std::size_t layer, const MemoConfig& cfg,
                          std::uint64_t tokens, std::size_t seq_len) {
  if (!cfg.selective) return true;
  const LayerProfile* p = assets.profile_for(layer);
  if (!p) {
    static bool logged = false;
    if (!logged) {
      std::cerr << "memoattn: no profile for layer " << layer << "; computing attention without memoization\n";
      logged = true;
    }
    return false;
  }
  return decide_layer(*p, estimate(*p, tokens, cfg.scaling, seq_len));
}

/// Memoized inference over `corpus`. When `baseline` is given, per-batch
/// logit deviations are recorded in the report rows.
inline InferenceResult run_inference(const ToyTransformer& model, const std::vector<TokenSequence>& corpus,
                                     const EngineAssets& assets, const MemoConfig& cfg,
                                     const BaselineResult* baseline = nullptr) {
  cfg.validate();
  if (assets.layers.size() != model.num_layers()) {
    throw std::invalid_argument("run_inference: assets for " + std::to_string(assets.layers.size()) +
                                " layers, model has " + std::to_string(model.num_layers()));
  }
  if (baseline && baseline->logits.size() != corpus.size()) {
    throw std::invalid_argument("run_inference: baseline does not match corpus");
  }
  InferenceResult res;
  auto& stats = res.stats;
  stats.layers.assign(model.num_layers(), {});
  stats.sequences = corpus.size();
  res.predictions.reserve(corpus.size());
  res.logits.reserve(corpus.size());

  const auto t_start = Clock::now();
  for (std::size_t start = 0, batch_no = 0; start < corpus.size(); start += cfg.batch_size, ++batch_no) {
    const std::size_t end = std::min(corpus.size(), start + cfg.batch_size);
    std::vector<HiddenState> xs;
    xs.reserve(end - start);
    std::uint64_t tokens = 0;
    auto t0 = Clock::now();
    for (std::size_t i = start; i < end; ++i) {
      xs.push_back(model.embed_tokens(corpus[i]));
      tokens += corpus[i].tokens.size();
    }
    stats.embed_tokens_ms += ms_since(t0);
    const std::size_t seq_len = xs.front().rows();

    for (std::size_t l = 0; l < model.num_layers(); ++l) {
      LayerCounters c;
      c.sequences = xs.size();
      BatchLayerRow row{batch_no, l, xs.size()};
      std::vector<Matrix> attn;
      if (layer_enabled(assets, l, cfg, tokens, seq_len)) {
        row.enabled = true;
        ++c.batches_enabled;
        c.attempted = xs.size();
        auto outcomes = layer_lookup(xs, assets.layers[l], cfg.memo_threshold, &c);
        attn = mixed_attention(model.layer(l), xs, outcomes, assets.layers[l].store, &c);
        for (std::size_t i = 0; i < outcomes.size(); ++i) {
          if (const Hit* h = std::get_if<Hit>(&outcomes[i])) {
            ++c.hits;
            stats.hit_log.push_back({start + i, l, h->record_id, h->predicted_sim});
          } else {
            ++c.misses;
          }
        }
      } else {
        ++c.batches_skipped;
        t0 = Clock::now();
        attn.reserve(xs.size());
        for (const auto& x : xs) attn.push_back(attention_full(x, model.layer(l)).output);
        c.attention_ms += ms_since(t0);
      }
      t0 = Clock::now();
      for (std::size_t i = 0; i < xs.size(); ++i) xs[i] = model.post_attention(l, xs[i], attn[i]);
      c.other_ms += ms_since(t0);

      row.hits = c.hits;
      row.alpha = c.alpha();
      row.embed_ms = c.embed_ms, row.search_ms = c.search_ms, row.gather_ms = c.gather_ms;
      row.attention_ms = c.attention_ms;
      stats.layers[l] += c;
      stats.rows.push_back(row);
    }

    t0 = Clock::now();
    for (std::size_t i = 0; i < xs.size(); ++i) {
      auto z = model.logits(xs[i]);
      res.predictions.push_back(ToyTransformer::argmax(z));
      res.logits.push_back(std::move(z));
    }
    stats.head_ms += ms_since(t0);

    if (baseline) {
      double dev = 0.0;
      for (std::size_t i = start; i < end; ++i) dev += relative_l2(res.logits[i], baseline->logits[i]);
      dev /= static_cast<double>(end - start);
      for (auto it = stats.rows.end() - static_cast<std::ptrdiff_t>(model.num_layers()); it != stats.rows.end(); ++it) {
        it->deviation = dev;
      }
    }
  }
  stats.total_ms = ms_since(t_start);
  return res;
}

struct PairedTiming {
  double a_ms = 0.0;
  double b_ms = 0.0;
  double ratio() const { return b_ms > 0.0 ? a_ms / b_ms : 0.0; }
};

/// Wall time of `a` and `b` over `corpus`, alternated batch by batch with the
/// order flipped each batch, summed over `reps` passes after one warm-up pass.
/// Slow drifts in machine speed then fall on both sides equally.
inline PairedTiming interleaved_wall_time(const std::vector<TokenSequence>& corpus, std::size_t batch_size, int reps,
                                          const std::function<double(const std::vector<TokenSequence>&)>& a,
                                          const std::function<double(const std::vector<TokenSequence>&)>& b) {
  if (batch_size == 0) throw std::invalid_argument("interleaved_wall_time: batch_size must be >= 1");
  PairedTiming t;
  if (corpus.empty()) return t;
  a(corpus), b(corpus);
  for (int r = 0; r < std::max(1, reps); ++r) {
    for (std::size_t start = 0, k = 0; start < corpus.size(); start += batch_size, ++k) {
      const std::vector<TokenSequence> chunk(corpus.begin() + static_cast<std::ptrdiff_t>(start),
                                             corpus.begin() + static_cast<std::ptrdiff_t>(std::min(corpus.size(), start + batch_size)));
      if ((k + static_cast<std::size_t>(r)) % 2 == 0) {
        t.a_ms += a(chunk);
        t.b_ms += b(chunk);
      } else {
        t.b_ms += b(chunk);
        t.a_ms += a(chunk);
      }
    }
  }
  return t;
}

// Run report: tab-separated, one row per (batch, layer).
inline constexpr std::string_view kRunReportHeader = "# memoattn-run-report v1";
inline constexpr std::string_view kRunReportColumns =
    "batch\tlayer\tsequences\tenabled\thits\talpha\tembed_ms\tsearch_ms\tgather_ms\tattention_ms\tdeviation";

inline void write_run_report(std::ostream& os, const InferenceStats& stats) {
  os << kRunReportHeader << '\n' << kRunReportColumns << '\n';
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const auto& r : stats.rows) {
    os << r.batch << '\t' << r.layer << '\t' << r.sequences << '\t' << (r.enabled ? 1 : 0) << '\t' << r.hits << '\t'
       << r.alpha << '\t' << r.embed_ms << '\t' << r.search_ms << '\t' << r.gather_ms << '\t' << r.attention_ms
       << '\t';
    if (std::isnan(r.deviation)) {
      os << "nan";
    } else {
      os << r.deviation;
    }
    os << '\n';
  }
}

inline std::vector<BatchLayerRow> read_run_report(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kRunReportHeader) throw std::runtime_error("run report: unknown header");
  if (!std::getline(is, line) || line != kRunReportColumns) throw std::runtime_error("run report: unexpected columns");
  std::vector<BatchLayerRow> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    BatchLayerRow r;
    int enabled = 0;
    std::string dev;
    if (!(row >> r.batch >> r.layer >> r.sequences >> enabled >> r.hits >> r.alpha >> r.embed_ms >> r.search_ms >>
          r.gather_ms >> r.attention_ms >> dev)) {
      throw std::runtime_error("run report: malformed row: " + line);
    }
    r.enabled = enabled != 0;
    r.deviation = dev == "nan" ? std::numeric_limits<double>::quiet_NaN() : std::stod(dev);
    out.push_back(r);
  }
  return out;
}

// Hit log: one row per memoized (sequence, layer).
inline constexpr std::string_view kHitLogHeader = "# memoattn-hit-log v1";
inline constexpr std::string_view kHitLogColumns = "sequence\tlayer\trecord_id\tpredicted_sim";

inline void write_hit_log(std::ostream& os, const std::vector<HitRecord>& log) {
  os << kHitLogHeader << '\n' << kHitLogColumns << '\n';
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const auto& h : log) os << h.sequence << '\t' << h.layer << '\t' << h.record_id << '\t' << h.predicted_sim << '\n';
}

inline std::vector<HitRecord> read_hit_log(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kHitLogHeader) throw std::runtime_error("hit log: unknown header");
  if (!std::getline(is, line) || line != kHitLogColumns) throw std::runtime_error("hit log: unexpected columns");
  std::vector<HitRecord> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    HitRecord h;
    if (!(row >> h.sequence >> h.layer >> h.record_id >> h.predicted_sim)) {
      throw std::runtime_error("hit log: malformed row: " + line);
    }
    out.push_back(h);
  }
  return out;
}

}  // namespace memoattn
