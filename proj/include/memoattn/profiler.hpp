#pragma once

// Offline pipeline: harvest (hidden state, APM) pairs per layer into stores,
// train one embedder and index per layer, calibrate the memoization levels,
// and measure the per-layer profiles that drive selective memoization.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "memoattn/ann_index.hpp"
#include "memoattn/apm_store.hpp"
#include "memoattn/corpus.hpp"
#include "memoattn/embedder.hpp"
#include "memoattn/engine.hpp"
#include "memoattn/model.hpp"
#include "memoattn/profile.hpp"
#include "memoattn/similarity.hpp"

namespace memoattn {

struct Harvest {
  std::vector<std::uint64_t> ids;                 // record id of each sequence
  std::vector<std::vector<HiddenState>> hidden;   // [layer][sequence] layer-input hidden states
  std::vector<std::vector<float>> pooled_final;   // mean-pooled final hidden state per sequence
};

/// Runs the model over `corpus`, storing every layer's APMs as record
/// `first_id + i` in `stores[layer]`.
inline Harvest harvest(const ToyTransformer& model, const std::vector<TokenSequence>& corpus,
                       std::vector<ApmStore>& stores, std::uint64_t first_id = 0) {
  if (stores.size() != model.num_layers()) {
    throw std::invalid_argument("harvest: need one store per layer (" + std::to_string(model.num_layers()) + ")");
  }
  Harvest h;
  h.hidden.assign(model.num_layers(), {});
  for (auto& v : h.hidden) v.reserve(corpus.size());
  h.ids.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const std::uint64_t id = first_id + i;
    const HiddenState out = model.forward(corpus[i], [&](std::size_t l, const HiddenState& x, const AttentionResult& a) {
      stores[l].put(id, a.apms);
      h.hidden[l].push_back(x);
    });
    h.ids.push_back(id);
    h.pooled_final.push_back(ToyTransformer::mean_pool(out));
  }
  for (auto& s : stores) s.flush();
  return h;
}

struct LayerBuildReport {
  std::size_t layer = 0;
  std::size_t records = 0;
  std::uint64_t db_bytes = 0;
  std::size_t training_pairs = 0;
  double train_ms = 0.0;
  double index_ms = 0.0;
  double initial_loss = 0.0;
  double final_loss = 0.0;
};

struct LayerBuildOptions {
  EmbedderConfig embedder;
  IndexConfig index;
  std::size_t pairs_per_anchor = 8;
  std::uint64_t pair_seed = 5;
};

/// Trains the layer's embedder on sampled record pairs and indexes every
/// record's feature vector.
inline LayerBuildReport build_layer_assets(LayerAssets& assets, const std::vector<HiddenState>& hidden,
                                           const std::vector<std::uint64_t>& ids, LayerBuildOptions opts,
                                           std::size_t layer = 0) {
  if (hidden.size() != ids.size() || hidden.size() < 2) {
    throw std::invalid_argument("build_layer_assets: need at least two records with ids");
  }
  LayerBuildReport rep;
  rep.layer = layer;
  rep.records = hidden.size();

  const ApmStore& store = assets.store;
  auto gt = [&](std::size_t a, std::size_t b) {
    const auto& ea = store.entry(ids[a]);
    const auto& eb = store.entry(ids[b]);
    if (ea.num_heads != eb.num_heads || ea.seq_len != eb.seq_len) return 0.0;
    const auto pa = store.read_payload(ids[a]);
    const auto pb = store.read_payload(ids[b]);
    return std::clamp(similarity_multihead_unchecked(pa, pb, ea.num_heads, ea.seq_len), 0.0, 1.0);
  };
  PairDataset data;
  data.hidden = hidden;
  data.pairs = pair_sampler(hidden.size(), opts.pairs_per_anchor, opts.pair_seed + layer, gt);
  rep.training_pairs = data.pairs.size();

  opts.embedder.input_dim = hidden.front().cols();
  opts.embedder.seed += layer;
  TrainResult tr = train(opts.embedder, data);
  assets.embedder = std::move(tr.embedder);
  rep.train_ms = tr.train_ms;
  rep.initial_loss = tr.loss_curve.front();
  rep.final_loss = tr.loss_curve.back();

  const auto t0 = Clock::now();
  opts.index.dim = assets.embedder.output_dim;
  assets.index = AnnIndex(opts.index);
  for (std::size_t i = 0; i < hidden.size(); ++i) assets.index.insert(ids[i], assets.embedder.embed(hidden[i]));
  rep.index_ms = ms_since(t0);
  rep.db_bytes = store.total_bytes();
  return rep;
}

/// Linear-interpolated percentile (q in [0, 100]) of `values`.
inline double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("percentile: no values");
  std::sort(values.begin(), values.end());
  const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

/// Top-1 predicted similarity of every (sequence, layer) on a computation-only
/// pass, pooled over layers.
inline std::vector<double> top1_similarities(const ToyTransformer& model, const std::vector<TokenSequence>& corpus,
                                             const EngineAssets& assets) {
  std::vector<double> sims;
  sims.reserve(corpus.size() * model.num_layers());
  for (const auto& seq : corpus) {
    model.forward(seq, [&](std::size_t l, const HiddenState& x, const AttentionResult&) {
      const auto& la = assets.layers.at(l);
      if (la.index.empty()) return;
      const auto r = la.index.query(la.embedder.embed(x), 1);
      sims.push_back(similarity_from_distance(r.front().distance));
    });
  }
  return sims;
}

/// Level thresholds: 90th, 75th and 50th percentiles of the top-1 predicted
/// similarity on `corpus`.
inline LevelThresholds calibrate_levels(const ToyTransformer& model, const std::vector<TokenSequence>& corpus,
                                        const EngineAssets& assets) {
  const auto sims = top1_similarities(model, corpus, assets);
  if (sims.empty()) return {};
  return {percentile(sims, 90.0), percentile(sims, 75.0), percentile(sims, 50.0)};
}

/// Full-attention time minus memoized-attention time per layer, summed over
/// `corpus`: the part of self-attention a hit removes.
inline std::vector<double> memoizable_window_ms(const ToyTransformer& model, const std::vector<TokenSequence>& corpus) {
  std::vector<double> full(model.num_layers(), 0.0), memo(model.num_layers(), 0.0);
  for (const auto& seq : corpus) {
    HiddenState x = model.embed_tokens(seq);
    for (std::size_t l = 0; l < model.num_layers(); ++l) {
      auto t0 = Clock::now();
      AttentionResult a = attention_full(x, model.layer(l));
      full[l] += ms_since(t0);
      t0 = Clock::now();
      Matrix m = attention_memoized(x, model.layer(l), a.apms);
      memo[l] += ms_since(t0);
      x = model.post_attention(l, x, a.output);
    }
  }
  std::vector<double> out(full.size());
  for (std::size_t l = 0; l < out.size(); ++l) out[l] = std::max(0.0, full[l] - memo[l]);
  return out;
}

/// Per-layer alpha at `threshold` and timing constants, measured over
/// `corpus` with memoization attempted on every layer.
inline std::vector<LayerProfile> measure_profile(const ToyTransformer& model, const std::vector<TokenSequence>& corpus,
                                                 const EngineAssets& assets, double threshold,
                                                 std::size_t batch_size = 16) {
  if (corpus.empty()) throw std::invalid_argument("measure_profile: empty corpus");
  MemoConfig cfg;
  cfg.memo_threshold = threshold;
  cfg.selective = false;
  cfg.batch_size = batch_size;
  const auto run = run_inference(model, corpus, assets, cfg);
  const auto window = memoizable_window_ms(model, corpus);
  std::uint64_t tokens = 0;
  for (const auto& s : corpus) tokens += s.tokens.size();
  std::vector<LayerProfile> out;
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    LayerProfile p;
    p.layer = l;
    p.alpha = run.stats.layers[l].alpha();
    p.t_atn_ms = window[l];
    p.t_overhead_ms = run.stats.layers[l].overhead_ms();
    p.reference_total_tokens = tokens;
    p.reference_seq_len = corpus.front().tokens.size();
    p.threshold = threshold;
    out.push_back(p);
  }
  return out;
}

/// Profiles measured at `threshold`, one per layer, or empty if none match.
inline std::vector<LayerProfile> profiles_at(const std::vector<LayerProfile>& all, double threshold) {
  std::vector<LayerProfile> out;
  for (const auto& p : all) {
    if (std::abs(p.threshold - threshold) <= 1e-12) out.push_back(p);
  }
  return out;
}

// Asset directory layout:
//   model.bin, levels.tsv, profiles.tsv, calibration.corpus,
//   layer_NN/{embedder.bin, index.bin, store/}
inline std::filesystem::path layer_dir(const std::filesystem::path& root, std::size_t layer) {
  char name[32];
  std::snprintf(name, sizeof(name), "layer_%02zu", layer);
  return root / name;
}

inline constexpr std::string_view kLevelsHeader = "# memoattn-levels v1";

inline void save_levels(const std::string& path, const LevelThresholds& t) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << kLevelsHeader << '\n' << std::setprecision(std::numeric_limits<double>::max_digits10);
  os << "conservative\t" << t.conservative << "\nmoderate\t" << t.moderate << "\naggressive\t" << t.aggressive << '\n';
}

inline LevelThresholds load_levels(const std::string& path) {
  std::ifstream is(path);
  std::string line;
  if (!is || !std::getline(is, line) || line != kLevelsHeader) throw std::runtime_error("levels: bad file " + path);
  LevelThresholds t;
  std::string name;
  double v = 0.0;
  while (is >> name >> v) {
    if (name == "conservative") t.conservative = v;
    else if (name == "moderate") t.moderate = v;
    else if (name == "aggressive") t.aggressive = v;
    else throw std::runtime_error("levels: unknown level " + name);
  }
  return t;
}

inline void save_layer_assets(const std::filesystem::path& root, std::size_t layer, const LayerAssets& a) {
  const auto dir = layer_dir(root, layer);
  std::filesystem::create_directories(dir);
  save_embedder((dir / "embedder.bin").string(), a.embedder);
  a.index.save((dir / "index.bin").string());
}

/// Loads model-independent per-layer assets; profiles are selected for
/// `serving_threshold` when given.
inline EngineAssets load_engine_assets(const std::filesystem::path& root, std::size_t num_layers,
                                       std::optional<double> serving_threshold = std::nullopt) {
  EngineAssets a;
  for (std::size_t l = 0; l < num_layers; ++l) {
    const auto dir = layer_dir(root, l);
    LayerAssets la;
    la.embedder = load_embedder((dir / "embedder.bin").string());
    la.index = AnnIndex::load((dir / "index.bin").string());
    la.store = ApmStore::open(dir / "store");
    a.layers.push_back(std::move(la));
  }
  if (std::filesystem::exists(root / "levels.tsv")) a.levels = load_levels((root / "levels.tsv").string());
  if (serving_threshold && std::filesystem::exists(root / "profiles.tsv")) {
    a.profiles = profiles_at(load_profiles((root / "profiles.tsv").string()), *serving_threshold);
  }
  return a;
}

struct BuildOptions {
  LayerBuildOptions layer;
  std::size_t page_size = 0;       // 0: detect
  std::size_t profile_batch_size = 16;
  bool fit_classifier = true;
};

struct BuildReport {
  std::vector<LayerBuildReport> layers;
  LevelThresholds levels;
  std::vector<LayerProfile> profiles;  // measured at every level threshold
  double harvest_ms = 0.0;
  double total_ms = 0.0;
};

/// harvest -> pair sampling -> embedder training -> indexing -> level
/// calibration -> profiling, writing everything under `root`.
inline BuildReport build_assets(ToyTransformer& model, const std::vector<TokenSequence>& train_corpus,
                                const std::vector<TokenSequence>& calibration_corpus,
                                const std::filesystem::path& root, const BuildOptions& opts, EngineAssets* out = nullptr) {
  if (train_corpus.size() < 2) throw std::invalid_argument("build: training corpus needs at least two sequences");
  if (calibration_corpus.empty()) throw std::invalid_argument("build: empty calibration corpus");
  const auto t_start = Clock::now();
  BuildReport rep;
  std::filesystem::create_directories(root);

  std::vector<ApmStore> stores;
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    const auto sdir = layer_dir(root, l) / "store";
    if (std::filesystem::exists(sdir)) std::filesystem::remove_all(sdir);
    stores.push_back(ApmStore::create(sdir, opts.page_size));
  }
  auto t0 = Clock::now();
  Harvest h = harvest(model, train_corpus, stores);
  rep.harvest_ms = ms_since(t0);

  if (opts.fit_classifier) {
    std::vector<std::uint32_t> labels;
    for (const auto& s : train_corpus) labels.push_back(s.label);
    model.fit_classifier(h.pooled_final, labels);
  }
  model.save((root / "model.bin").string());
  save_corpus((root / "calibration.corpus").string(), calibration_corpus);

  EngineAssets assets;
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    LayerAssets la;
    la.store = std::move(stores[l]);
    rep.layers.push_back(build_layer_assets(la, h.hidden[l], h.ids, opts.layer, l));
    save_layer_assets(root, l, la);
    assets.layers.push_back(std::move(la));
  }
  h.hidden.clear();

  rep.levels = calibrate_levels(model, calibration_corpus, assets);
  assets.levels = rep.levels;
  save_levels((root / "levels.tsv").string(), rep.levels);
  for (MemoLevel lv : {MemoLevel::conservative, MemoLevel::moderate, MemoLevel::aggressive}) {
    auto p = measure_profile(model, calibration_corpus, assets, rep.levels.at(lv), opts.profile_batch_size);
    rep.profiles.insert(rep.profiles.end(), p.begin(), p.end());
  }
  save_profiles((root / "profiles.tsv").string(), rep.profiles);
  assets.profiles = profiles_at(rep.profiles, rep.levels.moderate);
  rep.total_ms = ms_since(t_start);
  if (out) *out = std::move(assets);
  return rep;
}

}  // namespace memoattn
