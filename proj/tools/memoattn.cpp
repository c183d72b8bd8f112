// memoattn command-line driver.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>

#include "memoattn/memoattn.hpp"

namespace fs = std::filesystem;
using namespace memoattn;
using nlohmann::json;

namespace {

std::vector<std::string> g_argv;

RunManifest start_manifest(const std::string& command) {
  RunManifest m;
  m.command = command;
  m.argv = g_argv;
  m.versions = format_versions();
  m.timestamps["started"] = utc_now_iso8601();
  return m;
}

void finish_manifest(RunManifest& m, const fs::path& path) {
  m.timestamps["finished"] = utc_now_iso8601();
  fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
  save_manifest(path.string(), m);
  std::cout << "manifest: " << path.string() << '\n';
}

std::string abs_str(const fs::path& p) { return fs::absolute(p).lexically_normal().string(); }

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) throw std::runtime_error(what + " not found: " + p.string());
}

std::ofstream open_out(const fs::path& p) {
  fs::create_directories(p.parent_path().empty() ? fs::path(".") : p.parent_path());
  std::ofstream os(p);
  if (!os) throw std::runtime_error("cannot write " + p.string());
  return os;
}

void print_rule(std::size_t n) { std::cout << std::string(n, '-') << '\n'; }

// gen

struct GenArgs {
  std::string corpus;
  std::string from_text;
  CorpusSpec spec;
  std::size_t skip = 0;
  std::string label_rule = "template";
};

void cmd_gen(const GenArgs& a) {
  auto m = start_manifest("gen");
  std::vector<TokenSequence> corpus;
  if (!a.from_text.empty()) {
    std::ifstream in(a.from_text);
    if (!in) throw std::runtime_error("cannot read text file " + a.from_text);
    corpus = ingest_text(in, a.spec.vocab_size, a.spec.seq_len);
    m.inputs["text"] = abs_str(a.from_text);
  } else {
    CorpusSpec spec = a.spec;
    spec.label_rule = a.label_rule == "parity" ? LabelRule::parity : LabelRule::template_id;
    spec.num_sequences += a.skip;
    corpus = generate(spec);
    corpus.erase(corpus.begin(), corpus.begin() + static_cast<std::ptrdiff_t>(a.skip));
  }
  save_corpus(a.corpus, corpus);
  m.config = {{"vocab_size", a.spec.vocab_size},       {"seq_len", a.spec.seq_len},
              {"num_sequences", a.spec.num_sequences}, {"num_templates", a.spec.num_templates},
              {"mutation_rate", a.spec.mutation_rate}, {"label_rule", a.label_rule},
              {"skip", a.skip}};
  m.seeds["corpus"] = a.spec.seed;
  m.outputs["corpus"] = abs_str(a.corpus);
  std::cout << "wrote " << corpus.size() << " sequences to " << a.corpus << '\n';
  finish_manifest(m, a.corpus + ".manifest.json");
}

// build

struct BuildArgs {
  std::string corpus;
  std::string calib_corpus;
  double calib_fraction = 0.2;
  std::string assets_dir;
  ModelConfig model;
  std::size_t seq_len = 0;
  std::size_t epochs = 20;
  std::size_t pairs_per_anchor = 8;
  std::uint64_t embed_seed = 11;
  std::size_t profile_batch = 16;
};

void cmd_build(const BuildArgs& a) {
  auto m = start_manifest("build");
  require_file(a.corpus, "corpus");
  auto train_corpus = load_corpus(a.corpus);
  std::vector<TokenSequence> calib;
  if (!a.calib_corpus.empty()) {
    require_file(a.calib_corpus, "calibration corpus");
    calib = load_corpus(a.calib_corpus);
    m.inputs["calibration_corpus"] = abs_str(a.calib_corpus);
  } else {
    if (!(a.calib_fraction > 0.0 && a.calib_fraction < 1.0)) throw std::invalid_argument("--calib-fraction must lie in (0, 1)");
    const auto n_calib = std::max<std::size_t>(1, static_cast<std::size_t>(a.calib_fraction * train_corpus.size()));
    if (n_calib >= train_corpus.size()) throw std::invalid_argument("corpus too small to split off a calibration set");
    calib.assign(train_corpus.end() - static_cast<std::ptrdiff_t>(n_calib), train_corpus.end());
    train_corpus.resize(train_corpus.size() - n_calib);
  }
  if (train_corpus.empty()) throw std::invalid_argument("empty training corpus");

  ModelConfig mc = a.model;
  std::size_t longest = 0;
  std::uint32_t max_label = 0, max_token = 0;
  for (const auto* c : {&train_corpus, &calib}) {
    for (const auto& s : *c) {
      longest = std::max(longest, s.tokens.size());
      max_label = std::max(max_label, s.label);
      for (auto t : s.tokens) max_token = std::max(max_token, t);
    }
  }
  mc.max_seq_len = a.seq_len ? a.seq_len : longest;
  if (longest > mc.max_seq_len) throw std::invalid_argument("corpus sequences exceed --seq-len");
  if (max_token >= mc.vocab_size) throw std::invalid_argument("corpus token ids exceed --vocab");
  mc.num_classes = std::max<std::size_t>(mc.num_classes, max_label + 1);
  ToyTransformer model(mc);

  BuildOptions opts;
  opts.layer.embedder.epochs = a.epochs;
  opts.layer.embedder.seed = a.embed_seed;
  opts.layer.pairs_per_anchor = a.pairs_per_anchor;
  opts.profile_batch_size = a.profile_batch;
  const fs::path root = a.assets_dir;
  const auto rep = build_assets(model, train_corpus, calib, root, opts);

  std::cout << "asset summary\n";
  print_rule(96);
  std::printf("%-6s %9s %14s %10s %12s %12s %11s %11s\n", "layer", "records", "db_bytes", "pairs", "train_ms",
              "index_ms", "loss_start", "loss_end");
  std::uint64_t db_total = 0;
  for (const auto& l : rep.layers) {
    std::printf("%-6zu %9zu %14llu %10zu %12.1f %12.1f %11.5f %11.5f\n", l.layer, l.records,
                static_cast<unsigned long long>(l.db_bytes), l.training_pairs, l.train_ms, l.index_ms, l.initial_loss,
                l.final_loss);
    db_total += l.db_bytes;
  }
  print_rule(96);
  std::printf("levels: conservative %.4f  moderate %.4f  aggressive %.4f  (p90/p75/p50 of top-1 predicted similarity)\n",
              rep.levels.conservative, rep.levels.moderate, rep.levels.aggressive);
  std::printf("harvest %.1f ms, total %.1f ms, database %llu bytes\n", rep.harvest_ms, rep.total_ms,
              static_cast<unsigned long long>(db_total));

  m.config = {{"vocab_size", mc.vocab_size},   {"max_seq_len", mc.max_seq_len}, {"hidden_dim", mc.hidden_dim},
              {"num_heads", mc.num_heads},     {"num_layers", mc.num_layers},   {"ffn_dim", mc.ffn_dim},
              {"num_classes", mc.num_classes}, {"qk_gain", mc.qk_gain},         {"epochs", a.epochs},
              {"pairs_per_anchor", a.pairs_per_anchor}, {"calib_fraction", a.calib_fraction},
              {"profile_batch", a.profile_batch}, {"page_size", ApmStore::open(layer_dir(root, 0) / "store").page_size()}};
  m.seeds = {{"model", mc.seed}, {"embedder", a.embed_seed}, {"pairs", opts.layer.pair_seed},
             {"index", opts.layer.index.seed}};
  m.inputs["corpus"] = abs_str(a.corpus);
  m.outputs = {{"assets_dir", abs_str(root)},
               {"records_per_layer", train_corpus.size()},
               {"db_bytes", db_total},
               {"levels", {rep.levels.conservative, rep.levels.moderate, rep.levels.aggressive}}};
  finish_manifest(m, root / "build.manifest.json");
}

// shared by infer and sweep

struct Loaded {
  ToyTransformer model;
  EngineAssets assets;
  std::vector<TokenSequence> corpus;
};

Loaded load_for_inference(const fs::path& root, const std::string& corpus_path) {
  require_file(root / "model.bin", "assets (model.bin)");
  require_file(corpus_path, "corpus");
  Loaded l{ToyTransformer::load((root / "model.bin").string()), {}, load_corpus(corpus_path)};
  l.assets = load_engine_assets(root, l.model.num_layers());
  if (l.corpus.empty()) throw std::invalid_argument("empty corpus");
  return l;
}

/// Profiles for `threshold`: stored ones when the build measured it, otherwise
/// re-measured on the stored calibration corpus.
std::vector<LayerProfile> profiles_for(const fs::path& root, const Loaded& l, double threshold, std::size_t batch,
                                       bool* remeasured) {
  auto p = profiles_at(load_profiles((root / "profiles.tsv").string()), threshold);
  *remeasured = p.size() != l.model.num_layers();
  if (*remeasured) {
    const auto calib = load_corpus((root / "calibration.corpus").string());
    p = measure_profile(l.model, calib, l.assets, threshold, batch);
  }
  return p;
}

double min_total(int reps, const std::function<double()>& run) {
  double best = 1e300;
  for (int i = 0; i < reps; ++i) best = std::min(best, run());
  return best;
}

// infer

struct InferArgs {
  std::string assets_dir;
  std::string corpus;
  std::optional<double> threshold;
  std::string level;
  bool selective = true;
  std::size_t batch_size = 16;
  std::string report_out;
  int reps = 3;
};

void cmd_infer(const InferArgs& a) {
  auto m = start_manifest("infer");
  const fs::path root = a.assets_dir;
  Loaded l = load_for_inference(root, a.corpus);

  MemoConfig cfg;
  cfg.selective = a.selective;
  cfg.batch_size = a.batch_size;
  if (a.threshold) {
    cfg.memo_threshold = *a.threshold;
  } else {
    cfg = MemoConfig::for_level(parse_level(a.level.empty() ? "moderate" : a.level), l.assets.levels, a.selective);
    cfg.batch_size = a.batch_size;
  }
  cfg.validate();
  bool remeasured = false;
  l.assets.profiles = profiles_for(root, l, cfg.memo_threshold, cfg.batch_size, &remeasured);

  const BaselineResult base = run_baseline(l.model, l.corpus, cfg.batch_size);
  const InferenceResult run = run_inference(l.model, l.corpus, l.assets, cfg, &base);
  const int passes = std::max(1, a.reps);
  const PairedTiming t = interleaved_wall_time(
      l.corpus, cfg.batch_size, passes,
      [&](const auto& c) { return run_baseline(l.model, c, cfg.batch_size).timings.total_ms; },
      [&](const auto& c) { return run_inference(l.model, c, l.assets, cfg).stats.total_ms; });
  const double base_ms = t.a_ms / passes, run_ms = t.b_ms / passes;
  const double deviation = mean_logit_deviation(run.logits, base.logits);
  const double acc_base = accuracy(base.predictions, l.corpus), acc_run = accuracy(run.predictions, l.corpus);
  const double speedup = base_ms / run_ms;

  std::printf("level %s, threshold %.4f, selective %s, batch %zu, %zu sequences%s\n",
              std::string(to_string(cfg.level)).c_str(), cfg.memo_threshold, cfg.selective ? "on" : "off",
              cfg.batch_size, l.corpus.size(), remeasured ? " (profile re-measured)" : "");
  std::printf("baseline %.2f ms, memoized %.2f ms, speedup %.3fx\n", base_ms, run_ms, speedup);
  std::printf("accuracy %.4f -> %.4f, mean logit deviation %.5f, overall alpha %.4f\n", acc_base, acc_run, deviation,
              run.stats.overall_alpha());
  std::cout << "stage breakdown (ms)\n";
  print_rule(112);
  std::printf("%-6s %7s %8s %9s %9s %9s %9s %10s %10s %10s\n", "layer", "alpha", "enabled", "hits", "embed", "search",
              "gather", "attention", "other", "baseline");
  json layers = json::array();
  for (std::size_t i = 0; i < run.stats.layers.size(); ++i) {
    const auto& c = run.stats.layers[i];
    std::printf("%-6zu %7.4f %4llu/%-3llu %9llu %9.2f %9.2f %9.2f %10.2f %10.2f %10.2f\n", i, c.alpha(),
                static_cast<unsigned long long>(c.batches_enabled),
                static_cast<unsigned long long>(c.batches_enabled + c.batches_skipped),
                static_cast<unsigned long long>(c.hits), c.embed_ms, c.search_ms, c.gather_ms, c.attention_ms,
                c.other_ms, base.timings.layer_ms[i]);
    layers.push_back({{"layer", i},
                      {"alpha", c.alpha()},
                      {"hits", c.hits},
                      {"attempted", c.attempted},
                      {"batches_enabled", c.batches_enabled},
                      {"embed_ms", c.embed_ms},
                      {"search_ms", c.search_ms},
                      {"gather_ms", c.gather_ms},
                      {"attention_ms", c.attention_ms},
                      {"other_ms", c.other_ms},
                      {"baseline_layer_ms", base.timings.layer_ms[i]},
                      {"baseline_attention_ms", base.timings.attention_ms[i]}});
  }
  print_rule(112);

  const fs::path out = a.report_out.empty() ? root / "run" : fs::path(a.report_out);
  {
    auto os = open_out(out / "run_report.tsv");
    write_run_report(os, run.stats);
  }
  {
    auto os = open_out(out / "hit_log.tsv");
    write_hit_log(os, run.stats.hit_log);
  }
  json summary = {{"threshold", cfg.memo_threshold},
                  {"level", to_string(cfg.level)},
                  {"selective", cfg.selective},
                  {"sequences", l.corpus.size()},
                  {"baseline_ms", base_ms},
                  {"memoized_ms", run_ms},
                  {"speedup", speedup},
                  {"accuracy_baseline", acc_base},
                  {"accuracy_memoized", acc_run},
                  {"deviation", deviation},
                  {"alpha", run.stats.overall_alpha()},
                  {"profile_remeasured", remeasured},
                  {"layers", layers}};
  {
    auto os = open_out(out / "summary.json");
    os << summary.dump(2) << '\n';
  }
  std::cout << "reports: " << out.string() << '\n';

  m.config = {{"threshold", cfg.memo_threshold}, {"level", to_string(cfg.level)}, {"selective", cfg.selective},
              {"batch_size", cfg.batch_size},   {"reps", a.reps}};
  m.inputs = {{"assets_dir", abs_str(root)}, {"corpus", abs_str(a.corpus)}};
  m.outputs = {{"report_dir", abs_str(out)},
               {"alpha", run.stats.overall_alpha()},
               {"hits", run.stats.hit_log.size()},
               {"accuracy", acc_run},
               {"deviation", deviation}};
  finish_manifest(m, out / "infer.manifest.json");
}

// bench-store

struct BenchArgs {
  std::string store;
  bool populate = false;
  std::vector<std::size_t> seq_lens{256, 512};
  std::vector<std::size_t> batches{1, 32, 64};
  std::size_t records = 64;
  int reps = 5;
  std::uint64_t seed = 3;
  std::string report_out;
};

void populate_bench_store(ApmStore& s, const BenchArgs& a) {
  std::mt19937_64 rng(a.seed);
  std::uint64_t next = s.size() ? s.catalog().back().id + 1 : 0;
  for (auto len : a.seq_lens) {
    std::size_t have = 0;
    for (const auto& e : s.catalog()) have += e.seq_len == len && e.num_heads == 1;
    for (; have < a.records; ++have) {
      auto apm = softmax_rows(Matrix::random_normal(len, len, 1.0f, rng));
      s.put(next++, {Apm(std::move(apm))});
    }
  }
  s.flush();
}

void cmd_bench_store(const BenchArgs& a) {
  auto m = start_manifest("bench-store");
  const fs::path dir = a.store;
  if (!fs::exists(dir / "manifest.bin") && !a.populate) {
    throw std::runtime_error("store not found: " + dir.string() + " (use --populate to create one)");
  }
  ApmStore s = a.populate ? ApmStore::create(dir) : ApmStore::open(dir);
  if (a.populate) populate_bench_store(s, a);

  std::vector<BenchRow> rows;
  std::mt19937_64 rng(a.seed + 1);
  for (auto len : a.seq_lens) {
    std::vector<std::uint64_t> pool;
    std::size_t heads = 0;
    for (const auto& e : s.catalog()) {
      if (e.seq_len != len) continue;
      if (heads == 0) heads = e.num_heads;
      if (e.num_heads == heads) pool.push_back(e.id);
    }
    if (pool.empty()) throw std::runtime_error("store has no records of length " + std::to_string(len));
    for (auto batch : a.batches) {
      std::vector<std::uint64_t> ids(batch);
      std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
      for (auto& id : ids) id = pool[pick(rng)];
      {
        auto mapped = s.gather_mapped(ids);
        const auto copied = s.gather_copy(ids);
        for (std::size_t i = 0; i < ids.size(); ++i) {
          const auto x = mapped.record(i), y = copied.record(i);
          if (!std::equal(x.begin(), x.end(), y.begin())) {
            throw std::runtime_error("bench-store: mapped and copied bytes differ for record " + std::to_string(ids[i]));
          }
        }
      }
      BenchRow r{len, batch, 1e300, 1e300};
      for (int k = 0; k < std::max(1, a.reps); ++k) {
        auto t0 = Clock::now();
        release(s.gather_mapped(ids));
        r.mapped_ms = std::min(r.mapped_ms, ms_since(t0));
        t0 = Clock::now();
        { const auto c = s.gather_copy(ids); }
        r.copy_ms = std::min(r.copy_ms, ms_since(t0));
      }
      rows.push_back(r);
    }
  }
  if (!s.remap_supported()) std::cout << "NOTE: page remapping unavailable; mapped column uses the copy fallback\n";
  write_bench_table(std::cout, rows);
  const fs::path out = a.report_out.empty() ? dir : fs::path(a.report_out);
  {
    auto os = open_out(out / "bench_store.tsv");
    write_bench_table(os, rows);
  }
  m.config = {{"seq_lens", a.seq_lens}, {"batches", a.batches}, {"records", a.records}, {"reps", a.reps},
              {"populate", a.populate}, {"page_size", s.page_size()}, {"remap_supported", s.remap_supported()}};
  m.seeds["ids"] = a.seed;
  m.inputs["store"] = abs_str(dir);
  m.outputs["table"] = abs_str(out / "bench_store.tsv");
  finish_manifest(m, out / "bench-store.manifest.json");
}

// reuse-report

struct ReuseArgs {
  std::string hit_log;
  std::string assets_dir;
  std::string report_out;
};

void cmd_reuse_report(const ReuseArgs& a) {
  auto m = start_manifest("reuse-report");
  require_file(a.hit_log, "hit log");
  std::ifstream is(a.hit_log);
  const auto log = read_hit_log(is);
  std::vector<std::vector<std::uint64_t>> catalogs;
  if (!a.assets_dir.empty()) {
    for (std::size_t l = 0; fs::exists(layer_dir(a.assets_dir, l) / "store" / "manifest.bin"); ++l) {
      const auto s = ApmStore::open(layer_dir(a.assets_dir, l) / "store");
      std::vector<std::uint64_t> ids;
      for (const auto& e : s.catalog()) ids.push_back(e.id);
      catalogs.push_back(std::move(ids));
    }
    m.inputs["assets_dir"] = abs_str(a.assets_dir);
  }
  const auto r = reuse_report(log, catalogs);
  write_reuse_histogram(std::cout, r);
  std::size_t used = 0;
  for (const auto& [key, n] : r.counts) used += n > 0;
  std::printf("total hits %llu, records hit %zu of %zu, max reuse %llu, hit records reused <= 2 times: %.1f%%\n",
              static_cast<unsigned long long>(r.total_hits), used, r.counts.size(),
              static_cast<unsigned long long>(r.max_reuse()), 100.0 * r.fraction_hit_records_at_most(2));
  const fs::path out = a.report_out.empty() ? fs::path(a.hit_log).parent_path() : fs::path(a.report_out);
  {
    auto os = open_out(out / "reuse_histogram.tsv");
    write_reuse_histogram(os, r);
  }
  {
    auto os = open_out(out / "reuse_counts.tsv");
    write_reuse_counts(os, r);
  }
  m.inputs["hit_log"] = abs_str(a.hit_log);
  m.outputs = {{"histogram", abs_str(out / "reuse_histogram.tsv")},
               {"counts", abs_str(out / "reuse_counts.tsv")},
               {"total_hits", r.total_hits},
               {"max_reuse", r.max_reuse()}};
  finish_manifest(m, out / "reuse-report.manifest.json");
}

// sweep

struct SweepArgs {
  std::string assets_dir;
  std::string corpus;
  std::string grid = "1,0.99,0.9,0.8,0.5,0";
  bool selective = false;
  std::size_t batch_size = 16;
  std::string report_out;
  int reps = 1;
};

void cmd_sweep(const SweepArgs& a) {
  auto m = start_manifest("sweep");
  const auto grid = parse_grid(a.grid);
  const fs::path root = a.assets_dir;
  Loaded l = load_for_inference(root, a.corpus);
  const BaselineResult base = run_baseline(l.model, l.corpus, a.batch_size);
  std::vector<SweepRow> rows;
  for (double thr : grid) {
    MemoConfig cfg;
    cfg.memo_threshold = thr;
    cfg.selective = a.selective;
    cfg.batch_size = a.batch_size;
    if (a.selective) {
      bool remeasured = false;
      l.assets.profiles = profiles_for(root, l, thr, a.batch_size, &remeasured);
    }
    const InferenceResult run = run_inference(l.model, l.corpus, l.assets, cfg);
    const PairedTiming t = interleaved_wall_time(
        l.corpus, cfg.batch_size, a.reps,
        [&](const auto& c) { return run_baseline(l.model, c, cfg.batch_size).timings.total_ms; },
        [&](const auto& c) { return run_inference(l.model, c, l.assets, cfg).stats.total_ms; });
    rows.push_back({thr, run.stats.overall_alpha(), accuracy(run.predictions, l.corpus),
                    mean_logit_deviation(run.logits, base.logits), t.ratio()});
  }
  write_sweep(std::cout, rows);
  const fs::path out = a.report_out.empty() ? root / "sweep" : fs::path(a.report_out);
  {
    auto os = open_out(out / "sweep.tsv");
    write_sweep(os, rows);
  }
  m.config = {{"grid", grid}, {"selective", a.selective}, {"batch_size", a.batch_size}, {"reps", a.reps}};
  m.inputs = {{"assets_dir", abs_str(root)}, {"corpus", abs_str(a.corpus)}};
  m.outputs["table"] = abs_str(out / "sweep.tsv");
  finish_manifest(m, out / "sweep.manifest.json");
}

}  // namespace

int main(int argc, char** argv) {
  g_argv.assign(argv, argv + argc);
  CLI::App app{"memoattn: attention memoization toolkit"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "Generate a synthetic token corpus");
  g->add_option("--corpus,-o", gen.corpus, "Output corpus path")->required();
  g->add_option("--num-sequences,-n", gen.spec.num_sequences, "Number of sequences")->check(CLI::PositiveNumber);
  g->add_option("--skip", gen.skip, "Drop the first N sequences of the stream (same templates, disjoint samples)");
  g->add_option("--seq-len", gen.spec.seq_len, "Tokens per sequence")->check(CLI::PositiveNumber);
  g->add_option("--templates", gen.spec.num_templates, "Number of template sequences")->check(CLI::PositiveNumber);
  g->add_option("--mutation-rate", gen.spec.mutation_rate, "Per-token resampling probability")
      ->check(CLI::Range(0.0, 1.0));
  g->add_option("--vocab", gen.spec.vocab_size, "Vocabulary size (token 0 is padding)");
  g->add_option("--seed", gen.spec.seed, "Corpus seed");
  g->add_option("--label-rule", gen.label_rule, "template or parity")->check(CLI::IsMember({"template", "parity"}));
  g->add_option("--from-text", gen.from_text, "Tokenize a text file instead (optional 'label<TAB>' prefix per line)")
      ->check(CLI::ExistingFile);

  BuildArgs build;
  auto* b = app.add_subcommand("build", "Harvest APMs, train embedders, build indexes and profiles");
  b->add_option("--corpus", build.corpus, "Training corpus")->required();
  b->add_option("--calib-corpus", build.calib_corpus, "Calibration corpus (default: split off the training corpus)");
  b->add_option("--calib-fraction", build.calib_fraction, "Fraction split off for calibration");
  b->add_option("--assets-dir", build.assets_dir, "Output asset directory")->required();
  b->add_option("--layers", build.model.num_layers, "Transformer layers")->check(CLI::PositiveNumber);
  b->add_option("--heads", build.model.num_heads, "Attention heads")->check(CLI::PositiveNumber);
  b->add_option("--hidden-dim", build.model.hidden_dim, "Hidden width")->check(CLI::PositiveNumber);
  b->add_option("--ffn-dim", build.model.ffn_dim, "Feed-forward width")->check(CLI::PositiveNumber);
  b->add_option("--vocab", build.model.vocab_size, "Vocabulary size");
  b->add_option("--seq-len", build.seq_len, "Maximum sequence length (default: longest in corpus)");
  b->add_option("--seed", build.model.seed, "Model seed");
  b->add_option("--embed-seed", build.embed_seed, "Embedder seed");
  b->add_option("--epochs", build.epochs, "Embedder training epochs")->check(CLI::PositiveNumber);
  b->add_option("--pairs-per-anchor", build.pairs_per_anchor, "Training pairs per record")->check(CLI::PositiveNumber);
  b->add_option("--profile-batch", build.profile_batch, "Batch size for profiling")->check(CLI::PositiveNumber);

  InferArgs infer;
  auto* inf = app.add_subcommand("infer", "Baseline vs memoized inference with a report");
  inf->add_option("--assets-dir", infer.assets_dir, "Asset directory from build")->required();
  inf->add_option("--corpus", infer.corpus, "Inference corpus")->required();
  auto* thr = inf->add_option("--threshold", infer.threshold, "Custom memoization threshold")->check(CLI::Range(0.0, 1.0));
  auto* lvl = inf->add_option("--level", infer.level, "conservative, moderate or aggressive")
                  ->check(CLI::IsMember({"conservative", "moderate", "aggressive"}));
  thr->excludes(lvl);
  inf->add_option("--selective", infer.selective, "Per-layer selective memoization (on/off)");
  inf->add_option("--batch-size", infer.batch_size, "Sequences per batch")->check(CLI::PositiveNumber);
  inf->add_option("--report-out", infer.report_out, "Report directory (default: <assets>/run)");
  inf->add_option("--reps", infer.reps, "Interleaved timing passes")->check(CLI::PositiveNumber);

  BenchArgs bench;
  auto* bs = app.add_subcommand("bench-store", "Time mapped vs copied gathers");
  bs->add_option("--store", bench.store, "Store directory")->required();
  bs->add_flag("--populate", bench.populate, "Create the store and add single-head bench records if missing");
  bs->add_option("--seq-len", bench.seq_lens, "Record sequence lengths")->delimiter(',');
  bs->add_option("--batch-size", bench.batches, "Batch sizes")->delimiter(',');
  bs->add_option("--records", bench.records, "Records per length when populating")->check(CLI::PositiveNumber);
  bs->add_option("--reps", bench.reps, "Timing repetitions (fastest kept)")->check(CLI::PositiveNumber);
  bs->add_option("--seed", bench.seed, "Seed for records and id lists");
  bs->add_option("--report-out", bench.report_out, "Report directory (default: the store)");

  ReuseArgs reuse;
  auto* ru = app.add_subcommand("reuse-report", "Per-record reuse counts from a hit log");
  ru->add_option("--hit-log", reuse.hit_log, "hit_log.tsv written by infer")->required();
  ru->add_option("--assets-dir", reuse.assets_dir, "Asset directory, to count unused records");
  ru->add_option("--report-out", reuse.report_out, "Report directory (default: next to the hit log)");

  SweepArgs sweep;
  auto* sw = app.add_subcommand("sweep", "Alpha, accuracy, deviation and speedup across thresholds");
  sw->add_option("--assets-dir", sweep.assets_dir, "Asset directory from build")->required();
  sw->add_option("--corpus", sweep.corpus, "Inference corpus")->required();
  sw->add_option("--grid", sweep.grid, "Comma-separated thresholds");
  sw->add_option("--selective", sweep.selective, "Per-layer selective memoization (on/off)");
  sw->add_option("--batch-size", sweep.batch_size, "Sequences per batch")->check(CLI::PositiveNumber);
  sw->add_option("--report-out", sweep.report_out, "Report directory (default: <assets>/sweep)");
  sw->add_option("--reps", sweep.reps, "Interleaved timing passes")->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*g) cmd_gen(gen);
    if (*b) cmd_build(build);
    if (*inf) cmd_infer(infer);
    if (*bs) cmd_bench_store(bench);
    if (*ru) cmd_reuse_report(reuse);
    if (*sw) cmd_sweep(sweep);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
