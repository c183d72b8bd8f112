// Builds memoization assets for a tiny model and compares memoized inference
// against the baseline.

#include <cstdio>
#include <filesystem>

#include "memoattn/memoattn.hpp"

using namespace memoattn;

int main() {
  CorpusSpec spec;
  spec.seq_len = 32;
  spec.num_sequences = 700;
  spec.mutation_rate = 0.1;
  const auto all = generate(spec);
  const std::vector<TokenSequence> train(all.begin(), all.begin() + 400);
  const std::vector<TokenSequence> calib(all.begin() + 400, all.begin() + 500);
  const std::vector<TokenSequence> test(all.begin() + 500, all.end());

  ModelConfig mc;
  mc.max_seq_len = spec.seq_len;
  ToyTransformer model(mc);

  const auto root = std::filesystem::temp_directory_path() / "memoattn_quickstart";
  BuildOptions opts;
  opts.layer.embedder.epochs = 5;
  EngineAssets assets;
  const BuildReport rep = build_assets(model, train, calib, root, opts, &assets);
  std::printf("levels: conservative %.3f  moderate %.3f  aggressive %.3f\n", rep.levels.conservative,
              rep.levels.moderate, rep.levels.aggressive);

  const BaselineResult base = run_baseline(model, test);
  for (MemoLevel level : {MemoLevel::conservative, MemoLevel::moderate, MemoLevel::aggressive}) {
    const MemoConfig cfg = MemoConfig::for_level(level, assets.levels, false);
    const InferenceResult r = run_inference(model, test, assets, cfg);
    std::printf("%-12s alpha %.3f  accuracy %.3f (baseline %.3f)  deviation %.4f\n", to_string(level).data(),
                r.stats.overall_alpha(), accuracy(r.predictions, test), accuracy(base.predictions, test),
                mean_logit_deviation(r.logits, base.logits));
  }
  std::filesystem::remove_all(root);
}
