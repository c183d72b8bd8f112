#pragma once

#include <memory>

#include "memoattn/memoattn.hpp"
#include "test_util.hpp"

namespace fixture {

inline memoattn::ModelConfig small_model() {
  memoattn::ModelConfig mc;
  mc.hidden_dim = 32;
  mc.num_heads = 2;
  mc.num_layers = 2;
  mc.ffn_dim = 64;
  mc.num_classes = 4;
  return mc;
}

inline memoattn::CorpusSpec small_corpus(std::size_t n, std::uint64_t seed) {
  memoattn::CorpusSpec spec;
  spec.seq_len = 16;
  spec.num_sequences = n;
  spec.num_templates = 4;
  spec.seed = seed;
  return spec;
}

/// One small build shared by a whole test binary.
struct Built {
  testutil::TempDir dir{"assets"};
  memoattn::ToyTransformer model{small_model()};
  std::vector<memoattn::TokenSequence> train = memoattn::generate(small_corpus(240, 1));
  std::vector<memoattn::TokenSequence> calib = memoattn::generate(small_corpus(64, 2));
  memoattn::EngineAssets assets;
  memoattn::BuildReport report;

  Built() {
    memoattn::BuildOptions opts;
    opts.layer.embedder.epochs = 5;
    report = memoattn::build_assets(model, train, calib, dir.path(), opts, &assets);
  }

  static Built& get() {
    static Built b;
    return b;
  }
};

}  // namespace fixture
