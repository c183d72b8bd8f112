#pragma once

// Synthetic corpora with planted cross-sequence redundancy, and a toy
// whitespace tokenizer for plain-text input.

#include <cctype>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace memoattn {

inline constexpr std::uint32_t kPadToken = 0;

enum class LabelRule { template_id, parity };

struct CorpusSpec {
  std::uint32_t vocab_size = 256;
  std::size_t seq_len = 32;
  std::size_t num_sequences = 1000;
  std::size_t num_templates = 8;
  double mutation_rate = 0.2;
  std::uint64_t seed = 1;
  LabelRule label_rule = LabelRule::template_id;

  std::size_t num_classes() const { return label_rule == LabelRule::parity ? 2 : num_templates; }

  void validate() const {
    if (vocab_size < 2) throw std::invalid_argument("CorpusSpec: vocab_size must be >= 2 (token 0 is padding)");
    if (seq_len == 0) throw std::invalid_argument("CorpusSpec: seq_len must be >= 1");
    if (num_templates == 0) throw std::invalid_argument("CorpusSpec: num_templates must be >= 1");
    if (!(mutation_rate >= 0.0 && mutation_rate <= 1.0)) {
      throw std::invalid_argument("CorpusSpec: mutation_rate must lie in [0, 1]");
    }
  }
};

struct TokenSequence {
  std::vector<std::uint32_t> tokens;
  std::uint32_t label = 0;
  bool operator==(const TokenSequence&) const = default;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

/// Sequence i depends only on (seed, i) and the templates, so growing
/// num_sequences extends the corpus without reshuffling its prefix.
inline std::vector<TokenSequence> generate(const CorpusSpec& spec) {
  spec.validate();
  std::uniform_int_distribution<std::uint32_t> token(1, spec.vocab_size - 1);

  std::vector<std::vector<std::uint32_t>> templates(spec.num_templates);
  std::mt19937_64 trng(detail::splitmix64(spec.seed));
  for (auto& t : templates) {
    t.resize(spec.seq_len);
    for (auto& v : t) v = token(trng);
  }

  std::vector<TokenSequence> out(spec.num_sequences);
  for (std::size_t i = 0; i < spec.num_sequences; ++i) {
    std::mt19937_64 rng(detail::splitmix64(spec.seed ^ detail::splitmix64(i + 1)));
    std::uniform_int_distribution<std::size_t> pick(0, spec.num_templates - 1);
    std::bernoulli_distribution mutate(spec.mutation_rate);
    const std::size_t tid = pick(rng);
    auto& seq = out[i];
    seq.tokens = templates[tid];
    for (auto& v : seq.tokens) {
      if (mutate(rng)) v = token(rng);
    }
    if (spec.label_rule == LabelRule::template_id) {
      seq.label = static_cast<std::uint32_t>(tid);
    } else {
      std::uint64_t s = 0;
      for (auto v : seq.tokens) s += v;
      seq.label = static_cast<std::uint32_t>(s & 1U);
    }
  }
  return out;
}

/// Whitespace split, FNV-1a hash of each word into [1, vocab_size), truncated
/// or padded with kPadToken to exactly seq_len.
inline TokenSequence tokenize(std::string_view text, std::uint32_t vocab_size, std::size_t seq_len) {
  if (vocab_size < 2) throw std::invalid_argument("tokenize: vocab_size must be >= 2");
  TokenSequence seq;
  seq.tokens.reserve(seq_len);
  std::size_t pos = 0;
  while (pos < text.size() && seq.tokens.size() < seq_len) {
    while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
    std::size_t end = pos;
    while (end < text.size() && !std::isspace(static_cast<unsigned char>(text[end]))) ++end;
    if (end > pos) {
      const auto h = detail::fnv1a64(text.substr(pos, end - pos));
      seq.tokens.push_back(1 + static_cast<std::uint32_t>(h % (vocab_size - 1)));
    }
    pos = end;
  }
  seq.tokens.resize(seq_len, kPadToken);
  return seq;
}

// Newline-delimited corpus records: "<label>\t<tok> <tok> ...".
inline constexpr std::string_view kCorpusHeader = "# memoattn-corpus v1";

inline void write_corpus(std::ostream& os, const std::vector<TokenSequence>& corpus) {
  os << kCorpusHeader << '\n';
  for (const auto& s : corpus) {
    os << s.label << '\t';
    for (std::size_t i = 0; i < s.tokens.size(); ++i) {
      if (i) os << ' ';
      os << s.tokens[i];
    }
    os << '\n';
  }
}

inline std::vector<TokenSequence> read_corpus(std::istream& is) {
  std::vector<TokenSequence> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw std::runtime_error("corpus line " + std::to_string(lineno) + ": missing label");
    TokenSequence s;
    s.label = static_cast<std::uint32_t>(std::stoul(line.substr(0, tab)));
    std::istringstream toks(line.substr(tab + 1));
    std::uint32_t t;
    while (toks >> t) s.tokens.push_back(t);
    out.push_back(std::move(s));
  }
  return out;
}

inline void save_corpus(const std::string& path, const std::vector<TokenSequence>& corpus) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write corpus " + path);
  write_corpus(os, corpus);
}

inline std::vector<TokenSequence> load_corpus(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read corpus " + path);
  return read_corpus(is);
}

/// One sequence per non-empty line of a UTF-8 text file. An optional
/// "<label>\t" prefix sets the label.
inline std::vector<TokenSequence> ingest_text(std::istream& is, std::uint32_t vocab_size, std::size_t seq_len) {
  std::vector<TokenSequence> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::uint32_t label = 0;
    std::string_view body = line;
    const auto tab = line.find('\t');
    if (tab != std::string::npos && tab > 0 &&
        line.find_first_not_of("0123456789") == tab) {
      label = static_cast<std::uint32_t>(std::stoul(line.substr(0, tab)));
      body = std::string_view(line).substr(tab + 1);
    }
    auto s = tokenize(body, vocab_size, seq_len);
    s.label = label;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace memoattn
