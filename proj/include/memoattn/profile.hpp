#pragma once

// Per-layer performance profile and the cost model
//   PB = T_atn * alpha - T_overhead,
// with timings measured on a reference corpus and scaled to an inference batch.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace memoattn {

struct LayerProfile {
  std::size_t layer = 0;
  double alpha = 0.0;
  double t_atn_ms = 0.0;       // memoizable attention time over the reference corpus
  double t_overhead_ms = 0.0;  // embed + search + gather over the reference corpus
  std::uint64_t reference_total_tokens = 0;
  std::size_t reference_seq_len = 0;
  double threshold = 1.0;  // memoization threshold alpha was measured at

  void validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("LayerProfile: alpha outside [0, 1]");
    if (!(t_atn_ms >= 0.0 && t_overhead_ms >= 0.0)) throw std::invalid_argument("LayerProfile: negative time");
    if (reference_total_tokens == 0) throw std::invalid_argument("LayerProfile: zero reference tokens");
  }
  bool operator==(const LayerProfile&) const = default;
};

struct TimingEstimate {
  double t_atn_ms = 0.0;
  double t_overhead_ms = 0.0;
  bool operator==(const TimingEstimate&) const = default;
};

enum class Scaling {
  linear,     // both times scale with total tokens
  quadratic,  // attention additionally scales with sequence length
};

/// Scales the reference timings by inference_tokens / reference_tokens.
inline TimingEstimate estimate(const LayerProfile& p, std::uint64_t inference_total_tokens,
                               Scaling mode = Scaling::linear, std::size_t inference_seq_len = 0) {
  if (p.reference_total_tokens == 0) throw std::invalid_argument("estimate: zero reference tokens");
  const double ratio = static_cast<double>(inference_total_tokens) / static_cast<double>(p.reference_total_tokens);
  TimingEstimate e{p.t_atn_ms * ratio, p.t_overhead_ms * ratio};
  if (mode == Scaling::quadratic) {
    if (p.reference_seq_len == 0 || inference_seq_len == 0) {
      throw std::invalid_argument("estimate: quadratic scaling needs sequence lengths");
    }
    e.t_atn_ms *= static_cast<double>(inference_seq_len) / static_cast<double>(p.reference_seq_len);
  }
  return e;
}

inline double performance_benefit(double alpha, const TimingEstimate& est) {
  return est.t_atn_ms * alpha - est.t_overhead_ms;
}

/// True when memoizing this layer is expected to save time.
inline bool decide_layer(const LayerProfile& profile, const TimingEstimate& est) {
  return performance_benefit(profile.alpha, est) > 0.0;
}

inline constexpr std::string_view kProfileHeader = "# memoattn-profile v1";
inline constexpr std::string_view kProfileColumns =
    "layer\talpha\tt_atn_ms\tt_overhead_ms\treference_total_tokens\treference_seq_len\tthreshold";

inline void write_profiles(std::ostream& os, const std::vector<LayerProfile>& profiles) {
  os << kProfileHeader << '\n' << kProfileColumns << '\n';
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const auto& p : profiles) {
    os << p.layer << '\t' << p.alpha << '\t' << p.t_atn_ms << '\t' << p.t_overhead_ms << '\t'
       << p.reference_total_tokens << '\t' << p.reference_seq_len << '\t' << p.threshold << '\n';
  }
}

inline std::vector<LayerProfile> read_profiles(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kProfileHeader) throw std::runtime_error("profile: missing or unknown header");
  if (!std::getline(is, line) || line != kProfileColumns) throw std::runtime_error("profile: unexpected column line");
  std::vector<LayerProfile> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    LayerProfile p;
    if (!(row >> p.layer >> p.alpha >> p.t_atn_ms >> p.t_overhead_ms >> p.reference_total_tokens >>
          p.reference_seq_len >> p.threshold)) {
      throw std::runtime_error("profile: malformed row: " + line);
    }
    p.validate();
    out.push_back(p);
  }
  return out;
}

inline void save_profiles(const std::string& path, const std::vector<LayerProfile>& profiles) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write profile " + path);
  write_profiles(os, profiles);
}

inline std::vector<LayerProfile> load_profiles(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read profile " + path);
  return read_profiles(is);
}

}  // namespace memoattn
