#pragma once

// Plot-ready report tables written by the CLI, their readers, and the run
// manifest every subcommand emits.

#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "memoattn/engine.hpp"

namespace memoattn {

inline constexpr std::string_view kLibraryVersion = "1.0.0";

// Run manifest

struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  nlohmann::json config = nlohmann::json::object();
  nlohmann::json seeds = nlohmann::json::object();
  nlohmann::json inputs = nlohmann::json::object();
  nlohmann::json outputs = nlohmann::json::object();
  nlohmann::json versions = nlohmann::json::object();
  nlohmann::json timestamps = nlohmann::json::object();

  /// Everything except timestamps; equal for two runs with equal inputs.
  nlohmann::json reproducible() const {
    return {{"command", command}, {"argv", argv},     {"config", config},
            {"seeds", seeds},     {"inputs", inputs}, {"outputs", outputs},
            {"versions", versions}};
  }

  nlohmann::json to_json() const {
    auto j = reproducible();
    j["timestamps"] = timestamps;
    return j;
  }

  static RunManifest from_json(const nlohmann::json& j) {
    RunManifest m;
    m.command = j.at("command").get<std::string>();
    m.argv = j.at("argv").get<std::vector<std::string>>();
    m.config = j.at("config");
    m.seeds = j.at("seeds");
    m.inputs = j.at("inputs");
    m.outputs = j.at("outputs");
    m.versions = j.at("versions");
    m.timestamps = j.value("timestamps", nlohmann::json::object());
    return m;
  }
};

inline std::string utc_now_iso8601() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  ::gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline nlohmann::json format_versions() {
  return {{"memoattn", kLibraryVersion},
          {"store", kStoreFormatVersion},
          {"profile", kProfileHeader},
          {"run_report", kRunReportHeader},
          {"hit_log", kHitLogHeader}};
}

inline void save_manifest(const std::string& path, const RunManifest& m) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write manifest " + path);
  os << m.to_json().dump(2) << '\n';
}

inline RunManifest load_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read manifest " + path);
  return RunManifest::from_json(nlohmann::json::parse(is));
}

// Generic tab-separated tables with a versioned header line.

namespace detail {

inline void expect_lines(std::istream& is, std::string_view header, std::string_view columns, const char* what) {
  std::string line;
  if (!std::getline(is, line) || line != header) throw std::runtime_error(std::string(what) + ": unknown header");
  if (!std::getline(is, line) || line != columns) throw std::runtime_error(std::string(what) + ": unexpected columns");
}

inline std::ostream& precise(std::ostream& os) {
  return os << std::setprecision(std::numeric_limits<double>::max_digits10);
}

}  // namespace detail

// Store gather benchmark

struct BenchRow {
  std::size_t seq_len = 0;
  std::size_t batch = 0;
  double mapped_ms = 0.0;
  double copy_ms = 0.0;
  double speedup() const { return mapped_ms > 0.0 ? copy_ms / mapped_ms : std::numeric_limits<double>::infinity(); }
};

inline constexpr std::string_view kBenchHeader = "# memoattn-bench-store v1";
inline constexpr std::string_view kBenchColumns = "seq_len\tbatch\tmapped_ms\tcopy_ms\tspeedup";

inline void write_bench_table(std::ostream& os, const std::vector<BenchRow>& rows) {
  os << kBenchHeader << '\n' << kBenchColumns << '\n';
  detail::precise(os);
  for (const auto& r : rows) {
    os << r.seq_len << '\t' << r.batch << '\t' << r.mapped_ms << '\t' << r.copy_ms << '\t' << r.speedup() << '\n';
  }
}

inline std::vector<BenchRow> read_bench_table(std::istream& is) {
  detail::expect_lines(is, kBenchHeader, kBenchColumns, "bench table");
  std::vector<BenchRow> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    BenchRow r;
    std::string speedup;
    if (!(row >> r.seq_len >> r.batch >> r.mapped_ms >> r.copy_ms >> speedup)) {
      throw std::runtime_error("bench table: malformed row: " + line);
    }
    out.push_back(r);
  }
  return out;
}

// Reuse frequency

struct ReuseReport {
  // (layer, record id) -> number of times the record served a hit
  std::map<std::pair<std::size_t, std::uint64_t>, std::uint64_t> counts;
  std::uint64_t total_hits = 0;

  /// reuse count -> number of records with that count
  std::map<std::uint64_t, std::uint64_t> histogram() const {
    std::map<std::uint64_t, std::uint64_t> h;
    for (const auto& [key, n] : counts) ++h[n];
    return h;
  }

  std::uint64_t max_reuse() const {
    std::uint64_t m = 0;
    for (const auto& [key, n] : counts) m = std::max(m, n);
    return m;
  }

  /// Fraction of records with at least one hit that were reused at most `k` times.
  double fraction_hit_records_at_most(std::uint64_t k) const {
    std::uint64_t hit = 0, low = 0;
    for (const auto& [key, n] : counts) {
      if (n == 0) continue;
      ++hit;
      low += n <= k;
    }
    return hit ? static_cast<double>(low) / static_cast<double>(hit) : 1.0;
  }
};

/// Counts per-record reuse from a hit log. `catalog_ids[l]` lists the ids
/// of layer l's records so unused records appear with count zero.
inline ReuseReport reuse_report(const std::vector<HitRecord>& log,
                                const std::vector<std::vector<std::uint64_t>>& catalog_ids = {}) {
  ReuseReport r;
  for (std::size_t l = 0; l < catalog_ids.size(); ++l) {
    for (auto id : catalog_ids[l]) r.counts[{l, id}] = 0;
  }
  for (const auto& h : log) {
    ++r.counts[{h.layer, h.record_id}];
    ++r.total_hits;
  }
  return r;
}

inline constexpr std::string_view kReuseHeader = "# memoattn-reuse-histogram v1";
inline constexpr std::string_view kReuseColumns = "reuse_count\trecords";

inline void write_reuse_histogram(std::ostream& os, const ReuseReport& r) {
  os << kReuseHeader << '\n' << kReuseColumns << '\n';
  for (const auto& [count, records] : r.histogram()) os << count << '\t' << records << '\n';
}

inline std::map<std::uint64_t, std::uint64_t> read_reuse_histogram(std::istream& is) {
  detail::expect_lines(is, kReuseHeader, kReuseColumns, "reuse histogram");
  std::map<std::uint64_t, std::uint64_t> h;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::uint64_t count = 0, records = 0;
    if (!(row >> count >> records)) throw std::runtime_error("reuse histogram: malformed row: " + line);
    h[count] = records;
  }
  return h;
}

inline constexpr std::string_view kReuseCountsHeader = "# memoattn-reuse-counts v1";
inline constexpr std::string_view kReuseCountsColumns = "layer\trecord_id\treuse_count";

inline void write_reuse_counts(std::ostream& os, const ReuseReport& r) {
  os << kReuseCountsHeader << '\n' << kReuseCountsColumns << '\n';
  for (const auto& [key, n] : r.counts) os << key.first << '\t' << key.second << '\t' << n << '\n';
}

// Threshold sweep

struct SweepRow {
  double threshold = 0.0;
  double alpha = 0.0;
  double accuracy = 0.0;
  double deviation = 0.0;
  double speedup = 0.0;
};

inline constexpr std::string_view kSweepHeader = "# memoattn-sweep v1";
inline constexpr std::string_view kSweepColumns = "threshold\talpha\taccuracy\tdeviation\tspeedup";

inline void write_sweep(std::ostream& os, const std::vector<SweepRow>& rows) {
  os << kSweepHeader << '\n' << kSweepColumns << '\n';
  detail::precise(os);
  for (const auto& r : rows) {
    os << r.threshold << '\t' << r.alpha << '\t' << r.accuracy << '\t' << r.deviation << '\t' << r.speedup << '\n';
  }
}

inline std::vector<SweepRow> read_sweep(std::istream& is) {
  detail::expect_lines(is, kSweepHeader, kSweepColumns, "sweep");
  std::vector<SweepRow> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    SweepRow r;
    if (!(row >> r.threshold >> r.alpha >> r.accuracy >> r.deviation >> r.speedup)) {
      throw std::runtime_error("sweep: malformed row: " + line);
    }
    out.push_back(r);
  }
  return out;
}

/// Parses a comma-separated threshold grid such as "1,0.9,0.5,0".
inline std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.find_first_not_of(" \t") == std::string::npos) continue;
    std::size_t used = 0;
    const double v = std::stod(item, &used);
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("grid: threshold " + item + " outside [0, 1]");
    out.push_back(v);
  }
  if (out.empty()) throw std::invalid_argument("grid: no thresholds");
  return out;
}

}  // namespace memoattn
