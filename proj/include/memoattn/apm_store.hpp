#pragma once

// Attention database: APM records in page-aligned slots of shard files, plus a
// binary manifest. Batches are gathered either by remapping each record's
// file pages into consecutive slots of one reserved virtual range (no payload
// copy) or by explicit reads into an owned buffer.
//
// Directory layout:
//   <dir>/manifest.bin       "MAPM", version u32, page_size u32, then 30-byte
//                            entries until EOF:
//                            id u64, shard u32, offset u64, num_heads u16,
//                            seq_len u32, crc32 u32 (all little-endian)
//   <dir>/shard_NNNNN.bin    raw f32 payloads, each padded with zeros to a
//                            page boundary

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>
#include <zlib.h>

#include <algorithm>
#include <array>
#include <cerrno>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "memoattn/tensor.hpp"

namespace memoattn {

inline constexpr std::uint32_t kStoreFormatVersion = 1;
inline constexpr std::size_t kManifestHeaderBytes = 12;
inline constexpr std::size_t kManifestEntryBytes = 30;

struct CatalogEntry {
  std::uint64_t id = 0;
  std::uint32_t shard = 0;
  std::uint64_t offset = 0;
  std::uint16_t num_heads = 0;
  std::uint32_t seq_len = 0;
  std::uint32_t crc32 = 0;

  std::size_t payload_floats() const noexcept {
    return static_cast<std::size_t>(num_heads) * seq_len * seq_len;
  }
  std::size_t payload_bytes() const noexcept { return payload_floats() * sizeof(float); }
  bool operator==(const CatalogEntry&) const = default;
};

struct StoreManifest {
  std::filesystem::path dir;
  std::uint32_t version = kStoreFormatVersion;
  std::uint32_t page_size = 0;
  std::vector<CatalogEntry> records;  // insertion order
  bool operator==(const StoreManifest&) const = default;
};

inline bool is_power_of_two(std::uint64_t v) { return v != 0 && (v & (v - 1)) == 0; }

inline std::size_t round_up(std::size_t v, std::size_t align) { return (v + align - 1) / align * align; }

inline std::size_t os_page_size() { return static_cast<std::size_t>(::sysconf(_SC_PAGESIZE)); }

/// System page size, overridable through MEMOATTN_PAGE_SIZE.
inline std::size_t detect_page_size() {
  if (const char* env = std::getenv("MEMOATTN_PAGE_SIZE"); env && *env) {
    const auto v = std::strtoull(env, nullptr, 10);
    if (!is_power_of_two(v)) throw std::invalid_argument("MEMOATTN_PAGE_SIZE must be a power of two");
    return static_cast<std::size_t>(v);
  }
  return os_page_size();
}

/// Current virtual address space size of this process in bytes (Linux).
inline std::size_t process_vm_bytes() {
  std::ifstream statm("/proc/self/statm");
  std::size_t pages = 0;
  statm >> pages;
  return pages * os_page_size();
}

namespace detail {

inline std::uint32_t crc_of(const void* data, std::size_t bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  const auto* p = static_cast<const Bytef*>(data);
  while (bytes > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes, 1u << 30));
    crc = ::crc32(crc, p, chunk);
    p += chunk;
    bytes -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

[[noreturn]] inline void throw_errno(const std::string& what) {
  throw std::runtime_error(what + ": " + std::strerror(errno));
}

inline void pwrite_all(int fd, const void* buf, std::size_t n, std::uint64_t off, const std::string& what) {
  const char* p = static_cast<const char*>(buf);
  while (n > 0) {
    const ssize_t w = ::pwrite(fd, p, n, static_cast<off_t>(off));
    if (w < 0) {
      if (errno == EINTR) continue;
      throw_errno(what);
    }
    p += w, n -= static_cast<std::size_t>(w), off += static_cast<std::uint64_t>(w);
  }
}

inline void pread_all(int fd, void* buf, std::size_t n, std::uint64_t off, const std::string& what) {
  char* p = static_cast<char*>(buf);
  while (n > 0) {
    const ssize_t r = ::pread(fd, p, n, static_cast<off_t>(off));
    if (r < 0) {
      if (errno == EINTR) continue;
      throw_errno(what);
    }
    if (r == 0) throw std::runtime_error(what + ": unexpected end of file");
    p += r, n -= static_cast<std::size_t>(r), off += static_cast<std::uint64_t>(r);
  }
}

template <typename T>
void put_le(std::array<unsigned char, kManifestEntryBytes>& buf, std::size_t& pos, T v) {
  std::memcpy(buf.data() + pos, &v, sizeof(T));
  pos += sizeof(T);
}

template <typename T>
T get_le(const unsigned char* buf, std::size_t& pos) {
  T v;
  std::memcpy(&v, buf + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

inline std::array<unsigned char, kManifestEntryBytes> encode_entry(const CatalogEntry& e) {
  std::array<unsigned char, kManifestEntryBytes> b{};
  std::size_t pos = 0;
  put_le(b, pos, e.id);
  put_le(b, pos, e.shard);
  put_le(b, pos, e.offset);
  put_le(b, pos, e.num_heads);
  put_le(b, pos, e.seq_len);
  put_le(b, pos, e.crc32);
  return b;
}

inline CatalogEntry decode_entry(const unsigned char* b) {
  std::size_t pos = 0;
  CatalogEntry e;
  e.id = get_le<std::uint64_t>(b, pos);
  e.shard = get_le<std::uint32_t>(b, pos);
  e.offset = get_le<std::uint64_t>(b, pos);
  e.num_heads = get_le<std::uint16_t>(b, pos);
  e.seq_len = get_le<std::uint32_t>(b, pos);
  e.crc32 = get_le<std::uint32_t>(b, pos);
  return e;
}

class Fd {
 public:
  Fd() = default;
  explicit Fd(int fd) : fd_(fd) {}
  Fd(Fd&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Fd& operator=(Fd&& o) noexcept {
    if (this != &o) {
      reset();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  ~Fd() { reset(); }
  int get() const noexcept { return fd_; }
  void reset() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

 private:
  int fd_ = -1;
};

}  // namespace detail

/// Records gathered into one contiguous virtual range. Record i occupies
/// [i * stride, i * stride + payload) of the range; the mapping is read-only
/// and is removed when the batch is destroyed or released.
class MappedBatch {
 public:
  MappedBatch() = default;
  MappedBatch(MappedBatch&& o) noexcept { *this = std::move(o); }
  MappedBatch& operator=(MappedBatch&& o) noexcept {
    if (this != &o) {
      unmap();
      base_ = std::exchange(o.base_, nullptr);
      reserved_ = std::exchange(o.reserved_, 0);
      stride_ = std::exchange(o.stride_, 0);
      count_ = std::exchange(o.count_, 0);
      num_heads_ = std::exchange(o.num_heads_, 0);
      seq_len_ = std::exchange(o.seq_len_, 0);
      fallback_ = std::move(o.fallback_);
      o.fallback_.clear();
    }
    return *this;
  }
  MappedBatch(const MappedBatch&) = delete;
  MappedBatch& operator=(const MappedBatch&) = delete;
  ~MappedBatch() { unmap(); }

  std::size_t size() const noexcept { return count_; }
  bool empty() const noexcept { return count_ == 0; }
  std::size_t num_heads() const noexcept { return num_heads_; }
  std::size_t seq_len() const noexcept { return seq_len_; }
  std::size_t payload_bytes() const noexcept { return num_heads_ * seq_len_ * seq_len_ * sizeof(float); }
  std::size_t stride_bytes() const noexcept { return stride_; }
  std::size_t reserved_bytes() const noexcept { return reserved_; }
  /// False when the batch was materialized by the copy fallback.
  bool is_mapped() const noexcept { return base_ != nullptr; }
  /// Records are densely packed, i.e. usable as one (batch, heads, L, L) tensor.
  bool dense() const noexcept { return stride_ == payload_bytes(); }

  const std::byte* base() const noexcept {
    return base_ ? static_cast<const std::byte*>(base_) : reinterpret_cast<const std::byte*>(fallback_.data());
  }

  std::span<const float> record(std::size_t i) const {
    if (i >= count_) throw std::out_of_range("MappedBatch::record");
    return {reinterpret_cast<const float*>(base() + i * stride_), num_heads_ * seq_len_ * seq_len_};
  }

  /// Whole batch as one dense tensor; only valid when dense().
  std::span<const float> tensor() const {
    if (!dense()) throw std::logic_error("MappedBatch::tensor: records are padded, not dense");
    return {reinterpret_cast<const float*>(base()), count_ * num_heads_ * seq_len_ * seq_len_};
  }

  /// Consumes the batch and removes its mappings.
  friend void release(MappedBatch&& batch) { MappedBatch dead(std::move(batch)); }

 private:
  friend class ApmStore;

  void unmap() noexcept {
    if (base_) ::munmap(base_, reserved_);
    base_ = nullptr;
    reserved_ = 0;
    count_ = 0;
    fallback_.clear();
  }

  void* base_ = nullptr;
  std::size_t reserved_ = 0;
  std::size_t stride_ = 0;
  std::size_t count_ = 0;
  std::size_t num_heads_ = 0;
  std::size_t seq_len_ = 0;
  std::vector<float> fallback_;  // copy fallback when remapping is unavailable
};

/// Records copied back-to-back (no padding) into an owned buffer.
struct CopiedBatch {
  std::vector<float> data;
  std::size_t count = 0;
  std::size_t num_heads = 0;
  std::size_t seq_len = 0;

  std::size_t record_floats() const noexcept { return num_heads * seq_len * seq_len; }
  std::span<const float> record(std::size_t i) const {
    if (i >= count) throw std::out_of_range("CopiedBatch::record");
    return {data.data() + i * record_floats(), record_floats()};
  }
};

struct StoreOptions {
  std::uint64_t shard_bytes = 1ULL << 30;
};

class ApmStore {
 public:
  ApmStore() = default;
  ApmStore(ApmStore&&) noexcept = default;
  ApmStore& operator=(ApmStore&&) noexcept = default;

  /// Creates an empty store, or reopens an existing one at the same page size.
  static ApmStore create(const std::filesystem::path& dir, std::size_t page_size = 0, StoreOptions opts = {}) {
    if (page_size == 0) page_size = detect_page_size();
    if (!is_power_of_two(page_size)) {
      throw std::invalid_argument("create_store: page size " + std::to_string(page_size) + " is not a power of two");
    }
    std::filesystem::create_directories(dir);
    if (std::filesystem::exists(dir / "manifest.bin")) {
      ApmStore s = open(dir, opts);
      if (s.manifest_.page_size != page_size) {
        throw std::runtime_error("create_store: existing store at " + dir.string() + " uses page size " +
                                 std::to_string(s.manifest_.page_size));
      }
      return s;
    }
    ApmStore s;
    s.opts_ = opts;
    s.manifest_.dir = dir;
    s.manifest_.page_size = static_cast<std::uint32_t>(page_size);
    s.manifest_fd_ = detail::Fd(::open((dir / "manifest.bin").c_str(), O_RDWR | O_CREAT | O_TRUNC | O_CLOEXEC, 0644));
    if (s.manifest_fd_.get() < 0) detail::throw_errno("create_store: " + (dir / "manifest.bin").string());
    std::array<unsigned char, kManifestHeaderBytes> hdr{};
    std::memcpy(hdr.data(), "MAPM", 4);
    const std::uint32_t ver = kStoreFormatVersion, ps = s.manifest_.page_size;
    std::memcpy(hdr.data() + 4, &ver, 4);
    std::memcpy(hdr.data() + 8, &ps, 4);
    detail::pwrite_all(s.manifest_fd_.get(), hdr.data(), hdr.size(), 0, "create_store: manifest header");
    s.manifest_end_ = kManifestHeaderBytes;
    return s;
  }

  static ApmStore open(const std::filesystem::path& dir, StoreOptions opts = {}) {
    const auto mpath = dir / "manifest.bin";
    ApmStore s;
    s.opts_ = opts;
    s.manifest_.dir = dir;
    s.manifest_fd_ = detail::Fd(::open(mpath.c_str(), O_RDWR | O_CLOEXEC));
    if (s.manifest_fd_.get() < 0) detail::throw_errno("open_store: " + mpath.string());
    struct stat st {};
    if (::fstat(s.manifest_fd_.get(), &st) != 0) detail::throw_errno("open_store: stat");
    const auto bytes = static_cast<std::size_t>(st.st_size);
    if (bytes < kManifestHeaderBytes) throw std::runtime_error("open_store: truncated manifest " + mpath.string());
    std::vector<unsigned char> buf(bytes);
    detail::pread_all(s.manifest_fd_.get(), buf.data(), bytes, 0, "open_store: manifest");
    if (std::memcmp(buf.data(), "MAPM", 4) != 0) throw std::runtime_error("open_store: bad manifest magic");
    std::uint32_t ver = 0, ps = 0;
    std::memcpy(&ver, buf.data() + 4, 4);
    std::memcpy(&ps, buf.data() + 8, 4);
    if (ver != kStoreFormatVersion) {
      throw std::runtime_error("open_store: incompatible format version " + std::to_string(ver));
    }
    if (!is_power_of_two(ps)) throw std::runtime_error("open_store: corrupt page size");
    s.manifest_.version = ver;
    s.manifest_.page_size = ps;
    if ((bytes - kManifestHeaderBytes) % kManifestEntryBytes != 0) {
      throw std::runtime_error("open_store: manifest has a partial record entry");
    }
    for (std::size_t off = kManifestHeaderBytes; off < bytes; off += kManifestEntryBytes) {
      const CatalogEntry e = detail::decode_entry(buf.data() + off);
      if (s.index_.count(e.id)) throw std::runtime_error("open_store: duplicate id " + std::to_string(e.id));
      s.index_.emplace(e.id, s.manifest_.records.size());
      s.manifest_.records.push_back(e);
      s.ensure_shard(e.shard);
      auto& end = s.shard_end_[e.shard];
      end = std::max<std::uint64_t>(end, e.offset + round_up(e.payload_bytes(), ps));
    }
    s.manifest_end_ = bytes;
    return s;
  }

  const StoreManifest& manifest() const noexcept { return manifest_; }
  const std::vector<CatalogEntry>& catalog() const noexcept { return manifest_.records; }
  std::size_t size() const noexcept { return manifest_.records.size(); }
  std::size_t page_size() const noexcept { return manifest_.page_size; }
  bool contains(std::uint64_t id) const { return index_.count(id) != 0; }

  const CatalogEntry& entry(std::uint64_t id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw std::out_of_range("ApmStore: no record with id " + std::to_string(id));
    return manifest_.records[it->second];
  }

  /// Bytes occupied on disk by payloads including page padding.
  std::uint64_t total_bytes() const {
    std::uint64_t t = 0;
    for (const auto& e : manifest_.records) t += round_up(e.payload_bytes(), manifest_.page_size);
    return t;
  }

  /// Remapping needs store pages that are whole OS pages.
  bool remap_supported() const { return manifest_.page_size % os_page_size() == 0; }

  /// Appends one record holding all heads of one (sequence, layer).
  void put(std::uint64_t id, const std::vector<Apm>& apms) {
    if (apms.empty()) throw std::invalid_argument("put: no APMs");
    const std::size_t seq = apms.front().seq_len();
    std::vector<float> payload;
    payload.reserve(apms.size() * seq * seq);
    for (const auto& a : apms) {
      if (a.seq_len() != seq) throw std::invalid_argument("put: heads have different sequence lengths");
      payload.insert(payload.end(), a.probs.values().begin(), a.probs.values().end());
    }
    put_raw(id, apms.size(), seq, payload);
  }

  void put_raw(std::uint64_t id, std::size_t num_heads, std::size_t seq_len, std::span<const float> payload) {
    if (index_.count(id)) throw std::invalid_argument("put: duplicate record id " + std::to_string(id));
    if (num_heads == 0 || num_heads > 0xFFFF || seq_len == 0 || seq_len > 0xFFFFFFFFULL) {
      throw std::invalid_argument("put: head count or sequence length out of range");
    }
    if (payload.size() != num_heads * seq_len * seq_len) throw std::invalid_argument("put: payload size mismatch");
    if (manifest_fd_.get() < 0) throw std::logic_error("put: store not open");
    const std::size_t ps = manifest_.page_size;
    const std::size_t bytes = payload.size_bytes();
    const std::size_t padded = round_up(bytes, ps);

    std::uint32_t shard = shard_end_.empty() ? 0 : static_cast<std::uint32_t>(shard_end_.size() - 1);
    ensure_shard(shard);
    if (shard_end_[shard] > 0 && shard_end_[shard] + padded > opts_.shard_bytes) {
      ++shard;
      ensure_shard(shard);
    }
    const std::uint64_t offset = shard_end_[shard];
    const std::string what = "put: " + shard_path(shard).string();
    detail::pwrite_all(shard_fds_[shard].get(), payload.data(), bytes, offset, what);
    if (padded > bytes) {
      const std::vector<char> zeros(padded - bytes, 0);
      detail::pwrite_all(shard_fds_[shard].get(), zeros.data(), zeros.size(), offset + bytes, what);
    }
    shard_end_[shard] = offset + padded;

    CatalogEntry e{id, shard, offset, static_cast<std::uint16_t>(num_heads), static_cast<std::uint32_t>(seq_len),
                   detail::crc_of(payload.data(), bytes)};
    const auto enc = detail::encode_entry(e);
    detail::pwrite_all(manifest_fd_.get(), enc.data(), enc.size(), manifest_end_, "put: manifest");
    manifest_end_ += enc.size();
    index_.emplace(id, manifest_.records.size());
    manifest_.records.push_back(e);
  }

  /// Makes all writes so far durable.
  void flush() {
    for (auto& fd : shard_fds_) {
      if (fd.get() >= 0 && ::fsync(fd.get()) != 0) detail::throw_errno("flush: shard");
    }
    if (::fsync(manifest_fd_.get()) != 0) detail::throw_errno("flush: manifest");
  }

  std::vector<float> read_payload(std::uint64_t id) const {
    const auto& e = entry(id);
    std::vector<float> out(e.payload_floats());
    detail::pread_all(shard_fd(e.shard), out.data(), e.payload_bytes(), e.offset, "get: " + shard_path(e.shard).string());
    return out;
  }

  std::vector<Apm> get(std::uint64_t id) const {
    const auto& e = entry(id);
    const auto payload = read_payload(id);
    const std::size_t block = static_cast<std::size_t>(e.seq_len) * e.seq_len;
    std::vector<Apm> out;
    out.reserve(e.num_heads);
    for (std::size_t h = 0; h < e.num_heads; ++h) {
      auto first = payload.begin() + static_cast<std::ptrdiff_t>(h * block);
      out.emplace_back(Matrix(e.seq_len, e.seq_len, std::vector<float>(first, first + static_cast<std::ptrdiff_t>(block))));
    }
    return out;
  }

  /// Checksum and row-stochasticity check of one record.
  bool validate(std::uint64_t id, double tol = 1e-4) const {
    const auto& e = entry(id);
    const auto payload = read_payload(id);
    if (detail::crc_of(payload.data(), e.payload_bytes()) != e.crc32) return false;
    for (std::size_t r = 0; r < static_cast<std::size_t>(e.num_heads) * e.seq_len; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < e.seq_len; ++c) {
        const float v = payload[r * e.seq_len + c];
        if (!(v >= 0.0f && v <= 1.0f)) return false;
        s += v;
      }
      if (std::abs(s - 1.0) > tol) return false;
    }
    return true;
  }

  /// Maps the records' file pages, in request order, into one reserved range.
  /// No payload byte is touched by this call.
  MappedBatch gather_mapped(std::span<const std::uint64_t> ids) const {
    MappedBatch batch;
    if (ids.empty()) return batch;
    const auto& first = batch_shape(ids);
    const std::size_t stride = round_up(first.payload_bytes(), manifest_.page_size);
    batch.stride_ = stride;
    batch.num_heads_ = first.num_heads;
    batch.seq_len_ = first.seq_len;
    if (!remap_supported()) {
      warn_fallback("store page size " + std::to_string(manifest_.page_size) + " is not a multiple of the OS page size");
      copy_into(batch, ids, stride);
      return batch;
    }
    const std::size_t total = stride * ids.size();
    void* base = ::mmap(nullptr, total, PROT_NONE, MAP_PRIVATE | MAP_ANONYMOUS | MAP_NORESERVE, -1, 0);
    if (base == MAP_FAILED) detail::throw_errno("gather_mapped: reserving " + std::to_string(total) + " bytes");
    batch.base_ = base;
    batch.reserved_ = total;
    batch.count_ = ids.size();
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const auto& e = entry(ids[i]);
      void* slot = static_cast<std::byte*>(base) + i * stride;
      void* got = ::mmap(slot, stride, PROT_READ, MAP_SHARED | MAP_FIXED, shard_fd(e.shard), static_cast<off_t>(e.offset));
      if (got == MAP_FAILED) {
        const int err = errno;
        batch.unmap();
        errno = err;
        detail::throw_errno("gather_mapped: mapping record " + std::to_string(ids[i]));
      }
    }
    return batch;
  }

  /// Copy-based gather: explicit reads into one owned dense buffer.
  CopiedBatch gather_copy(std::span<const std::uint64_t> ids) const {
    CopiedBatch out;
    if (ids.empty()) return out;
    const auto& first = batch_shape(ids);
    out.count = ids.size();
    out.num_heads = first.num_heads;
    out.seq_len = first.seq_len;
    out.data.resize(out.count * out.record_floats());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const auto& e = entry(ids[i]);
      detail::pread_all(shard_fd(e.shard), out.data.data() + i * out.record_floats(), e.payload_bytes(), e.offset,
                        "gather_copy: " + shard_path(e.shard).string());
    }
    return out;
  }

 private:
  std::filesystem::path shard_path(std::uint32_t shard) const {
    char name[32];
    std::snprintf(name, sizeof(name), "shard_%05u.bin", shard);
    return manifest_.dir / name;
  }

  void ensure_shard(std::uint32_t shard) {
    while (shard_fds_.size() <= shard) {
      const auto p = shard_path(static_cast<std::uint32_t>(shard_fds_.size()));
      detail::Fd fd(::open(p.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644));
      if (fd.get() < 0) detail::throw_errno("store: opening " + p.string());
      shard_fds_.push_back(std::move(fd));
      shard_end_.push_back(0);
    }
  }

  int shard_fd(std::uint32_t shard) const {
    if (shard >= shard_fds_.size()) throw std::runtime_error("store: catalog references missing shard");
    return shard_fds_[shard].get();
  }

  const CatalogEntry& batch_shape(std::span<const std::uint64_t> ids) const {
    const auto& first = entry(ids.front());
    for (auto id : ids) {
      const auto& e = entry(id);
      if (e.num_heads != first.num_heads || e.seq_len != first.seq_len) {
        throw std::invalid_argument("gather: record " + std::to_string(id) + " has shape " +
                                    std::to_string(e.num_heads) + "x" + std::to_string(e.seq_len) +
                                    ", batch expects " + std::to_string(first.num_heads) + "x" +
                                    std::to_string(first.seq_len));
      }
    }
    return first;
  }

  void copy_into(MappedBatch& batch, std::span<const std::uint64_t> ids, std::size_t stride) const {
    batch.count_ = ids.size();
    batch.fallback_.assign(stride * ids.size() / sizeof(float) + 1, 0.0f);
    auto* dst = reinterpret_cast<std::byte*>(batch.fallback_.data());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const auto& e = entry(ids[i]);
      detail::pread_all(shard_fd(e.shard), dst + i * stride, e.payload_bytes(), e.offset, "gather_mapped fallback");
    }
  }

  static void warn_fallback(const std::string& why) {
    static bool warned = false;
    if (!warned) {
      std::cerr << "memoattn: WARNING: page remapping unavailable (" << why
                << "); gather_mapped falls back to copying\n";
      warned = true;
    }
  }

  StoreOptions opts_;
  StoreManifest manifest_;
  std::unordered_map<std::uint64_t, std::size_t> index_;
  detail::Fd manifest_fd_;
  std::uint64_t manifest_end_ = 0;
  std::vector<detail::Fd> shard_fds_;
  std::vector<std::uint64_t> shard_end_;
};

}  // namespace memoattn
