#include <gtest/gtest.h>

#include <cstring>
#include <fstream>
#include <random>

#include "memoattn/apm_store.hpp"
#include "test_util.hpp"

using namespace memoattn;
using testutil::TempDir;

namespace {

std::vector<Apm> random_apms(std::size_t heads, std::size_t seq, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Apm> out;
  for (std::size_t h = 0; h < heads; ++h) {
    out.emplace_back(softmax_rows(Matrix::random_normal(seq, seq, 2.0f, rng)));
  }
  return out;
}

std::vector<float> flat(const std::vector<Apm>& apms) {
  std::vector<float> out;
  for (const auto& a : apms) out.insert(out.end(), a.probs.values().begin(), a.probs.values().end());
  return out;
}

std::vector<unsigned char> file_bytes(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

template <typename T>
T le_at(const std::vector<unsigned char>& b, std::size_t pos) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(b.at(pos + i)) << (8 * i));
  return v;
}

bool same_span(std::span<const float> a, std::span<const float> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size_bytes()) == 0;
}

}  // namespace

TEST(ApmStore, CreateEmptyAndReopen) {
  TempDir dir("store");
  {
    auto s = ApmStore::create(dir.path(), 4096);
    EXPECT_EQ(s.size(), 0u);
    EXPECT_EQ(s.page_size(), 4096u);
  }
  auto s = ApmStore::open(dir.path());
  EXPECT_EQ(s.size(), 0u);
  EXPECT_EQ(s.manifest().version, kStoreFormatVersion);
  EXPECT_THROW(ApmStore::create(dir.path(), 8192), std::runtime_error);
  EXPECT_NO_THROW(ApmStore::create(dir.path(), 4096));
}

TEST(ApmStore, RejectsBadPageSizeAndVersion) {
  TempDir dir("store");
  EXPECT_THROW(ApmStore::create(dir.path(), 3000), std::invalid_argument);
  { ApmStore::create(dir.path(), 4096); }
  auto bytes = file_bytes(dir / "manifest.bin");
  bytes[4] = 2;
  std::ofstream(dir / "manifest.bin", std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()),
                                                              static_cast<std::streamsize>(bytes.size()));
  EXPECT_THROW(ApmStore::open(dir.path()), std::runtime_error);
  EXPECT_THROW(ApmStore::open(dir / "missing"), std::runtime_error);
}

TEST(ApmStore, PutGetRoundTripMixedShapes) {
  TempDir dir("store");
  auto s = ApmStore::create(dir.path(), 4096);
  const auto a = random_apms(2, 5, 1), b = random_apms(4, 17, 2);
  s.put(10, a);
  s.put(3, b);
  EXPECT_EQ(s.get(10), a);
  EXPECT_EQ(s.get(3), b);
  EXPECT_TRUE(s.validate(10));
  EXPECT_THROW(s.put(10, a), std::invalid_argument);
  EXPECT_THROW(s.get(99), std::out_of_range);
  EXPECT_THROW(s.put(11, {}), std::invalid_argument);
  EXPECT_THROW(s.put_raw(12, 1, 3, std::vector<float>(8)), std::invalid_argument);
}

TEST(ApmStore, ManifestByteLayout) {
  TempDir dir("store");
  const auto apms = random_apms(3, 7, 4);
  {
    auto s = ApmStore::create(dir.path(), 4096);
    s.put(0x0102030405060708ULL, apms);
    s.flush();
  }
  const auto b = file_bytes(dir / "manifest.bin");
  ASSERT_EQ(b.size(), 12u + 30u);
  EXPECT_EQ(std::string(b.begin(), b.begin() + 4), "MAPM");
  EXPECT_EQ(le_at<std::uint32_t>(b, 4), 1u);
  EXPECT_EQ(le_at<std::uint32_t>(b, 8), 4096u);
  EXPECT_EQ(le_at<std::uint64_t>(b, 12), 0x0102030405060708ULL);
  EXPECT_EQ(le_at<std::uint32_t>(b, 20), 0u);
  EXPECT_EQ(le_at<std::uint64_t>(b, 24), 0u);
  EXPECT_EQ(le_at<std::uint16_t>(b, 32), 3u);
  EXPECT_EQ(le_at<std::uint32_t>(b, 34), 7u);
  const auto payload = flat(apms);
  const auto crc = ::crc32(0L, reinterpret_cast<const Bytef*>(payload.data()),
                           static_cast<uInt>(payload.size() * sizeof(float)));
  EXPECT_EQ(le_at<std::uint32_t>(b, 38), crc);
}

// Offsets decoded straight from the manifest bytes are page aligned, padded
// with zeros and never overlap.
TEST(ApmStore, OffsetsAlignedAndDisjoint) {
  TempDir dir("store");
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<std::size_t> len(1, 40);
  {
    auto s = ApmStore::create(dir.path(), 4096);
    for (std::uint64_t id = 0; id < 1000; ++id) s.put(id, random_apms(1 + id % 3, len(rng), id));
    s.flush();
  }
  const auto b = file_bytes(dir / "manifest.bin");
  ASSERT_EQ(b.size(), 12u + 1000u * 30u);
  const auto shard = file_bytes(dir / "shard_00000.bin");
  std::vector<std::pair<std::uint64_t, std::uint64_t>> spans;
  for (std::size_t i = 0; i < 1000; ++i) {
    const std::size_t pos = 12 + i * 30;
    EXPECT_EQ(le_at<std::uint64_t>(b, pos), i);
    const auto off = le_at<std::uint64_t>(b, pos + 12);
    const auto heads = le_at<std::uint16_t>(b, pos + 20);
    const auto seq = le_at<std::uint32_t>(b, pos + 22);
    const std::uint64_t bytes = std::uint64_t{heads} * seq * seq * 4;
    EXPECT_EQ(off % 4096, 0u);
    spans.emplace_back(off, off + bytes);
    const std::uint64_t padded_end = (off + bytes + 4095) / 4096 * 4096;
    ASSERT_LE(padded_end, shard.size());
    for (std::uint64_t p = off + bytes; p < padded_end; ++p) ASSERT_EQ(shard[p], 0) << "record " << i;
  }
  std::sort(spans.begin(), spans.end());
  for (std::size_t i = 1; i < spans.size(); ++i) EXPECT_LE(spans[i - 1].second, spans[i].first);
  auto s = ApmStore::open(dir.path());
  EXPECT_EQ(s.size(), 1000u);
  for (std::uint64_t id = 0; id < 1000; id += 97) EXPECT_TRUE(s.validate(id));
}

TEST(ApmStore, ShardRollover) {
  TempDir dir("store");
  auto s = ApmStore::create(dir.path(), 4096, StoreOptions{.shard_bytes = 3 * 4096});
  for (std::uint64_t id = 0; id < 7; ++id) s.put(id, random_apms(1, 32, id));
  EXPECT_EQ(s.entry(0).shard, 0u);
  EXPECT_EQ(s.entry(6).shard, 2u);
  s.flush();
  auto r = ApmStore::open(dir.path());
  for (std::uint64_t id = 0; id < 7; ++id) EXPECT_EQ(r.get(id), random_apms(1, 32, id));
}

TEST(ApmStore, ValidateDetectsCorruption) {
  TempDir dir("store");
  {
    auto s = ApmStore::create(dir.path(), 4096);
    s.put(1, random_apms(1, 8, 1));
    s.flush();
  }
  {
    std::fstream f(dir / "shard_00000.bin", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(5);
    f.put('\x7f');
  }
  EXPECT_FALSE(ApmStore::open(dir.path()).validate(1));
}

TEST(ApmStore, GatherMappedMatchesPayloads) {
  TempDir dir("store");
  auto s = ApmStore::create(dir.path());
  for (std::uint64_t id = 0; id < 8; ++id) s.put(id, random_apms(2, 24, id));
  const std::vector<std::uint64_t> one{5};
  auto single = s.gather_mapped(one);
  ASSERT_TRUE(single.is_mapped());
  EXPECT_TRUE(same_span(single.record(0), flat(random_apms(2, 24, 5))));

  const std::vector<std::uint64_t> ab{2, 6}, ba{6, 2};
  auto m1 = s.gather_mapped(ab), m2 = s.gather_mapped(ba);
  EXPECT_TRUE(same_span(m1.record(0), m2.record(1)));
  EXPECT_TRUE(same_span(m1.record(1), m2.record(0)));

  const std::vector<std::uint64_t> all{7, 0, 3, 3, 1};
  auto mapped = s.gather_mapped(all);
  const auto copied = s.gather_copy(all);
  ASSERT_EQ(mapped.size(), copied.count);
  for (std::size_t i = 0; i < all.size(); ++i) EXPECT_TRUE(same_span(mapped.record(i), copied.record(i)));
  release(std::move(mapped));
  EXPECT_FALSE(mapped.is_mapped());
}

TEST(ApmStore, GatherEmptyAndShapeMismatch) {
  TempDir dir("store");
  auto s = ApmStore::create(dir.path());
  s.put(1, random_apms(1, 4, 1));
  s.put(2, random_apms(1, 5, 2));
  auto empty = s.gather_mapped({});
  EXPECT_TRUE(empty.empty());
  release(std::move(empty));
  EXPECT_TRUE(s.gather_copy({}).data.empty());
  const std::vector<std::uint64_t> mixed{1, 2};
  EXPECT_THROW(s.gather_mapped(mixed), std::invalid_argument);
  EXPECT_THROW(s.gather_copy(mixed), std::invalid_argument);
  const std::vector<std::uint64_t> missing{9};
  EXPECT_THROW(s.gather_mapped(missing), std::out_of_range);
}

TEST(ApmStore, MapReleaseMapIsStable) {
  TempDir dir("store");
  auto s = ApmStore::create(dir.path());
  for (std::uint64_t id = 0; id < 4; ++id) s.put(id, random_apms(1, 32, id));
  const std::vector<std::uint64_t> ids{3, 1, 2};
  auto a = s.gather_mapped(ids);
  const std::vector<float> first(a.tensor().begin(), a.tensor().end());
  release(std::move(a));
  auto b = s.gather_mapped(ids);
  EXPECT_TRUE(same_span(first, b.tensor()));
}

TEST(ApmStore, LargeBatchMatchesCopy) {
  TempDir dir("store");
  auto s = ApmStore::create(dir.path());
  std::vector<std::uint64_t> ids;
  std::mt19937_64 rng(8);
  std::normal_distribution<float> nd;
  std::vector<float> payload(512 * 512);
  for (std::uint64_t id = 0; id < 64; ++id) {
    for (auto& v : payload) v = nd(rng);
    s.put_raw(id, 1, 512, payload);
    ids.push_back(63 - id);
  }
  auto mapped = s.gather_mapped(ids);
  const auto copied = s.gather_copy(ids);
  EXPECT_TRUE(mapped.dense());
  EXPECT_TRUE(same_span(mapped.tensor(), copied.data));
}

TEST(ApmStoreDeathTest, MappedPagesAreReadOnly) {
  ::testing::FLAGS_gtest_death_test_style = "threadsafe";
  TempDir dir("store");
  auto s = ApmStore::create(dir.path());
  s.put(1, random_apms(1, 8, 1));
  const std::vector<std::uint64_t> ids{1};
  auto batch = s.gather_mapped(ids);
  ASSERT_TRUE(batch.is_mapped());
  auto* p = const_cast<float*>(batch.record(0).data());
  EXPECT_DEATH({ *static_cast<volatile float*>(p) = 1.0f; }, "");
}

TEST(ApmStore, RepeatedMapReleaseDoesNotGrowAddressSpace) {
  TempDir dir("store");
  auto s = ApmStore::create(dir.path());
  for (std::uint64_t id = 0; id < 16; ++id) s.put(id, random_apms(1, 64, id));
  std::vector<std::uint64_t> ids(16);
  std::iota(ids.begin(), ids.end(), 0);
  std::size_t footprint = 0;
  {
    auto b = s.gather_mapped(ids);
    footprint = b.reserved_bytes();
  }
  const auto before = process_vm_bytes();
  for (int i = 0; i < 10000; ++i) {
    auto b = s.gather_mapped(ids);
    release(std::move(b));
  }
  EXPECT_LE(process_vm_bytes(), before + footprint);
}

TEST(ApmStore, CopyFallbackBelowOsPageSize) {
  ASSERT_GT(os_page_size(), 1024u);
  TempDir dir("store");
  auto s = ApmStore::create(dir.path(), 1024);
  EXPECT_FALSE(s.remap_supported());
  for (std::uint64_t id = 0; id < 5; ++id) s.put(id, random_apms(1, 20, id));
  const std::vector<std::uint64_t> ids{4, 0, 2};
  auto b = s.gather_mapped(ids);
  EXPECT_FALSE(b.is_mapped());
  const auto c = s.gather_copy(ids);
  for (std::size_t i = 0; i < ids.size(); ++i) EXPECT_TRUE(same_span(b.record(i), c.record(i)));
}

TEST(ApmStore, LargerPageSizeStillMaps) {
  TempDir dir("store");
  auto s = ApmStore::create(dir.path(), 4 * os_page_size());
  EXPECT_TRUE(s.remap_supported());
  for (std::uint64_t id = 0; id < 3; ++id) s.put(id, random_apms(2, 9, id));
  const std::vector<std::uint64_t> ids{2, 0};
  auto b = s.gather_mapped(ids);
  EXPECT_TRUE(b.is_mapped());
  EXPECT_FALSE(b.dense());
  EXPECT_TRUE(same_span(b.record(0), flat(random_apms(2, 9, 2))));
}

TEST(ApmStore, SurvivesReopen) {
  TempDir dir("store");
  {
    auto s = ApmStore::create(dir.path());
    for (std::uint64_t id = 0; id < 20; ++id) s.put(id * 3, random_apms(2, 11, id));
    s.flush();
  }
  auto s = ApmStore::create(dir.path());
  EXPECT_EQ(s.size(), 20u);
  s.put(1000, random_apms(1, 3, 1000));
  for (std::uint64_t id = 0; id < 20; ++id) EXPECT_EQ(s.get(id * 3), random_apms(2, 11, id));
  const std::vector<std::uint64_t> ids{57, 0};
  auto b = s.gather_mapped(ids);
  EXPECT_TRUE(same_span(b.record(0), flat(random_apms(2, 11, 19))));
  EXPECT_EQ(ApmStore::open(dir.path()).get(1000), random_apms(1, 3, 1000));
}

// With the record count fixed, mapping cost barely depends on record size
// while copying scales with bytes.
TEST(ApmStore, MappedGatherCostIndependentOfRecordSize) {
  TempDir dir("store");
  auto s = ApmStore::create(dir.path());
  std::vector<float> small(4 * 128 * 128, 0.25f), large(4 * 512 * 512, 0.5f);
  std::vector<std::uint64_t> small_ids, large_ids;
  for (std::uint64_t i = 0; i < 16; ++i) {
    s.put_raw(i, 4, 128, small);
    s.put_raw(100 + i, 4, 512, large);
    small_ids.push_back(i);
    large_ids.push_back(100 + i);
  }
  auto map_time = [&](const std::vector<std::uint64_t>& ids) {
    return testutil::min_time_ms(30, [&] { release(s.gather_mapped(ids)); });
  };
  auto copy_time = [&](const std::vector<std::uint64_t>& ids) {
    return testutil::min_time_ms(10, [&] { s.gather_copy(ids); });
  };
  const double ms = map_time(small_ids), ml = map_time(large_ids);
  const double cs = copy_time(small_ids), cl = copy_time(large_ids);
  EXPECT_LT(ml, 2.0 * ms) << ms << " -> " << ml;
  EXPECT_GE(cl, 3.0 * cs) << cs << " -> " << cl;
}
