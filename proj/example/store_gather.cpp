// Writes a few attention maps to a store and gathers them back as one
// contiguous mapped batch.

#include <cstdio>
#include <filesystem>
#include <random>

#include "memoattn/memoattn.hpp"

using namespace memoattn;

int main() {
  const auto dir = std::filesystem::temp_directory_path() / "memoattn_store_demo";
  std::filesystem::remove_all(dir);
  ApmStore store = ApmStore::create(dir);

  std::mt19937_64 rng(3);
  for (std::uint64_t id = 0; id < 8; ++id) {
    const Matrix scores = Matrix::random_normal(64, 64, 1.0f, rng);
    store.put(id, {Apm(softmax_rows(scores))});
  }
  store.flush();

  const std::vector<std::uint64_t> ids{5, 1, 5, 7};
  MappedBatch batch = store.gather_mapped(ids);
  const CopiedBatch copy = store.gather_copy(ids);
  std::printf("gathered %zu records, mapped %s, dense %s\n", batch.size(), batch.is_mapped() ? "yes" : "no",
              batch.dense() ? "yes" : "no");
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto a = batch.record(i), b = copy.record(i);
    std::printf("record %llu: first prob %.6f, equal to copy %s\n", static_cast<unsigned long long>(ids[i]), a[0],
                std::equal(a.begin(), a.end(), b.begin()) ? "yes" : "no");
  }
  release(std::move(batch));
  std::filesystem::remove_all(dir);
}
