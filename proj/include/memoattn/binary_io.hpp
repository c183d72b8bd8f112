#pragma once

// Little-endian scalar and array (de)serialization for the engine's binary
// asset formats.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

namespace memoattn::io {

static_assert(std::endian::native == std::endian::little, "asset formats assume a little-endian host");

template <typename T>
  requires std::is_arithmetic_v<T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
  requires std::is_arithmetic_v<T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("unexpected end of file");
  return v;
}

template <typename T>
void put_array(std::ostream& os, std::span<const T> v) {
  os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size_bytes()));
}

template <typename T>
std::vector<T> get_array(std::istream& is, std::size_t n) {
  std::vector<T> v(n);
  is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(T)));
  if (!is) throw std::runtime_error("unexpected end of file");
  return v;
}

inline void put_magic(std::ostream& os, std::string_view magic) { os.write(magic.data(), 4); }

inline void expect_magic(std::istream& is, std::string_view magic) {
  std::array<char, 4> buf{};
  is.read(buf.data(), 4);
  if (!is || std::string_view(buf.data(), 4) != magic) {
    throw std::runtime_error("bad magic: expected " + std::string(magic));
  }
}

}  // namespace memoattn::io
