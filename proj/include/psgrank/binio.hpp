#pragma once

// Little-endian primitives for the index and checkpoint files.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>

#include "psgrank/errors.hpp"

namespace psgrank::binio {

template <typename T>
T to_little(T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
    std::memcpy(&value, bytes, sizeof(T));
  }
  return value;
}

template <typename T>
void put(std::ostream& out, T value) {
  value = to_little(value);
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw IoError("unexpected end of binary file");
  return to_little(value);
}

inline void put_string(std::ostream& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& in, std::uint32_t max_len = 1u << 30) {
  auto n = get<std::uint32_t>(in);
  if (n > max_len) throw IoError("string length " + std::to_string(n) + " exceeds limit");
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw IoError("unexpected end of binary file");
  return s;
}

}  // namespace psgrank::binio
