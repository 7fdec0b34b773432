#pragma once

#include <bit>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace fisherscope {

/// Incremental FNV-1a content digest used for fingerprints.
class Digest {
 public:
  Digest& bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      state_ ^= p[i];
      state_ *= 0x100000001b3ULL;
    }
    return *this;
  }
  Digest& text(std::string_view s) {
    update(static_cast<std::uint64_t>(s.size()));
    return bytes(s.data(), s.size());
  }
  Digest& update(std::uint64_t v) {
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
    return bytes(buf, 8);
  }
  Digest& update(double v) { return update(std::bit_cast<std::uint64_t>(v)); }
  Digest& update(std::span<const double> values) {
    update(static_cast<std::uint64_t>(values.size()));
    for (double v : values) update(v);
    return *this;
  }

  std::uint64_t value() const { return state_; }
  std::string hex() const;

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

inline std::string Digest::hex() const {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 0; i < 16; ++i) out[15 - i] = kDigits[(state_ >> (4 * i)) & 0xf];
  return out;
}

}  // namespace fisherscope
