#pragma once

#include <cstdint>
#include <cstring>
#include <span>
#include <string_view>

namespace kvlad {

// FNV-1a, 64 bit. Used for artifact fingerprints that tie maps, projectors
// and codebooks to the training run that produced them.
class Fnv1a {
 public:
  Fnv1a& bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      state_ ^= p[i];
      state_ *= 0x100000001B3ULL;
    }
    return *this;
  }

  Fnv1a& u64(std::uint64_t v) { return bytes(&v, sizeof(v)); }
  Fnv1a& u32(std::uint32_t v) { return bytes(&v, sizeof(v)); }
  Fnv1a& u8(std::uint8_t v) { return bytes(&v, sizeof(v)); }

  Fnv1a& f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    return u64(bits);
  }

  Fnv1a& f64s(std::span<const double> vs) {
    for (double v : vs) f64(v);
    return *this;
  }

  Fnv1a& str(std::string_view s) { return bytes(s.data(), s.size()); }

  std::uint64_t value() const { return state_; }

 private:
  std::uint64_t state_ = 0xCBF29CE484222325ULL;
};

}  // namespace kvlad
