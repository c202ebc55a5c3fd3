#pragma once

#include <openssl/evp.h>
#include <openssl/sha.h>

#include <array>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <span>
#include <string>
#include <string_view>

namespace corpuskit {

using Sha1Digest = std::array<unsigned char, SHA_DIGEST_LENGTH>;

inline Sha1Digest sha1(std::span<const unsigned char> bytes) {
  Sha1Digest out{};
  SHA1(bytes.data(), bytes.size(), out.data());
  return out;
}

inline Sha1Digest sha1(std::string_view text) {
  return sha1(std::span(reinterpret_cast<const unsigned char*>(text.data()), text.size()));
}

// Incremental SHA-1 for payloads streamed from disk.
class Sha1Stream {
 public:
  Sha1Stream() : ctx_(EVP_MD_CTX_new(), &EVP_MD_CTX_free) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha1(), nullptr) != 1)
      throw std::runtime_error("sha1 init failed");
  }
  void update(std::span<const unsigned char> bytes) {
    EVP_DigestUpdate(ctx_.get(), bytes.data(), bytes.size());
  }
  Sha1Digest finish() {
    Sha1Digest out{};
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx_.get(), out.data(), &len);
    return out;
  }

 private:
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

inline std::string to_hex(std::span<const unsigned char> bytes) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (unsigned char b : bytes) {
    out.push_back(kDigits[b >> 4]);
    out.push_back(kDigits[b & 0xF]);
  }
  return out;
}

// First eight digest bytes read as a little-endian integer (the low-order
// 64 bits of the digest in that byte order).
inline std::uint64_t sha1_low64(std::string_view text) {
  const auto d = sha1(text);
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | d[static_cast<std::size_t>(i)];
  return v;
}

// splitmix64: counter-based generator, state advances by the golden gamma.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

  std::uint64_t next() noexcept {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Unbiased value in [0, bound) by rejection. bound must be > 0.
  std::uint64_t bounded(std::uint64_t bound) noexcept {
    const std::uint64_t threshold = (0 - bound) % bound;
    for (;;) {
      const std::uint64_t x = next();
      if (x >= threshold) return x % bound;
    }
  }

 private:
  std::uint64_t state_;
};

}  // namespace corpuskit
