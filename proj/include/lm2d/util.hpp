#pragma once

#include <algorithm>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lm2d/error.hpp"

namespace lm2d {

/// Hex SHA-256 of a byte buffer.
std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(std::string_view text);
/// Hex SHA-256 of a file's contents; throws DataError if unreadable.
std::string file_digest(const std::filesystem::path& path);

/// 64-bit FNV-1a; stable across platforms, used for text keys and split hashing.
std::uint64_t fnv1a64(std::string_view text, std::uint64_t seed = 0);
/// splitmix64 finalizer. FNV-1a leaves its high bits nearly unchanged for
/// keys differing only in the last bytes; mix before using them as a uniform.
std::uint64_t mix64(std::uint64_t x);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

/// Runs body(i) for i in [0, count) on up to `threads` workers. Each index is
/// executed exactly once; callers write results into per-index slots so that
/// reductions afterwards happen in index order regardless of thread count.
void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& body);

/// Little-endian byte sink.
class ByteWriter {
 public:
  void u16(std::uint16_t v) { put(v); }
  void u32(std::uint32_t v) { put(v); }
  void u64(std::uint64_t v) { put(v); }
  void f32(float v) { put(v); }
  void raw(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  void f32s(std::span<const float> v) {
    for (float x : v) f32(x);
  }
  const std::vector<std::uint8_t>& bytes() const { return bytes_; }

 private:
  template <typename T>
  void put(T v) {
    std::uint8_t buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    bytes_.insert(bytes_.end(), buf, buf + sizeof(T));
  }
  std::vector<std::uint8_t> bytes_;
};

/// Little-endian byte source; every read failure throws ParseError with the
/// offset at which the read was attempted.
class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> bytes, std::string context)
      : bytes_(bytes), context_(std::move(context)) {}

  std::uint16_t u16() { return get<std::uint16_t>(); }
  std::uint32_t u32() { return get<std::uint32_t>(); }
  std::uint64_t u64() { return get<std::uint64_t>(); }
  float f32() { return get<float>(); }
  std::string raw(std::size_t n) {
    require(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void f32s(std::span<float> out) {
    require(out.size() * sizeof(float));
    for (float& x : out) x = f32();
  }
  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  [[noreturn]] void fail(const std::string& what) const { throw ParseError(context_ + ": " + what, pos_); }

 private:
  void require(std::size_t n) const {
    if (remaining() < n)
      throw ParseError(context_ + ": truncated, expected " + std::to_string(n) + " more bytes but only " +
                           std::to_string(remaining()) + " remain",
                       pos_);
  }
  template <typename T>
  T get() {
    require(sizeof(T));
    std::uint8_t buf[sizeof(T)];
    std::memcpy(buf, bytes_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    T v;
    std::memcpy(&v, buf, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::span<const std::uint8_t> bytes_;
  std::string context_;
  std::size_t pos_ = 0;
};

}  // namespace lm2d
