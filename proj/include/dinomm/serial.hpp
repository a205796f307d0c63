#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

namespace dinomm {

// IEEE CRC32 (reflected, poly 0xEDB88320), as used by zip/png.
std::uint32_t crc32_ieee(const std::uint8_t* data, std::size_t n, std::uint32_t crc = 0);
std::uint32_t crc32_ieee(const std::vector<std::uint8_t>& data, std::uint32_t crc = 0);

// FNV-1a 64-bit, for config fingerprints.
std::uint64_t fnv1a64(const std::string& text);

// Little-endian byte assembly. All container formats go through these two
// classes so the on-disk layout is independent of host quirks.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u16(std::uint16_t v) { append(&v, 2); }
  void u32(std::uint32_t v) { append(&v, 4); }
  void u64(std::uint64_t v) { append(&v, 8); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(const std::uint8_t* p, std::size_t n) { buf_.insert(buf_.end(), p, p + n); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(reinterpret_cast<const std::uint8_t*>(s.data()), s.size());
  }

  const std::vector<std::uint8_t>& data() const { return buf_; }
  std::size_t size() const { return buf_.size(); }

 private:
  void append(const void* p, std::size_t n) {
    // Serialize little-endian regardless of host order.
    const auto* b = static_cast<const std::uint8_t*>(p);
    if constexpr (std::endian::native == std::endian::little) {
      buf_.insert(buf_.end(), b, b + n);
    } else {
      for (std::size_t i = n; i > 0; --i) buf_.push_back(b[i - 1]);
    }
  }

  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  ByteReader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}
  explicit ByteReader(const std::vector<std::uint8_t>& data) : data_(data.data()), size_(data.size()) {}

  std::uint8_t u8() { return take(1)[0]; }
  std::uint16_t u16() { return load<std::uint16_t>(); }
  std::uint32_t u32() { return load<std::uint32_t>(); }
  std::uint64_t u64() { return load<std::uint64_t>(); }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str();
  const std::uint8_t* raw(std::size_t n) { return take(n); }

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return size_ - pos_; }

 private:
  const std::uint8_t* take(std::size_t n);

  template <typename T>
  T load() {
    const std::uint8_t* p = take(sizeof(T));
    T v;
    std::memcpy(&v, p, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
      std::uint8_t* b = reinterpret_cast<std::uint8_t*>(&v);
      for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    }
    return v;
  }

  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_{0};
};

std::vector<std::uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes);
std::string read_file_text(const std::string& path);
void write_file_text(const std::string& path, const std::string& text);

}  // namespace dinomm
