#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace cdsgen {

// 64-bit FNV-1a. Used for artifact checksums, not for security.
class Fnv1a {
 public:
  void update(std::string_view bytes) {
    for (unsigned char c : bytes) {
      h_ ^= c;
      h_ *= 0x100000001b3ULL;
    }
  }
  void update(const void* data, std::size_t n) {
    update(std::string_view(static_cast<const char*>(data), n));
  }
  std::uint64_t digest() const { return h_; }
  std::string hex() const;

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

std::string to_hex(std::uint64_t v);
std::string checksum_string(std::string_view bytes);
// Throws IoError if the file cannot be read.
std::string checksum_file(const std::filesystem::path& path);

}  // namespace cdsgen
