#pragma once

// Little-endian encoding helpers shared by the CFEM/CFDS/CFMD/CFHS formats.

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

namespace coupleface::binary {

class Writer {
 public:
  void magic(std::string_view four_cc);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);

  const std::string& bytes() const noexcept { return buf_; }

 private:
  std::string buf_;
};

// Reads from an in-memory byte buffer. Running past the end throws
// TruncatedFile.
class Reader {
 public:
  explicit Reader(std::string bytes) : buf_(std::move(bytes)) {}

  // Throws BadMagic when the next four bytes differ from `four_cc`.
  void expect_magic(std::string_view four_cc);
  // Throws VersionMismatch when the next u32 differs from `version`.
  void expect_version(std::uint32_t version);
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();

  std::size_t remaining() const noexcept { return buf_.size() - pos_; }
  // Throws TruncatedFile unless `count` more bytes are available.
  void require(std::size_t count) const;

 private:
  std::string buf_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path);

// Writes to a sibling temp file, then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

}  // namespace coupleface::binary
