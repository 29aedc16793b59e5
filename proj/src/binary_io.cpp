#include "coupleface/binary_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <system_error>

#include "coupleface/error.hpp"

namespace coupleface::binary {

namespace {

template <typename T>
void put_le(std::string& buf, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    buf.push_back(static_cast<char>(static_cast<unsigned char>(v >> (8 * i))));
  }
}

}  // namespace

void Writer::magic(std::string_view four_cc) { buf_.append(four_cc.substr(0, 4)); }
void Writer::u32(std::uint32_t v) { put_le(buf_, v); }
void Writer::u64(std::uint64_t v) { put_le(buf_, v); }
void Writer::f32(float v) { put_le(buf_, std::bit_cast<std::uint32_t>(v)); }

void Reader::require(std::size_t count) const {
  if (remaining() < count) {
    fail(ErrorCode::kTruncatedFile, "need " + std::to_string(count) + " bytes, " +
                                        std::to_string(remaining()) + " left");
  }
}

void Reader::expect_magic(std::string_view four_cc) {
  if (remaining() < 4 || std::string_view(buf_).substr(pos_, 4) != four_cc) {
    fail(ErrorCode::kBadMagic, "expected magic " + std::string(four_cc));
  }
  pos_ += 4;
}

void Reader::expect_version(std::uint32_t version) {
  std::uint32_t v = u32();
  if (v != version) {
    fail(ErrorCode::kVersionMismatch,
         "file version " + std::to_string(v) + ", supported " + std::to_string(version));
  }
}

std::uint32_t Reader::u32() {
  require(4);
  std::uint32_t v = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
  }
  pos_ += 4;
  return v;
}

std::uint64_t Reader::u64() {
  require(8);
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < 8; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
  }
  pos_ += 8;
  return v;
}

float Reader::f32() { return std::bit_cast<float>(u32()); }

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) fail(ErrorCode::kIoError, "read failed: " + path.string());
  return std::move(ss).str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::kIoError, "cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) fail(ErrorCode::kIoError, "write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ErrorCode::kIoError, "rename to " + path.string() + " failed: " + ec.message());
}

}  // namespace coupleface::binary
