#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "pdpp/error.hpp"

namespace pdpp {

// Little-endian byte writer/reader used by the checkpoint and dataset
// containers. Reader errors carry the byte offset where decoding failed.
class ByteWriter {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFF));
  }
  void f32(float f) {
    std::uint32_t v;
    std::memcpy(&v, &f, 4);
    u32(v);
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  const std::vector<unsigned char>& data() const { return buf_; }

 private:
  std::vector<unsigned char> buf_;
};

class ByteReader {
 public:
  ByteReader(const std::vector<unsigned char>& buf, std::string what) : buf_(buf), what_(std::move(what)) {}

  std::size_t offset() const { return pos_; }
  bool at_end() const { return pos_ == buf_.size(); }
  std::size_t remaining() const { return buf_.size() - pos_; }

  void need(std::size_t n, const char* field) const {
    if (buf_.size() - pos_ < n)
      fail(ErrorCode::kFormat, what_ + ": truncated while reading " + field + " at byte offset " + std::to_string(pos_));
  }
  std::string fixed(std::size_t n, const char* field) {
    need(n, field);
    std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::uint32_t u32(const char* field) {
    need(4, field);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32(const char* field) {
    const std::uint32_t v = u32(field);
    float f;
    std::memcpy(&f, &v, 4);
    return f;
  }
  std::string str(const char* field) {
    const std::uint32_t n = u32(field);
    return fixed(n, field);
  }
  [[noreturn]] void error(const std::string& msg) const {
    fail(ErrorCode::kFormat, what_ + ": " + msg + " at byte offset " + std::to_string(pos_));
  }

 private:
  const std::vector<unsigned char>& buf_;
  std::string what_;
  std::size_t pos_ = 0;
};

std::vector<unsigned char> read_file_bytes(const std::string& path);
// Writes via a temporary sibling and rename so readers never see partial files.
void write_file_atomic(const std::string& path, const std::vector<unsigned char>& bytes);
void write_text_atomic(const std::string& path, const std::string& text);

}  // namespace pdpp
