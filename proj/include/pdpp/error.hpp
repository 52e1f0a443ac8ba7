#pragma once

#include <stdexcept>
#include <string>

namespace pdpp {

enum class ErrorCode {
  kInvalidArgument = 1,
  kShapeMismatch = 2,
  kIo = 3,
  kFormat = 4,
  kNumeric = 5,
  kInternal = 6,
};

// All library failures surface as this exception type; the C layer maps the
// code onto pdpp_status.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

inline void require(bool ok, ErrorCode code, const std::string& what) {
  if (!ok) fail(code, what);
}

}  // namespace pdpp
