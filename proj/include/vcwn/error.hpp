#pragma once

#include <stdexcept>
#include <string>

namespace vcwn {

enum class ErrorCode {
  kInvalidArgument = 1,
  kConfig,
  kIo,
  kFormat,
  kMissingModel,
  kNonFinite,
  kPrecondition,
  kDivergence,
};

// Single exception type for the library; the C API maps `code()` onto its
// status values.
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
  if (!ok) throw Error(code, what);
}

}  // namespace vcwn
