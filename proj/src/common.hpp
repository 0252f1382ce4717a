#pragma once

#include <cstdint>
#include <stdexcept>
#include <sstream>
#include <string>

namespace cfasl {

/// Error categories; values double as process exit codes for the CLI.
enum class ErrorCode : int {
  ok = 0,
  invalid_argument = 2,
  numerical = 3,
  io = 4,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& msg)
      : std::runtime_error(msg), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void throw_invalid(const std::string& msg) {
  throw Error(ErrorCode::invalid_argument, msg);
}
[[noreturn]] inline void throw_numerical(const std::string& msg) {
  throw Error(ErrorCode::numerical, msg);
}
[[noreturn]] inline void throw_io(const std::string& msg) {
  throw Error(ErrorCode::io, msg);
}

#define CFASL_CHECK_ARG(cond, msg)        \
  do {                                    \
    if (!(cond)) ::cfasl::throw_invalid(msg); \
  } while (0)

}  // namespace cfasl
