#pragma once

#include <stdexcept>
#include <string>

namespace scd {

// Every failure carries a short machine-readable code (e.g. "shape_mismatch")
// next to the human-readable message. The CLI prints both on one line.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

[[noreturn]] inline void fail(std::string code, const std::string& message) {
  throw Error(std::move(code), message);
}

inline void require(bool condition, const char* code, const std::string& message) {
  if (!condition) fail(code, message);
}

}  // namespace scd
