#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace optdist {

/// Library-wide exception. `code()` is a stable, machine-readable token
/// (e.g. "dimension_mismatch"); `what()` is the human-readable detail.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

inline void require(bool condition, const char* code, const std::string& message) {
  if (!condition) throw Error(code, message);
}

}  // namespace optdist
