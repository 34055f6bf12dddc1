#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace stereoroma {

enum class Errc {
  invalid_argument,
  dimension_mismatch,
  unsupported_format,
  truncated_file,
  size_mismatch,
  io_failure,
  missing_file,
  bad_magic,
  version_mismatch,
  spec_mismatch,
  config_error,
  divergence,
};

std::string_view to_string(Errc code) noexcept;

/// Exception carrying a typed error code. Every module throws this.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, Errc code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace stereoroma
