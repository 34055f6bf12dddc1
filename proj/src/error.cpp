#include "stereoroma/error.hpp"

namespace stereoroma {

std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::invalid_argument: return "invalid_argument";
    case Errc::dimension_mismatch: return "dimension_mismatch";
    case Errc::unsupported_format: return "unsupported_format";
    case Errc::truncated_file: return "truncated_file";
    case Errc::size_mismatch: return "size_mismatch";
    case Errc::io_failure: return "io_failure";
    case Errc::missing_file: return "missing_file";
    case Errc::bad_magic: return "bad_magic";
    case Errc::version_mismatch: return "version_mismatch";
    case Errc::spec_mismatch: return "spec_mismatch";
    case Errc::config_error: return "config_error";
    case Errc::divergence: return "divergence";
  }
  return "unknown";
}

}  // namespace stereoroma
