#pragma once

// SPDX-License-Identifier: Apache-2.0

#include <stdexcept>
#include <string>

namespace los {

/// Raised when an operation receives inputs outside its domain
/// (empty sequences, out-of-range token ids, single-class labels, shape mismatches).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

enum class FormatErrc {
  io,
  truncated,
  bad_magic,
  version_mismatch,
  length_mismatch,
};

inline const char* to_string(FormatErrc c) {
  switch (c) {
    case FormatErrc::io: return "io";
    case FormatErrc::truncated: return "truncated";
    case FormatErrc::bad_magic: return "bad_magic";
    case FormatErrc::version_mismatch: return "version_mismatch";
    case FormatErrc::length_mismatch: return "length_mismatch";
  }
  return "unknown";
}

/// Raised by the binary readers/writers. `code()` distinguishes the failure.
class FormatError : public std::runtime_error {
 public:
  FormatError(FormatErrc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  FormatErrc code() const noexcept { return code_; }

 private:
  FormatErrc code_;
};

}  // namespace los
