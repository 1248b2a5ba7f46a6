#pragma once

#include <stdexcept>
#include <string>

namespace renetseg {

enum class Errc {
  invalid_shape,
  shape_mismatch,
  invalid_seed,
  invalid_argument,
  invalid_target,
  invalid_input,
  config,
  data,
  pairing,
  bad_magic,
  bad_version,
  truncated,
  unsupported_format,
  bad_maxval,
  malformed_header,
  io,
};

const char* errc_name(Errc code) noexcept;

/// Every failure raised by the library. `code()` distinguishes the cause so
/// callers (the CLI in particular) can map failures onto exit statuses.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) {
  throw Error(code, what);
}

}  // namespace renetseg
