#include "renetseg/error.hpp"

#include "renetseg/tensor.hpp"

namespace renetseg {

const char* errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::invalid_shape: return "invalid-shape";
    case Errc::shape_mismatch: return "shape";
    case Errc::invalid_seed: return "invalid-seed";
    case Errc::invalid_argument: return "invalid-argument";
    case Errc::invalid_target: return "invalid-target";
    case Errc::invalid_input: return "invalid-input";
    case Errc::config: return "config";
    case Errc::data: return "data";
    case Errc::pairing: return "pairing";
    case Errc::bad_magic: return "bad-magic";
    case Errc::bad_version: return "bad-version";
    case Errc::truncated: return "truncated";
    case Errc::unsupported_format: return "unsupported-format";
    case Errc::bad_maxval: return "bad-maxval";
    case Errc::malformed_header: return "malformed-header";
    case Errc::io: return "io";
  }
  return "unknown";
}

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

}  // namespace renetseg
