#include "renetseg/pnm.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <ostream>
#include <sstream>

namespace renetseg {

namespace {

class HeaderParser {
 public:
  explicit HeaderParser(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  std::size_t number(const char* what) {
    skip_space_and_comments();
    std::size_t value = 0;
    std::size_t digits = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      value = value * 10 + (bytes_[pos_++] - '0');
      if (++digits > 9) fail(Errc::malformed_header, std::string("PNM ") + what + " too large");
    }
    if (digits == 0) {
      if (pos_ >= bytes_.size()) fail(Errc::truncated, std::string("PNM header truncated before ") + what);
      fail(Errc::malformed_header, std::string("PNM header: expected ") + what);
    }
    return value;
  }

  // The single whitespace byte that ends the header.
  void raster_separator() {
    if (pos_ >= bytes_.size()) fail(Errc::truncated, "PNM header truncated");
    if (!std::isspace(bytes_[pos_])) fail(Errc::malformed_header, "PNM header not followed by whitespace");
    ++pos_;
  }

  std::size_t pos() const { return pos_; }

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n' && bytes_[pos_] != '\r') ++pos_;
      } else {
        break;
      }
    }
  }

  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 2;
};

std::uint8_t quantize(float v) {
  const double q = std::round(static_cast<double>(v) * 255.0);
  return static_cast<std::uint8_t>(std::clamp(q, 0.0, 255.0));
}

}  // namespace

Tensor read_pnm(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 2) fail(Errc::truncated, "PNM data too short for a magic number");
  if (bytes[0] != 'P') fail(Errc::bad_magic, "not a PNM file");
  std::size_t channels = 0;
  switch (bytes[1]) {
    case '5': channels = 1; break;
    case '6': channels = 3; break;
    case '1': case '2': case '3': case '4': case '7':
      fail(Errc::unsupported_format,
           std::string("unsupported PNM format P") + static_cast<char>(bytes[1]) +
               " (only binary P5/P6)");
    default:
      fail(Errc::bad_magic, "not a PNM file");
  }
  HeaderParser header(bytes);
  const std::size_t width = header.number("width");
  const std::size_t height = header.number("height");
  const std::size_t maxval = header.number("maxval");
  if (width == 0 || height == 0) fail(Errc::malformed_header, "PNM image has a zero dimension");
  if (maxval != 255) fail(Errc::bad_maxval, "PNM maxval " + std::to_string(maxval) + " unsupported (need 255)");
  header.raster_separator();

  const std::size_t count = width * height * channels;
  if (bytes.size() - header.pos() < count) {
    fail(Errc::truncated, "PNM raster truncated: expected " + std::to_string(count) + " bytes, found " +
                              std::to_string(bytes.size() - header.pos()));
  }
  Tensor t({height, width, channels});
  const std::uint8_t* raster = bytes.data() + header.pos();
  for (std::size_t i = 0; i < count; ++i) t[i] = static_cast<float>(raster[i]) / 255.0f;
  return t;
}

Tensor read_pnm_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::io, "cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return read_pnm(bytes);
  } catch (const Error& e) {
    throw Error(e.code(), path + ": " + e.what());
  }
}

std::size_t write_pnm(const Tensor& t, std::ostream& out) {
  require_rank(t, 3, "write_pnm");
  const std::size_t c = t.dim(2);
  if (c != 1 && c != 3) {
    fail(Errc::shape_mismatch, "write_pnm needs 1 or 3 channels, got " + std::to_string(c));
  }
  std::string buf = std::string(c == 1 ? "P5" : "P6") + "\n" + std::to_string(t.dim(1)) + " " +
                    std::to_string(t.dim(0)) + "\n255\n";
  buf.reserve(buf.size() + t.size());
  for (float v : t.data()) buf.push_back(static_cast<char>(quantize(v)));
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) fail(Errc::io, "failed writing PNM");
  return buf.size();
}

std::vector<std::uint8_t> pnm_bytes(const Tensor& t) {
  std::ostringstream out;
  write_pnm(t, out);
  const std::string s = out.str();
  return {s.begin(), s.end()};
}

void write_pnm_file(const Tensor& t, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(Errc::io, "cannot open " + path + " for writing");
  write_pnm(t, out);
}

}  // namespace renetseg
