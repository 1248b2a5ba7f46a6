#include "renetseg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

namespace renetseg {

namespace {

constexpr char kMagic[4] = {'R', 'S', 'E', 'G'};
// Guards against absurd allocations from corrupt headers.
constexpr std::uint32_t kMaxNameLength = 1u << 16;
constexpr std::uint32_t kMaxRank = 16;

void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  void bytes(char* dst, std::size_t n, const char* what) {
    in_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      fail(Errc::truncated, std::string("checkpoint truncated while reading ") + what);
    }
  }

  std::uint32_t u32(const char* what) {
    unsigned char b[4];
    bytes(reinterpret_cast<char*>(b), 4, what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) |
           (static_cast<std::uint32_t>(b[3]) << 24);
  }

 private:
  std::istream& in_;
};

}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& e : entries) {
    if (e.name == name) return &e.tensor;
  }
  return nullptr;
}

std::size_t save_checkpoint(const Checkpoint& ckpt, std::ostream& out) {
  std::set<std::string> seen;
  for (const auto& e : ckpt.entries) {
    if (!seen.insert(e.name).second) {
      fail(Errc::invalid_argument, "duplicate checkpoint entry name: " + e.name);
    }
  }
  std::string buf(kMagic, 4);
  put_u32(buf, kCheckpointVersion);
  put_u32(buf, static_cast<std::uint32_t>(ckpt.entries.size()));
  for (const auto& e : ckpt.entries) {
    put_u32(buf, static_cast<std::uint32_t>(e.name.size()));
    buf += e.name;
    put_u32(buf, static_cast<std::uint32_t>(e.tensor.rank()));
    for (std::size_t d : e.tensor.shape()) put_u32(buf, static_cast<std::uint32_t>(d));
    for (float v : e.tensor.data()) put_u32(buf, std::bit_cast<std::uint32_t>(v));
  }
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) fail(Errc::io, "failed writing checkpoint");
  return buf.size();
}

Checkpoint load_checkpoint(std::istream& in) {
  Reader r(in);
  char magic[4];
  r.bytes(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) fail(Errc::bad_magic, "not a checkpoint: bad magic");
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    fail(Errc::bad_version, "unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint32_t count = r.u32("entry count");
  Checkpoint ckpt;
  std::set<std::string> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = r.u32("name length");
    if (name_len > kMaxNameLength) fail(Errc::malformed_header, "checkpoint name too long");
    std::string name(name_len, '\0');
    r.bytes(name.data(), name_len, "name");
    if (!seen.insert(name).second) {
      fail(Errc::malformed_header, "duplicate checkpoint entry name: " + name);
    }
    const std::uint32_t rank = r.u32("rank");
    if (rank == 0 || rank > kMaxRank) {
      fail(Errc::malformed_header, "bad tensor rank " + std::to_string(rank) + " for " + name);
    }
    Shape shape(rank);
    for (auto& d : shape) {
      d = r.u32("dimension");
      if (d == 0) fail(Errc::malformed_header, "zero dimension in " + name);
    }
    std::vector<float> data(shape_size(shape));
    for (float& v : data) v = std::bit_cast<float>(r.u32("tensor data"));
    ckpt.entries.push_back({std::move(name), Tensor(std::move(shape), std::move(data))});
  }
  return ckpt;
}

std::vector<std::uint8_t> checkpoint_bytes(const Checkpoint& ckpt) {
  std::ostringstream out;
  save_checkpoint(ckpt, out);
  const std::string s = out.str();
  return {s.begin(), s.end()};
}

Checkpoint checkpoint_from_bytes(const std::vector<std::uint8_t>& bytes) {
  std::istringstream in(std::string(bytes.begin(), bytes.end()));
  return load_checkpoint(in);
}

void save_checkpoint_file(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(Errc::io, "cannot open " + path + " for writing");
  save_checkpoint(ckpt, out);
}

Checkpoint load_checkpoint_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::io, "cannot open checkpoint " + path);
  try {
    return load_checkpoint(in);
  } catch (const Error& e) {
    throw Error(e.code(), path + ": " + e.what());
  }
}

}  // namespace renetseg
