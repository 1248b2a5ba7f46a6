#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "renetseg/tensor.hpp"

namespace renetseg {

struct CheckpointEntry {
  std::string name;
  Tensor tensor;

  friend bool operator==(const CheckpointEntry&, const CheckpointEntry&) = default;
};

/// Ordered named tensors. Names must be unique.
struct Checkpoint {
  std::vector<CheckpointEntry> entries;

  const Tensor* find(const std::string& name) const;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Binary layout, all integers and reals little-endian:
//   "RSEG" | u32 version | u32 count |
//   count x ( u32 name_len | name | u32 rank | rank x u32 dim | f32 data... )
std::size_t save_checkpoint(const Checkpoint& ckpt, std::ostream& out);
Checkpoint load_checkpoint(std::istream& in);

std::vector<std::uint8_t> checkpoint_bytes(const Checkpoint& ckpt);
Checkpoint checkpoint_from_bytes(const std::vector<std::uint8_t>& bytes);

void save_checkpoint_file(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint_file(const std::string& path);

}  // namespace renetseg
