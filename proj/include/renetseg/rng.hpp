#pragma once

#include <cstdint>
#include <utility>

#include "renetseg/tensor.hpp"

namespace renetseg {

struct RngStep {
  double value;         // in [0, 1)
  std::uint64_t state;  // successor state, never zero
};

/// One xorshift64* step. The value is the top 53 bits of the scrambled
/// output scaled to [0, 1). Throws Errc::invalid_seed for a zero state.
RngStep rng_next(std::uint64_t state);

/// Convenience wrapper that owns the state. Copying an Rng forks the stream.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  double next_double();
  std::uint64_t next_u64();
  /// Uniform integer in [0, bound). bound must be positive.
  std::size_t next_index(std::size_t bound);
  /// Approximately N(0, 1): sum of twelve uniforms minus six.
  double next_gaussian();

  std::uint64_t state() const noexcept { return state_; }

 private:
  std::uint64_t state_;
};

/// Uniform draws from [-a, a), a = sqrt(6 / (fan_in + fan_out)), filled in
/// row-major order.
Tensor glorot_init(const Shape& shape, std::size_t fan_in, std::size_t fan_out,
                   Rng& rng);

/// Same draw order with a = sqrt(6 / fan_in).
Tensor he_uniform_init(const Shape& shape, std::size_t fan_in, Rng& rng);

}  // namespace renetseg
