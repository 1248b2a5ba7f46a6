#include "renetseg/rng.hpp"

#include <cmath>

namespace renetseg {

namespace {

constexpr std::uint64_t kMultiplier = 2685821657736338717ULL;

std::uint64_t advance(std::uint64_t x) {
  x ^= x >> 12;
  x ^= x << 25;
  x ^= x >> 27;
  return x;
}

}  // namespace

RngStep rng_next(std::uint64_t state) {
  if (state == 0) fail(Errc::invalid_seed, "rng state must be nonzero");
  const std::uint64_t next = advance(state);
  const std::uint64_t out = next * kMultiplier;
  return {static_cast<double>(out >> 11) * 0x1.0p-53, next};
}

Rng::Rng(std::uint64_t seed) : state_(seed) {
  if (seed == 0) fail(Errc::invalid_seed, "rng seed must be nonzero");
}

double Rng::next_double() {
  const RngStep step = rng_next(state_);
  state_ = step.state;
  return step.value;
}

std::uint64_t Rng::next_u64() {
  state_ = advance(state_);
  return state_ * kMultiplier;
}

std::size_t Rng::next_index(std::size_t bound) {
  if (bound == 0) fail(Errc::invalid_argument, "next_index bound is zero");
  const auto i = static_cast<std::size_t>(next_double() * static_cast<double>(bound));
  return i < bound ? i : bound - 1;
}

double Rng::next_gaussian() {
  double sum = 0.0;
  for (int i = 0; i < 12; ++i) sum += next_double();
  return sum - 6.0;
}

Tensor glorot_init(const Shape& shape, std::size_t fan_in, std::size_t fan_out,
                   Rng& rng) {
  if (fan_in == 0 || fan_out == 0) {
    fail(Errc::invalid_argument, "glorot_init requires positive fans");
  }
  Tensor t(shape);
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (float& v : t.data()) {
    v = static_cast<float>((2.0 * rng.next_double() - 1.0) * bound);
  }
  return t;
}

Tensor he_uniform_init(const Shape& shape, std::size_t fan_in, Rng& rng) {
  if (fan_in == 0) fail(Errc::invalid_argument, "he_uniform_init requires a positive fan_in");
  Tensor t(shape);
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (float& v : t.data()) {
    v = static_cast<float>((2.0 * rng.next_double() - 1.0) * bound);
  }
  return t;
}

}  // namespace renetseg
