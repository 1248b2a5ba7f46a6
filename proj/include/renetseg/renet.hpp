#pragma once

#include <array>
#include <utility>
#include <vector>

#include "renetseg/tensor.hpp"

namespace renetseg {

/// Non-overlapping decomposition of an (h, w, c) map into a
/// grid_rows x grid_cols grid of patch_h x patch_w patches. Each patch is
/// flattened row-major over space with channels innermost.
template <typename T>
struct PatchGrid {
  std::size_t grid_rows = 0, grid_cols = 0;
  std::size_t patch_h = 0, patch_w = 0, channels = 0;
  std::vector<std::vector<T>> patches;  // grid_rows * grid_cols, row-major

  std::size_t patch_length() const { return patch_h * patch_w * channels; }
  const std::vector<T>& patch(std::size_t i, std::size_t j) const {
    return patches[i * grid_cols + j];
  }
  /// The grid as a (grid_rows, grid_cols, patch_length) map.
  BasicTensor<T> as_map() const;
};

template <typename T>
PatchGrid<T> split_patches(const BasicTensor<T>& feature, std::size_t patch_h,
                           std::size_t patch_w);
template <typename T>
BasicTensor<T> merge_patches(const PatchGrid<T>& grid);

/// Down and up run along columns (down visits rows top to bottom); right and
/// left run along rows (right visits columns left to right).
enum class Direction { down, up, right, left };

const char* direction_name(Direction d);
inline bool is_vertical(Direction d) { return d == Direction::down || d == Direction::up; }

/// Vanilla tanh recurrent cell: z_t = tanh(x_t W_x + z_{t-1} W_z + b), z_0 = 0.
template <typename T>
struct SweepParams {
  BasicTensor<T> input_weights;      // p x U
  BasicTensor<T> recurrent_weights;  // U x U
  BasicTensor<T> bias;               // U

  std::size_t units() const { return bias.dim(0); }
  std::size_t input_length() const { return input_weights.dim(0); }
};

template <typename T>
SweepParams<T> zero_sweep_params(std::size_t input_length, std::size_t units);

template <typename T>
struct SweepOutput {
  Direction direction;
  BasicTensor<T> activations;  // grid_rows x grid_cols x U
};

template <typename T>
struct SweepRecord {
  Direction direction;
  BasicTensor<T> input;
  SweepParams<T> params;
  BasicTensor<T> activations;
};

template <typename T>
struct SweepGradients {
  BasicTensor<T> input;
  SweepParams<T> params;
};

/// Runs one direction over a (rows, cols, p) map. Every column (vertical)
/// or row (horizontal) is an independent sequence.
template <typename T>
std::pair<SweepOutput<T>, SweepRecord<T>> directional_sweep(const BasicTensor<T>& map,
                                                            Direction dir,
                                                            const SweepParams<T>& params);
template <typename T>
std::pair<SweepOutput<T>, SweepRecord<T>> directional_sweep(const PatchGrid<T>& grid,
                                                            Direction dir,
                                                            const SweepParams<T>& params);
template <typename T>
SweepGradients<T> sweep_backward(const SweepRecord<T>& record, const BasicTensor<T>& upstream);

/// Channel-wise concatenation of two opposite sweeps of the same axis:
/// `first`'s U channels, then `second`'s.
template <typename T>
BasicTensor<T> couple_pair(const SweepOutput<T>& first, const SweepOutput<T>& second);
/// Splits a coupled gradient back into its two U-channel halves.
template <typename T>
std::pair<BasicTensor<T>, BasicTensor<T>> uncouple(const BasicTensor<T>& coupled);

/// Parameters of one block, indexed by Direction (down, up, right, left).
template <typename T>
using RenetParams = std::array<SweepParams<T>, 4>;

template <typename T>
struct RenetRecord {
  std::size_t patch_h = 0, patch_w = 0;
  Shape input_shape;
  SweepRecord<T> down, up, right, left;
};

template <typename T>
struct RenetGradients {
  BasicTensor<T> input;
  RenetParams<T> params;
};

/// Vertical stage over the patch grid (down and up, coupled), then a
/// horizontal stage over the coupled map treated as 1x1 patches (right and
/// left, coupled). Output: grid_rows x grid_cols x 2U.
template <typename T>
std::pair<BasicTensor<T>, RenetRecord<T>> renet_block(const BasicTensor<T>& input,
                                                      const RenetParams<T>& params,
                                                      std::size_t patch_h, std::size_t patch_w);
template <typename T>
RenetGradients<T> renet_block_backward(const RenetRecord<T>& record,
                                       const BasicTensor<T>& upstream);

}  // namespace renetseg
