#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "renetseg/dataset.hpp"

namespace renetseg {

/// Perturbed ellipse in pixel coordinates. A pixel centre lies inside when
/// its normalised radius in the rotated frame is at most
/// 1 + 0.2 * sin(5 * angle + phase).
struct LesionShape {
  double center_x = 0, center_y = 0;
  double semi_axis_x = 0, semi_axis_y = 0;  // before rotation
  double rotation = 0;                       // radians
  double phase = 0;                          // radians
};

using Polyline = std::vector<std::pair<double, double>>;  // (x, y) vertices

struct SyntheticSample {
  ImageRecord record;
  LesionShape lesion;
  std::vector<Polyline> hairs;
};

inline constexpr double kMinForeground = 0.02;
inline constexpr double kMaxForeground = 0.6;

bool lesion_contains(const LesionShape& lesion, double x, double y);
Tensor lesion_mask(const LesionShape& lesion, std::size_t size);

/// Deterministic skin-lesion images of size x size with 0-5 dark hair
/// strokes drawn over the image but never into the mask.
std::vector<SyntheticSample> generate_synthetic_samples(std::uint64_t seed, std::size_t count,
                                                        std::size_t size);
std::vector<ImageRecord> generate_synthetic(std::uint64_t seed, std::size_t count,
                                            std::size_t size);

}  // namespace renetseg
