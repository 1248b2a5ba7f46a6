#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "renetseg/tensor.hpp"

namespace renetseg {

struct ImageRecord {
  std::string id;
  Tensor image;               // h x w x 3 in [0, 1]
  std::optional<Tensor> mask; // h x w x 1 binary; absent for inference-only records
};

/// 1 where round(v * 255) >= 128.
Tensor binarize_mask(const Tensor& gray);

/// Nearest-neighbour resampling; source index = floor(dst * src / out).
Tensor resize_nearest(const Tensor& t, std::size_t out_h, std::size_t out_w);

inline constexpr const char* kMaskSuffix = "_segmentation.pgm";

/// Reads `<id>.ppm` images and optional `<id>_segmentation.pgm` masks,
/// sorted by id. Images and masks are resized to image_size x image_size
/// (image_size 0 keeps the native size) and masks are binarized.
std::vector<ImageRecord> load_dataset(const std::string& directory, std::size_t image_size);

/// Writes `<id>.ppm` and, when present, `<id>_segmentation.pgm`.
void save_record(const ImageRecord& record, const std::string& directory);

}  // namespace renetseg
