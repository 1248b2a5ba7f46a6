#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "renetseg/tensor.hpp"

namespace renetseg {

/// Binary P5 (-> h x w x 1) or P6 (-> h x w x 3) with maxval 255, values
/// scaled to [0, 1]. Comments and arbitrary whitespace are allowed in the
/// header; exactly one whitespace byte separates it from the raster.
Tensor read_pnm(const std::vector<std::uint8_t>& bytes);
Tensor read_pnm_file(const std::string& path);

/// Writes P5 for one channel, P6 for three; samples are round(v * 255)
/// clamped to [0, 255]. Returns the byte count.
std::size_t write_pnm(const Tensor& t, std::ostream& out);
std::vector<std::uint8_t> pnm_bytes(const Tensor& t);
void write_pnm_file(const Tensor& t, const std::string& path);

}  // namespace renetseg
