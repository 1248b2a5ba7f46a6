#include "renetseg/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "renetseg/rng.hpp"

namespace renetseg {

namespace {

constexpr std::array<double, 3> kSkin{200.0, 170.0, 150.0};
constexpr std::array<double, 3> kLesion{90.0, 60.0, 50.0};
constexpr std::array<double, 3> kHair{30.0, 20.0, 15.0};
constexpr double kNoiseSigma = 10.0;
constexpr int kMaxLesionAttempts = 1000;

LesionShape draw_lesion(Rng& rng, double size) {
  LesionShape s;
  s.center_x = size * (0.25 + 0.5 * rng.next_double());
  s.center_y = size * (0.25 + 0.5 * rng.next_double());
  s.semi_axis_x = size * (0.125 + 0.25 * rng.next_double());
  s.semi_axis_y = size * (0.125 + 0.25 * rng.next_double());
  s.rotation = std::numbers::pi * rng.next_double();
  s.phase = 2.0 * std::numbers::pi * rng.next_double();
  return s;
}

Polyline draw_hair(Rng& rng, double size) {
  Polyline line;
  double x = size * rng.next_double(), y = size * rng.next_double();
  double heading = 2.0 * std::numbers::pi * rng.next_double();
  line.emplace_back(x, y);
  const std::size_t segments = 2 + rng.next_index(3);
  for (std::size_t s = 0; s < segments; ++s) {
    const double length = size * (0.15 + 0.2 * rng.next_double());
    heading += rng.next_double() - 0.5;
    x += length * std::cos(heading);
    y += length * std::sin(heading);
    line.emplace_back(x, y);
  }
  return line;
}

// One-pixel DDA rasterisation of every segment, clipped to the image.
void stroke(std::vector<double>& rgb, std::size_t size, const Polyline& line) {
  for (std::size_t k = 0; k + 1 < line.size(); ++k) {
    const auto [x0, y0] = line[k];
    const auto [x1, y1] = line[k + 1];
    const double steps = std::max({std::ceil(std::abs(x1 - x0)), std::ceil(std::abs(y1 - y0)), 1.0});
    for (int t = 0; t <= static_cast<int>(steps); ++t) {
      const double px = std::floor(x0 + (x1 - x0) * t / steps);
      const double py = std::floor(y0 + (y1 - y0) * t / steps);
      if (px < 0 || py < 0 || px >= static_cast<double>(size) || py >= static_cast<double>(size)) continue;
      const std::size_t idx = (static_cast<std::size_t>(py) * size + static_cast<std::size_t>(px)) * 3;
      for (std::size_t c = 0; c < 3; ++c) rgb[idx + c] = kHair[c];
    }
  }
}

}  // namespace

bool lesion_contains(const LesionShape& s, double x, double y) {
  const double dx = x - s.center_x, dy = y - s.center_y;
  const double c = std::cos(s.rotation), sn = std::sin(s.rotation);
  const double u = (dx * c + dy * sn) / s.semi_axis_x;
  const double v = (-dx * sn + dy * c) / s.semi_axis_y;
  const double radius = std::hypot(u, v);
  return radius <= 1.0 + 0.2 * std::sin(5.0 * std::atan2(v, u) + s.phase);
}

Tensor lesion_mask(const LesionShape& lesion, std::size_t size) {
  Tensor mask({size, size, 1});
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      mask.at(y, x, 0) = lesion_contains(lesion, x + 0.5, y + 0.5) ? 1.0f : 0.0f;
    }
  }
  return mask;
}

std::vector<SyntheticSample> generate_synthetic_samples(std::uint64_t seed, std::size_t count,
                                                        std::size_t size) {
  if (size == 0 || size % 8 != 0) {
    fail(Errc::config, "synthetic image size " + std::to_string(size) + " is not divisible by 8");
  }
  Rng rng(seed);
  const double extent = static_cast<double>(size);
  const double pixels = extent * extent;
  std::vector<SyntheticSample> out;
  out.reserve(count);
  for (std::size_t n = 0; n < count; ++n) {
    SyntheticSample sample;
    Tensor mask;
    for (int attempt = 0;; ++attempt) {
      if (attempt == kMaxLesionAttempts) {
        fail(Errc::data, "could not place a lesion within the foreground bounds");
      }
      sample.lesion = draw_lesion(rng, extent);
      mask = lesion_mask(sample.lesion, size);
      double fg = 0;
      for (float v : mask.data()) fg += v;
      const double fraction = fg / pixels;
      if (fraction >= kMinForeground && fraction < kMaxForeground) break;
    }

    std::vector<double> rgb(size * size * 3);
    for (std::size_t p = 0; p < size * size; ++p) {
      const auto& base = mask[p] == 1.0f ? kLesion : kSkin;
      for (std::size_t c = 0; c < 3; ++c) rgb[p * 3 + c] = base[c] + kNoiseSigma * rng.next_gaussian();
    }
    const std::size_t hair_count = rng.next_index(6);
    for (std::size_t h = 0; h < hair_count; ++h) {
      sample.hairs.push_back(draw_hair(rng, extent));
      stroke(rgb, size, sample.hairs.back());
    }

    // Quantised to 8 bits so the images survive a PNM roundtrip unchanged.
    Tensor image({size, size, 3});
    for (std::size_t i = 0; i < rgb.size(); ++i) {
      image[i] = static_cast<float>(std::clamp(std::round(rgb[i]), 0.0, 255.0)) / 255.0f;
    }
    char id[32];
    std::snprintf(id, sizeof id, "synth_%04zu", n);
    sample.record = {id, std::move(image), std::move(mask)};
    out.push_back(std::move(sample));
  }
  return out;
}

std::vector<ImageRecord> generate_synthetic(std::uint64_t seed, std::size_t count, std::size_t size) {
  std::vector<ImageRecord> records;
  for (auto& s : generate_synthetic_samples(seed, count, size)) records.push_back(std::move(s.record));
  return records;
}

}  // namespace renetseg
