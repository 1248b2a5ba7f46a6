#include "renetseg/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>

#include "renetseg/pnm.hpp"

namespace renetseg {

namespace fs = std::filesystem;

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

Tensor load_channels(const fs::path& path, std::size_t channels) {
  Tensor t = read_pnm_file(path.string());
  if (t.dim(2) != channels) {
    fail(Errc::data, path.string() + ": expected " + std::to_string(channels) +
                         " channel(s), found " + std::to_string(t.dim(2)));
  }
  return t;
}

}  // namespace

Tensor binarize_mask(const Tensor& gray) {
  Tensor mask(gray.shape());
  for (std::size_t i = 0; i < gray.size(); ++i) {
    mask[i] = std::round(static_cast<double>(gray[i]) * 255.0) >= 128.0 ? 1.0f : 0.0f;
  }
  return mask;
}

Tensor resize_nearest(const Tensor& t, std::size_t out_h, std::size_t out_w) {
  require_rank(t, 3, "resize_nearest input");
  const std::size_t h = t.dim(0), w = t.dim(1), c = t.dim(2);
  if (out_h == h && out_w == w) return t;
  Tensor out({out_h, out_w, c});
  for (std::size_t y = 0; y < out_h; ++y) {
    const std::size_t sy = y * h / out_h;
    for (std::size_t x = 0; x < out_w; ++x) {
      const std::size_t sx = x * w / out_w;
      for (std::size_t ch = 0; ch < c; ++ch) out.at(y, x, ch) = t.at(sy, sx, ch);
    }
  }
  return out;
}

std::vector<ImageRecord> load_dataset(const std::string& directory, std::size_t image_size) {
  if (!fs::is_directory(directory)) fail(Errc::io, "not a directory: " + directory);
  std::map<std::string, fs::path> images, masks;
  for (const auto& entry : fs::directory_iterator(directory)) {
    if (!entry.is_regular_file()) continue;
    const std::string name = entry.path().filename().string();
    if (ends_with(name, kMaskSuffix)) {
      masks[name.substr(0, name.size() - std::string(kMaskSuffix).size())] = entry.path();
    } else if (ends_with(name, ".ppm")) {
      images[name.substr(0, name.size() - 4)] = entry.path();
    }
  }
  for (const auto& [id, path] : masks) {
    if (!images.count(id)) {
      fail(Errc::pairing, "mask " + path.string() + " has no matching image " + id + ".ppm");
    }
  }
  std::vector<ImageRecord> records;
  for (const auto& [id, path] : images) {
    ImageRecord rec{id, load_channels(path, 3), std::nullopt};
    const std::size_t h = image_size ? image_size : rec.image.dim(0);
    const std::size_t w = image_size ? image_size : rec.image.dim(1);
    rec.image = resize_nearest(rec.image, h, w);
    if (auto it = masks.find(id); it != masks.end()) {
      rec.mask = binarize_mask(resize_nearest(load_channels(it->second, 1), h, w));
    }
    records.push_back(std::move(rec));
  }
  return records;
}

void save_record(const ImageRecord& record, const std::string& directory) {
  const fs::path dir(directory);
  write_pnm_file(record.image, (dir / (record.id + ".ppm")).string());
  if (record.mask) write_pnm_file(*record.mask, (dir / (record.id + kMaskSuffix)).string());
}

}  // namespace renetseg
