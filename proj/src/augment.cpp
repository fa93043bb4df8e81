#include "whc/augment.hpp"

#include <algorithm>
#include <cstring>

#include "whc/error.hpp"

namespace whc {

const char* corner_name(Corner c) {
  switch (c) {
    case Corner::TL: return "TL";
    case Corner::TR: return "TR";
    case Corner::BL: return "BL";
    case Corner::BR: return "BR";
  }
  return "?";
}

std::string Patch::stem() const {
  return parent_id + "_" + corner_name(corner) + "_" + (flipped ? "f" : "o");
}

std::array<Patch, 4> corner_crops(const std::string& parent_id, const ImageRaster& image,
                                  const std::vector<Dot>& dots) {
  if (image.width < 2 || image.height < 2 || image.width % 2 != 0 || image.height % 2 != 0)
    throw InvalidArgument("corner_crops: image " + parent_id + " is " + std::to_string(image.width) +
                          "x" + std::to_string(image.height) + ", both dimensions must be even");
  const int pw = image.width / 2;
  const int ph = image.height / 2;
  constexpr std::array<Corner, 4> kCorners{Corner::TL, Corner::TR, Corner::BL, Corner::BR};

  std::array<Patch, 4> out;
  for (std::size_t k = 0; k < 4; ++k) {
    Patch& p = out[k];
    p.parent_id = parent_id;
    p.corner = kCorners[k];
    const int x0 = (k % 2) * pw;
    const int y0 = (k / 2) * ph;
    p.raster = ImageRaster(pw, ph);
    const std::size_t row_bytes = std::size_t(pw) * ImageRaster::kChannels;
    for (int r = 0; r < ph; ++r)
      std::memcpy(&p.raster.at(r, 0, 0), image.pixels.data() + (std::size_t(y0 + r) * image.width + x0) * 3, row_bytes);
  }
  for (const Dot& d : dots) {
    if (!(d.cx >= 0.0 && d.cx < image.width && d.cy >= 0.0 && d.cy < image.height))
      throw InvalidArgument("corner_crops: dot (" + format_real(d.cx) + ", " + format_real(d.cy) +
                            ") lies outside image " + parent_id);
    const bool right = d.cx >= double(pw);
    const bool bottom = d.cy >= double(ph);
    Patch& p = out[std::size_t(bottom) * 2 + std::size_t(right)];
    p.dots.push_back(Dot{right ? d.cx - pw : d.cx, bottom ? d.cy - ph : d.cy});
  }
  return out;
}

Patch vflip(const Patch& patch) {
  Patch out = patch;
  out.flipped = !patch.flipped;
  const int h = patch.raster.height;
  const std::size_t row_bytes = std::size_t(patch.raster.width) * ImageRaster::kChannels;
  for (int r = 0; r < h; ++r)
    std::memcpy(&out.raster.at(r, 0, 0), patch.raster.pixels.data() + std::size_t(h - 1 - r) * row_bytes, row_bytes);
  const double last_row = double(h - 1);
  for (Dot& d : out.dots) {
    // The sliver (H-1, H) below the last row centre has no mirror image on the
    // grid; it is reflected onto itself so the map stays an involution.
    d.cy = d.cy <= last_row ? last_row - d.cy : double(h) + last_row - d.cy;
  }
  return out;
}

std::vector<Patch> augment_all(const std::string& parent_id, const ImageRaster& image,
                               const std::vector<Dot>& dots) {
  auto crops = corner_crops(parent_id, image, dots);
  std::vector<Patch> out;
  out.reserve(8);
  for (auto& p : crops) out.push_back(p);
  for (const auto& p : crops) out.push_back(vflip(p));
  return out;
}

}  // namespace whc
