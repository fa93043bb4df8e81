#pragma once

#include <array>
#include <string>
#include <vector>

#include "whc/ingest.hpp"

namespace whc {

enum class Corner { TL, TR, BL, BR };

const char* corner_name(Corner c);

/// A quarter-size crop of a parent image with dots in patch-local coordinates.
struct Patch {
  std::string parent_id;
  Corner corner = Corner::TL;
  bool flipped = false;
  ImageRaster raster;
  std::vector<Dot> dots;

  /// `<parent_id>_<corner>_<f|o>`
  std::string stem() const;

  friend bool operator==(const Patch&, const Patch&) = default;
};

/// Splits the image into four half-height x half-width tiles (TL, TR, BL, BR).
/// Each dot lands in the tile whose half-open region contains it.
std::array<Patch, 4> corner_crops(const std::string& parent_id, const ImageRaster& image,
                                  const std::vector<Dot>& dots);

/// Mirrors rows top-to-bottom; dot rows map cy -> H - 1 - cy, except that the
/// sliver cy in (H - 1, H) maps to 2H - 1 - cy.
Patch vflip(const Patch& patch);

/// The four corner crops followed by their vertical flips.
std::vector<Patch> augment_all(const std::string& parent_id, const ImageRaster& image,
                               const std::vector<Dot>& dots);

}  // namespace whc
