#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace whc {

/// Axis-aligned bounding box in pixels, origin top-left.
struct BBox {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;

  friend bool operator==(const BBox&, const BBox&) = default;
};

/// Point annotation in pixel-index coordinates: pixel (row i, column j) sits
/// at (cx, cy) = (j, i).
struct Dot {
  double cx = 0.0;
  double cy = 0.0;

  friend bool operator==(const Dot&, const Dot&) = default;
};

struct AnnotationSet {
  std::string image_id;
  int width = 0;
  int height = 0;
  std::vector<BBox> boxes;
  std::vector<Dot> dots;

  friend bool operator==(const AnnotationSet&, const AnnotationSet&) = default;
};

using AnnotationIndex = std::map<std::string, AnnotationSet>;

/// 8-bit interleaved RGB, row-major.
struct ImageRaster {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  static constexpr int kChannels = 3;

  ImageRaster() = default;
  ImageRaster(int w, int h) : width(w), height(h), pixels(std::size_t(w) * h * kChannels, 0) {}

  std::uint8_t& at(int row, int col, int ch) {
    return pixels[(std::size_t(row) * width + col) * kChannels + ch];
  }
  std::uint8_t at(int row, int col, int ch) const {
    return pixels[(std::size_t(row) * width + col) * kChannels + ch];
  }

  friend bool operator==(const ImageRaster&, const ImageRaster&) = default;
};

struct SplitRatios {
  double train = 0.0;
  double val = 0.0;
  double test = 0.0;
};

struct DatasetSplit {
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;
  std::uint64_t seed = 0;
};

Dot bbox_centroid(const BBox& b);

/// Clips `b` to the [0,width] x [0,height] frame. Throws InvalidArgument when
/// nothing of the box remains inside.
BBox clip_box(const BBox& b, int width, int height);

/// Parses the GWHD-style annotation CSV (`image_id,width,height,bbox,source`).
/// Boxes are clipped to the image frame and a centroid dot is derived for each.
AnnotationIndex parse_annotations(std::string_view csv_text);

/// Inverse of parse_annotations for sets with at least one box. Images with
/// zero boxes have no row representation and are skipped.
std::string serialize_annotations(const AnnotationIndex& index);

DatasetSplit split_dataset(std::vector<std::string> patch_ids, const SplitRatios& ratios,
                           std::uint64_t seed);

// Sibling `.dots.csv` files: one `cx,cy` pair per line, no header.
std::string format_dots_csv(const std::vector<Dot>& dots);
std::vector<Dot> parse_dots_csv(std::string_view text);
std::vector<Dot> read_dots_file(const std::filesystem::path& path);
void write_dots_file(const std::filesystem::path& path, const std::vector<Dot>& dots);

// PNG/JPEG decode to RGB and PNG encode.
ImageRaster load_image(const std::filesystem::path& path);
void save_png(const std::filesystem::path& path, const ImageRaster& image);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

/// Shortest round-trip decimal form of `v`.
std::string format_real(double v);

}  // namespace whc
