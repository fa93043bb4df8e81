#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "whc/error.hpp"
#include "whc/ingest.hpp"

namespace whc {

ImageRaster load_image(const std::filesystem::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw IoError("cannot decode image " + path.string());
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  ImageRaster out(rgb.cols, rgb.rows);
  for (int r = 0; r < rgb.rows; ++r) {
    const auto* row = rgb.ptr<std::uint8_t>(r);
    std::copy(row, row + std::size_t(rgb.cols) * 3, out.pixels.begin() + std::ptrdiff_t(r) * rgb.cols * 3);
  }
  return out;
}

void save_png(const std::filesystem::path& path, const ImageRaster& image) {
  cv::Mat rgb(image.height, image.width, CV_8UC3, const_cast<std::uint8_t*>(image.pixels.data()));
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  if (!cv::imwrite(path.string(), bgr)) throw IoError("cannot write image " + path.string());
}

}  // namespace whc
