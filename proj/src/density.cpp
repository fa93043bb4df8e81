#include "whc/density.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <utility>

#include "binio.hpp"
#include "whc/error.hpp"

namespace whc {

void KernelParams::validate() const {
  if (!(beta > 0.0)) throw InvalidArgument("kernel beta must be positive");
  if (k < 1) throw InvalidArgument("kernel k must be at least 1");
  if (!(sigma_fallback > 0.0)) throw InvalidArgument("kernel sigma_fallback must be positive");
  if (!(truncation_radius >= 3.0)) throw InvalidArgument("kernel truncation_radius must be >= 3");
}

std::vector<double> knn_mean_distances(const std::vector<Dot>& dots, int k) {
  const std::size_t n = dots.size();
  if (n < 2) throw InvalidArgument("knn_mean_distances: insufficient neighbors (need at least 2 dots)");
  if (k < 1) throw InvalidArgument("knn_mean_distances: k must be at least 1");
  const std::size_t kk = std::min<std::size_t>(std::size_t(k), n - 1);

  std::vector<double> out(n);
  std::vector<std::pair<double, std::size_t>> cand;
  cand.reserve(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    cand.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double dx = dots[j].cx - dots[i].cx;
      const double dy = dots[j].cy - dots[i].cy;
      cand.emplace_back(dx * dx + dy * dy, j);
    }
    // (squared distance, index) ordering breaks ties by ascending index.
    std::partial_sort(cand.begin(), cand.begin() + std::ptrdiff_t(kk), cand.end());
    double sum = 0.0;
    for (std::size_t m = 0; m < kk; ++m) sum += std::sqrt(cand[m].first);
    out[i] = sum / double(kk);
  }
  return out;
}

SigmaAssignment adaptive_sigmas(const std::vector<Dot>& dots, const KernelParams& params) {
  params.validate();
  SigmaAssignment out;
  if (dots.empty()) return out;
  if (dots.size() == 1) {
    out.sigma = {params.sigma_fallback};
    out.mean_knn_distance = {0.0};
    return out;
  }
  out.mean_knn_distance = knn_mean_distances(dots, params.k);
  out.sigma.resize(dots.size());
  for (std::size_t i = 0; i < dots.size(); ++i) {
    const double s = params.beta * out.mean_knn_distance[i];
    out.sigma[i] = s > 0.0 ? s : params.sigma_fallback;
  }
  return out;
}

namespace {

struct Window {
  int row0, row1, col0, col1;  // inclusive, clipped to the grid
};

Window kernel_window(const Dot& dot, double radius, int height, int width) {
  return Window{std::max(0, int(std::ceil(dot.cy - radius))),
                std::min(height - 1, int(std::floor(dot.cy + radius))),
                std::max(0, int(std::ceil(dot.cx - radius))),
                std::min(width - 1, int(std::floor(dot.cx + radius)))};
}

template <typename Fn>
void for_each_in_support(const Dot& dot, double sigma, double truncation_radius, int height,
                         int width, Fn&& fn) {
  const double radius = truncation_radius * sigma;
  const double r2 = radius * radius;
  const double inv_two_var = 1.0 / (2.0 * sigma * sigma);
  const double norm = 1.0 / (2.0 * std::numbers::pi * sigma * sigma);
  const Window win = kernel_window(dot, radius, height, width);
  for (int r = win.row0; r <= win.row1; ++r) {
    const double dy = double(r) - dot.cy;
    for (int c = win.col0; c <= win.col1; ++c) {
      const double dx = double(c) - dot.cx;
      const double d2 = dx * dx + dy * dy;
      if (d2 > r2) continue;
      fn(r, c, norm * std::exp(-d2 * inv_two_var));
    }
  }
}

void check_dot(const Dot& d, std::size_t index, int height, int width) {
  if (!(d.cx >= 0.0 && d.cx < double(width) && d.cy >= 0.0 && d.cy < double(height)))
    throw InvalidArgument("dot " + std::to_string(index) + " at (" + format_real(d.cx) + ", " +
                          format_real(d.cy) + ") lies outside the " + std::to_string(width) + "x" +
                          std::to_string(height) + " grid");
}

}  // namespace

DensityMap kernel_footprint(const Dot& dot, double sigma, double truncation_radius, int height,
                            int width) {
  if (!(sigma > 0.0)) throw InvalidArgument("kernel sigma must be positive");
  DensityMap out(height, width);
  for_each_in_support(dot, sigma, truncation_radius, height, width,
                      [&](int r, int c, double v) { out.at(r, c) = v; });
  return out;
}

DensityMap render_density(const std::vector<Dot>& dots, const std::vector<double>& sigmas,
                          int height, int width, double truncation_radius) {
  if (height < 1 || width < 1) throw InvalidArgument("density grid must be at least 1x1");
  if (dots.size() != sigmas.size())
    throw InvalidArgument("render_density: " + std::to_string(dots.size()) + " dots but " +
                          std::to_string(sigmas.size()) + " sigmas");
  DensityMap out(height, width);
  std::vector<std::pair<std::size_t, double>> support;
  for (std::size_t i = 0; i < dots.size(); ++i) {
    const Dot& d = dots[i];
    check_dot(d, i, height, width);
    if (!(sigmas[i] > 0.0) || !std::isfinite(sigmas[i]))
      throw InvalidArgument("dot " + std::to_string(i) + " has non-positive sigma");

    support.clear();
    double mass = 0.0;
    for_each_in_support(d, sigmas[i], truncation_radius, height, width, [&](int r, int c, double v) {
      support.emplace_back(std::size_t(r) * width + c, v);
      mass += v;
    });
    if (!(mass > 0.0)) {
      // Support narrower than the pixel pitch: deposit the unit mass on the nearest pixel.
      const int r = std::min(height - 1, int(std::lround(d.cy)));
      const int c = std::min(width - 1, int(std::lround(d.cx)));
      out.at(r, c) += 1.0;
      continue;
    }
    const double inv_mass = 1.0 / mass;
    for (const auto& [idx, v] : support) out.values[idx] += v * inv_mass;
  }
  return out;
}

DensityMap generate_density(const std::vector<Dot>& dots, const KernelParams& params, int height,
                            int width) {
  const SigmaAssignment sa = adaptive_sigmas(dots, params);
  return render_density(dots, sa.sigma, height, width, params.truncation_radius);
}

double integrate(const DensityMap& map) {
  double sum = 0.0;
  for (double v : map.values) sum += v;
  return sum;
}

DensityMap downsample_sum(const DensityMap& map, int factor) {
  if (factor < 1) throw InvalidArgument("downsample factor must be >= 1");
  if (map.height % factor != 0 || map.width % factor != 0)
    throw InvalidArgument("downsample_sum: " + std::to_string(map.height) + "x" +
                          std::to_string(map.width) + " map is not divisible by " +
                          std::to_string(factor));
  DensityMap out(map.height / factor, map.width / factor);
  for (int r = 0; r < map.height; ++r)
    for (int c = 0; c < map.width; ++c) out.at(r / factor, c / factor) += map.at(r, c);
  return out;
}

std::string encode_dmap(const DensityMap& map) {
  std::string out = "DMAP";
  out.reserve(16 + map.values.size() * 4);
  binio::put_u32(out, 1);
  binio::put_u32(out, std::uint32_t(map.height));
  binio::put_u32(out, std::uint32_t(map.width));
  for (double v : map.values) binio::put_f32(out, float(v));
  return out;
}

DensityMap decode_dmap(const std::string& bytes) {
  binio::Reader in(bytes, "DMAP");
  in.expect_magic("DMAP");
  const std::uint32_t version = in.u32();
  if (version != 1) throw FormatError("DMAP: unsupported version " + std::to_string(version));
  const std::uint32_t h = in.u32();
  const std::uint32_t w = in.u32();
  if (std::uint64_t(h) * w * 4 != in.remaining())
    throw FormatError("DMAP: payload size does not match " + std::to_string(h) + "x" + std::to_string(w));
  DensityMap out{int(h), int(w)};
  for (double& v : out.values) v = in.f32();
  return out;
}

void write_dmap(const std::filesystem::path& path, const DensityMap& map) {
  write_text_file(path, encode_dmap(map));
}

DensityMap read_dmap(const std::filesystem::path& path) {
  try {
    return decode_dmap(read_text_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::string encode_pgm_heatmap(const DensityMap& map) {
  std::string out = "P5\n" + std::to_string(map.width) + " " + std::to_string(map.height) + "\n255\n";
  double peak = 0.0;
  for (double v : map.values) peak = std::max(peak, v);
  out.reserve(out.size() + map.values.size());
  for (double v : map.values) {
    const double scaled = peak > 0.0 ? std::clamp(v / peak, 0.0, 1.0) * 255.0 : 0.0;
    out.push_back(char(std::uint8_t(std::lround(scaled))));
  }
  return out;
}

void write_pgm_heatmap(const std::filesystem::path& path, const DensityMap& map) {
  write_text_file(path, encode_pgm_heatmap(map));
}

}  // namespace whc
