#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "whc/ingest.hpp"

namespace whc {

/// Geometry-adaptive kernel settings. Defaults follow the wheat-head setup:
/// sigma = 0.3 * (mean distance to the 3 nearest neighbours).
struct KernelParams {
  double beta = 0.3;
  int k = 3;
  double sigma_fallback = 15.0;    ///< pixels; used when a dot has no usable neighbour
  double truncation_radius = 4.0;  ///< window radius in multiples of sigma

  void validate() const;
};

/// H x W grid of non-negative densities, row-major.
struct DensityMap {
  int height = 0;
  int width = 0;
  std::vector<double> values;

  DensityMap() = default;
  DensityMap(int h, int w) : height(h), width(w), values(std::size_t(h) * w, 0.0) {}

  double& at(int row, int col) { return values[std::size_t(row) * width + col]; }
  double at(int row, int col) const { return values[std::size_t(row) * width + col]; }
};

struct SigmaAssignment {
  std::vector<double> sigma;
  std::vector<double> mean_knn_distance;  ///< 0 where no neighbour exists
};

/// Mean Euclidean distance from each dot to its min(k, n-1) nearest other dots.
/// Throws InvalidArgument ("insufficient neighbors") for fewer than two dots.
std::vector<double> knn_mean_distances(const std::vector<Dot>& dots, int k);

/// sigma_i = beta * mean_knn_distance_i. A lone dot, or a dot whose k nearest
/// neighbours all coincide with it, gets sigma_fallback.
SigmaAssignment adaptive_sigmas(const std::vector<Dot>& dots, const KernelParams& params);

/// Unnormalised Gaussian footprint of one dot: N(p; mu, sigma^2) sampled at every
/// pixel within `truncation_radius * sigma` of the centre, zero elsewhere.
DensityMap kernel_footprint(const Dot& dot, double sigma, double truncation_radius, int height,
                            int width);

/// Sum of per-dot discrete Gaussians, each renormalised to unit mass after
/// truncation and clipping to the grid. Dots accumulate in index order.
DensityMap render_density(const std::vector<Dot>& dots, const std::vector<double>& sigmas,
                          int height, int width, double truncation_radius = 4.0);

/// adaptive_sigmas followed by render_density.
DensityMap generate_density(const std::vector<Dot>& dots, const KernelParams& params, int height,
                            int width);

double integrate(const DensityMap& map);

/// Block sum over factor x factor tiles.
DensityMap downsample_sum(const DensityMap& map, int factor);

// DMAP binary: "DMAP", u32 version=1, u32 height, u32 width, f32 LE values.
std::string encode_dmap(const DensityMap& map);
DensityMap decode_dmap(const std::string& bytes);
void write_dmap(const std::filesystem::path& path, const DensityMap& map);
DensityMap read_dmap(const std::filesystem::path& path);

/// Binary PGM (P5), linearly scaled so the maximum maps to 255.
std::string encode_pgm_heatmap(const DensityMap& map);
void write_pgm_heatmap(const std::filesystem::path& path, const DensityMap& map);

}  // namespace whc
