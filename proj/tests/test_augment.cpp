#include <doctest.h>

#include <cmath>
#include <random>

#include "whc/augment.hpp"
#include "whc/density.hpp"
#include "whc/error.hpp"

using namespace whc;

namespace {

ImageRaster random_image(std::mt19937_64& rng, int w, int h) {
  ImageRaster img(w, h);
  for (auto& p : img.pixels) p = std::uint8_t(rng());
  return img;
}

std::vector<Dot> random_dots(std::mt19937_64& rng, int n, int w, int h) {
  std::uniform_real_distribution<double> x(0.0, double(w)), y(0.0, double(h));
  std::vector<Dot> d;
  for (int i = 0; i < n; ++i) {
    // Quarter-pixel lattice keeps H - 1 - cy exact.
    d.push_back(Dot{std::floor(x(rng) * 4) / 4, std::floor(y(rng) * 4) / 4});
  }
  return d;
}

}  // namespace

TEST_CASE("corner crops place dots by the half-open rule") {
  const ImageRaster img(100, 100);
  const auto a = corner_crops("p", img, {{10, 10}});
  CHECK(a[0].dots == std::vector<Dot>{{10, 10}});
  for (int i = 1; i < 4; ++i) CHECK(a[std::size_t(i)].dots.empty());

  const auto b = corner_crops("p", img, {{50, 50}});
  CHECK(b[3].dots == std::vector<Dot>{{0, 0}});
  CHECK(b[0].dots.empty());
  const auto c = corner_crops("p", img, {{49.999, 50}});
  CHECK(c[2].dots.size() == 1);
  for (const Patch& p : a) {
    CHECK(p.raster.width == 50);
    CHECK(p.raster.height == 50);
  }
}

TEST_CASE("crops tile the raster exactly") {
  std::mt19937_64 rng(51);
  const ImageRaster img = random_image(rng, 6, 4);
  const auto crops = corner_crops("x", img, {});
  for (int r = 0; r < 4; ++r)
    for (int col = 0; col < 6; ++col)
      for (int ch = 0; ch < 3; ++ch) {
        const Patch& p = crops[std::size_t((r >= 2 ? 2 : 0) + (col >= 3 ? 1 : 0))];
        CHECK(p.raster.at(r % 2, col % 3, ch) == img.at(r, col, ch));
      }
}

TEST_CASE("crop errors") {
  CHECK_THROWS_AS(corner_crops("o", ImageRaster(5, 4), {}), InvalidArgument);
  CHECK_THROWS_AS(corner_crops("o", ImageRaster(4, 7), {}), InvalidArgument);
  CHECK_THROWS_AS(corner_crops("o", ImageRaster(4, 4), {{4, 1}}), InvalidArgument);
}

TEST_CASE("dot totals over crops equal the parent count") {
  std::mt19937_64 rng(52);
  for (int t = 0; t < 100; ++t) {
    const int w = 2 * (1 + int(rng() % 64)), h = 2 * (1 + int(rng() % 64));
    const auto dots = random_dots(rng, int(rng() % 60), w, h);
    std::size_t total = 0;
    for (const Patch& p : corner_crops("r", ImageRaster(w, h), dots)) {
      total += p.dots.size();
      for (const Dot& d : p.dots) {
        CHECK(d.cx >= 0.0);
        CHECK(d.cx < w / 2);
        CHECK(d.cy >= 0.0);
        CHECK(d.cy < h / 2);
      }
    }
    CHECK(total == dots.size());
  }
}

TEST_CASE("vflip maps rows and is an involution") {
  Patch p;
  p.raster = ImageRaster(4, 8);
  p.raster.at(0, 1, 2) = 9;
  p.dots = {{3, 0}};
  const Patch f = vflip(p);
  CHECK(f.flipped);
  CHECK(f.dots == std::vector<Dot>{{3, 7}});
  CHECK(f.raster.at(7, 1, 2) == 9);
  CHECK(vflip(f) == p);

  std::mt19937_64 rng(53);
  for (int t = 0; t < 50; ++t) {
    const int w = 2 * (1 + int(rng() % 20)), h = 2 * (1 + int(rng() % 20));
    for (const Patch& q : augment_all("r", random_image(rng, w, h), random_dots(rng, int(rng() % 30), w, h)))
      CHECK(vflip(vflip(q)) == q);
  }
}

TEST_CASE("density of a flipped patch is the flipped density") {
  std::mt19937_64 rng(54);
  for (int t = 0; t < 10; ++t) {
    Patch p;
    p.raster = ImageRaster(32, 24);
    std::uniform_real_distribution<double> x(0.0, 31.99), y(0.0, 23.0);
    for (int i = 0; i < 12; ++i) p.dots.push_back(Dot{x(rng), std::floor(y(rng) * 8) / 8});
    const Patch f = vflip(p);
    const DensityMap a = generate_density(p.dots, KernelParams{}, 24, 32);
    const DensityMap b = generate_density(f.dots, KernelParams{}, 24, 32);
    for (int r = 0; r < 24; ++r)
      for (int c = 0; c < 32; ++c) CHECK(std::abs(b.at(r, c) - a.at(23 - r, c)) <= 1e-6);
  }
}

TEST_CASE("augment_all yields eight patches in order") {
  std::mt19937_64 rng(55);
  const ImageRaster img = random_image(rng, 16, 12);
  const auto patches = augment_all("img7", img, random_dots(rng, 9, 16, 12));
  REQUIRE(patches.size() == 8);
  const char* stems[] = {"img7_TL_o", "img7_TR_o", "img7_BL_o", "img7_BR_o",
                         "img7_TL_f", "img7_TR_f", "img7_BL_f", "img7_BR_f"};
  for (std::size_t i = 0; i < 8; ++i) {
    CHECK(patches[i].stem() == stems[i]);
    CHECK(patches[i].flipped == (i >= 4));
  }
  CHECK(patches[5] == vflip(patches[1]));

  for (const Patch& p : augment_all("empty", ImageRaster(8, 8), {})) CHECK(p.dots.empty());
}

TEST_CASE("dots below the last row centre stay in the sliver") {
  Patch p;
  p.raster = ImageRaster(4, 4);
  p.dots = {{1, 3.25}, {2, 3.0}};
  const Patch f = vflip(p);
  CHECK(f.dots[0] == Dot{1, 3.75});
  CHECK(f.dots[1] == Dot{2, 0});
  CHECK(vflip(f) == p);
}
