#pragma once

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "stereoroma/image.hpp"
#include "stereoroma/rng.hpp"

namespace stereoroma::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    std::string name = "stereoroma_test";
    if (info) name += std::string("_") + info->test_suite_name() + "_" + info->name();
    path_ = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& leaf) const { return path_ / leaf; }

 private:
  std::filesystem::path path_;
};

inline std::vector<char> read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_bytes(const std::filesystem::path& p, const std::vector<char>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline ImageF32 random_image(int w, int h, int c, Rng& rng, double lo = 0.0, double hi = 1.0) {
  ImageF32 img(w, h, c);
  for (auto& v : img.data) v = static_cast<float>(rng.uniform(lo, hi));
  return img;
}

/// Smooth-ish random texture: value noise on a coarse grid plus fine noise.
inline ImageF32 textured_image(int w, int h, Rng& rng, int cell = 3) {
  const int gw = w / cell + 3, gh = h / cell + 3;
  std::vector<double> grid(static_cast<std::size_t>(gw) * gh);
  for (auto& g : grid) g = rng.uniform();
  ImageF32 img(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double gx = static_cast<double>(x) / cell, gy = static_cast<double>(y) / cell;
      const int ix = static_cast<int>(gx), iy = static_cast<int>(gy);
      const double fx = gx - ix, fy = gy - iy;
      auto G = [&](int i, int j) { return grid[static_cast<std::size_t>(j) * gw + i]; };
      const double v = (1 - fy) * ((1 - fx) * G(ix, iy) + fx * G(ix + 1, iy)) +
                       fy * ((1 - fx) * G(ix, iy + 1) + fx * G(ix + 1, iy + 1));
      img.at(x, y) = static_cast<float>(0.15 + 0.7 * v);
    }
  return img;
}

}  // namespace stereoroma::testing
