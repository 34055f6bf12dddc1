#pragma once

#include <cstdint>
#include <vector>

#include "stereoroma/frame.hpp"

namespace stereoroma {

struct SgmParams {
  int d_max = 64;  // disparities searched: 0 .. d_max-1
  int census_window = 5;
  int p1 = 10;
  int p2 = 120;
  int num_paths = 8;
  double lr_threshold = 1.0;
  double uniqueness_ratio = 0.95;

  void validate() const;
};

/// Census bit strings; bit k set when neighbor k (row-major, center skipped)
/// is brighter than the center. Windows up to 7x7 fit in 64 bits.
struct CensusImage {
  int width = 0;
  int height = 0;
  int window = 0;
  std::vector<std::uint64_t> bits;

  std::uint64_t at(int x, int y) const { return bits[static_cast<std::size_t>(y) * width + x]; }
  bool operator==(const CensusImage&) const = default;
};

/// cost[(y * width + x) * d_max + d]
struct CostVolume {
  int width = 0;
  int height = 0;
  int d_max = 0;
  std::vector<std::uint32_t> cost;

  std::uint32_t at(int x, int y, int d) const {
    return cost[(static_cast<std::size_t>(y) * width + x) * d_max + d];
  }
  bool operator==(const CostVolume&) const = default;
};

CensusImage census_transform(const ImageF32& img, int window);

/// Bit index for neighbor offset (dx, dy) in a census window.
int census_bit(int dx, int dy, int window);

/// cost(u,v,d) = popcount(left(u,v) ^ right(u+d,v)); matches falling off the
/// right border get window^2 - 1.
CostVolume compute_cost_volume(const CensusImage& left, const CensusImage& right, int d_max);

/// Sum of the directional SGM recurrences. Directions are summed in a fixed
/// order, so the result does not depend on thread count.
CostVolume aggregate_paths(const CostVolume& vol, const SgmParams& params);

/// Single-direction aggregation along (dx, dy); exposed for testing.
CostVolume aggregate_direction(const CostVolume& vol, int dx, int dy, int p1, int p2);

/// Full pipeline: census, costs, aggregation, WTA with equiangular subpixel
/// fit, uniqueness test and left-right consistency check. Failing pixels are
/// invalid with value 0.
DisparityMap compute_raw_disparity(const StereoFrame& frame, const SgmParams& params);
DisparityMap compute_raw_disparity(const ImageF32& left, const ImageF32& right, const SgmParams& params);

}  // namespace stereoroma
