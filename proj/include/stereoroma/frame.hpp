#pragma once

#include <optional>

#include "stereoroma/image.hpp"

namespace stereoroma {

/// Pinhole intrinsics of the rectified left camera plus the stereo baseline.
struct CameraIntrinsics {
  double fx = 600.0;  // px
  double fy = 600.0;  // px
  double cx = 0.0;    // px
  double cy = 0.0;    // px
  double baseline = 0.055;  // m

  void validate() const;
  bool operator==(const CameraIntrinsics&) const = default;
};

/// A rectified stereo capture. Correspondence convention used throughout:
/// left(u, v) == right(u + disparity(u, v), v).
struct StereoFrame {
  ImageF32 left;
  ImageF32 right;
  std::optional<ImageF32> color;
  std::optional<DisparityMap> raw;
  CameraIntrinsics camera;

  int width() const { return left.width; }
  int height() const { return left.height; }
  bool operator==(const StereoFrame&) const = default;
};

}  // namespace stereoroma
