#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <vector>

#include "stereoroma/frame.hpp"

namespace stereoroma {

enum class GuidanceMode { none, stereo_photometric, raw_sign };

/// Sampling-time guidance settings. `s` is signed: the score receives
/// -s * dL/dx for photometric guidance, so s > 0 descends the loss.
struct GuidanceConfig {
  double s = 1.0;
  double gamma = 0.1;  // smoothness weight
  int pyramid_levels = 3;
  int ssim_window = 7;
  double ssim_c1 = 0.01 * 0.01;
  double ssim_c2 = 0.03 * 0.03;
  GuidanceMode mode = GuidanceMode::stereo_photometric;
  double alpha = 1.0;  // raw_sign strength

  void validate() const;
};

struct PointCloud {
  std::vector<std::array<double, 3>> points;
  std::vector<std::array<std::uint8_t, 3>> colors;  // empty or one per point
};

/// Scalar loss plus its per-pixel contributions (scalar = mean of the map).
struct LossMap {
  double value = 0.0;
  FieldD per_pixel;
};

// --- disparity / depth -----------------------------------------------------------

/// depth = fx * baseline / disparity where valid and disparity >= min_disp.
DepthMap disparity_to_depth(const DisparityMap& disp, const CameraIntrinsics& cam, double min_disp);

DisparityMap depth_to_disparity(const DepthMap& depth, const CameraIntrinsics& cam);

/// point = depth(u,v) * K^-1 (u, v, 1)^T for every valid pixel, row-major order.
PointCloud backproject(const DepthMap& depth, const CameraIntrinsics& cam,
                       const std::optional<ImageF32>& color = std::nullopt);

/// Pixel coordinates of a camera-frame point.
std::array<double, 2> project(const std::array<double, 3>& point, const CameraIntrinsics& cam);

/// ASCII PLY: x y z, plus red green blue when colors are present.
void write_ply(const PointCloud& cloud, const std::filesystem::path& path);
PointCloud read_ply(const std::filesystem::path& path);

// --- photometric model -------------------------------------------------------------

/// warped(u, v) = bilinear(right, u + disp(u, v), v), border clamped.
ImageF32 warp_right_to_left(const ImageF32& right, const DisparityMap& disp);

/// Per-pixel (1 - SSIM) / 2 over a truncated square window.
LossMap ssim_loss(const ImageF32& a, const ImageF32& b, int window, double c1, double c2);

/// Per-pixel |d(u+1) - d(u)| * exp(-|I(u+1) - I(u)|); last column is zero.
LossMap smoothness_loss(const ImageF32& left, const DisparityMap& disp);

/// Sum over pyramid levels k of ssim(left_k, warp(right_k, disp_k)) +
/// gamma * smoothness(left_k, disp_k), where disp_k is the k-times
/// downsampled disparity divided by 2^k.
double stereo_matching_loss(const ImageF32& left, const ImageF32& right, const DisparityMap& disp,
                            const GuidanceConfig& cfg);

/// Analytic gradient of stereo_matching_loss with respect to every disparity
/// value (validity is ignored: the disparity is treated as dense).
FieldD grad_stereo_matching_loss(const ImageF32& left, const ImageF32& right, const DisparityMap& disp,
                                 const GuidanceConfig& cfg);

/// Loss and gradient in one pass.
struct LossAndGrad {
  double loss = 0.0;
  FieldD grad;
};
LossAndGrad stereo_matching_loss_and_grad(const ImageF32& left, const ImageF32& right, const DisparityMap& disp,
                                          const GuidanceConfig& cfg);

/// alpha * sign(raw - disp) where raw is valid and positive, else 0.
FieldD raw_sign_guidance(const DisparityMap& disp, const DisparityMap& raw, double alpha);

}  // namespace stereoroma
