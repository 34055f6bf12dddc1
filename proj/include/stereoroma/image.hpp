#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace stereoroma {

/// Row-major float raster, channels interleaved per pixel.
struct ImageF32 {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<float> data;

  ImageF32() = default;
  ImageF32(int w, int h, int c = 1, float fill = 0.0f);

  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
  bool empty() const { return data.empty(); }

  float& at(int x, int y, int c = 0) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  float at(int x, int y, int c = 0) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }

  /// Single channel `c` as a new 1-channel image.
  ImageF32 channel(int c) const;

  bool operator==(const ImageF32&) const = default;
};

/// Dense double field; the diffusion state and loss gradients live here.
struct FieldD {
  int width = 0;
  int height = 0;
  std::vector<double> values;

  FieldD() = default;
  FieldD(int w, int h, double fill = 0.0)
      : width(w), height(h), values(static_cast<std::size_t>(w) * h, fill) {}

  std::size_t size() const { return values.size(); }
  double& at(int x, int y) { return values[static_cast<std::size_t>(y) * width + x]; }
  double at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }

  bool operator==(const FieldD&) const = default;
};

/// Per-pixel scalar map with a validity mask. The tag keeps disparity (px)
/// and depth (m) maps from being mixed up.
template <class Tag>
struct MaskedMap {
  int width = 0;
  int height = 0;
  std::vector<double> values;
  std::vector<std::uint8_t> valid;

  MaskedMap() = default;
  MaskedMap(int w, int h, double fill = 0.0, bool is_valid = true)
      : width(w),
        height(h),
        values(static_cast<std::size_t>(w) * h, fill),
        valid(static_cast<std::size_t>(w) * h, is_valid ? 1 : 0) {}

  std::size_t size() const { return values.size(); }
  double& at(int x, int y) { return values[static_cast<std::size_t>(y) * width + x]; }
  double at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
  bool is_valid(int x, int y) const { return valid[static_cast<std::size_t>(y) * width + x] != 0; }

  std::size_t valid_count() const {
    std::size_t n = 0;
    for (auto v : valid) n += v ? 1 : 0;
    return n;
  }

  bool operator==(const MaskedMap&) const = default;
};

struct DisparityTag {};
struct DepthTag {};
using DisparityMap = MaskedMap<DisparityTag>;  // pixels
using DepthMap = MaskedMap<DepthTag>;          // meters

struct Pyramid {
  std::vector<ImageF32> levels;
};

// --- IO --------------------------------------------------------------------

/// Loads PGM (P5, 8/16 bit), PNG (8-bit gray/RGB) or PFM. Integer formats are
/// scaled to [0,1]; PFM values pass through and rows come back top-down.
ImageF32 load_image(const std::filesystem::path& path);

/// Little-endian PFM ("Pf"/"PF", scale -1). Channels must be 1 or 3.
void save_pfm(const ImageF32& img, const std::filesystem::path& path);

/// 8-bit PNG from values in [0,1] (clamped). Channels must be 1 or 3.
void save_png(const ImageF32& img, const std::filesystem::path& path);

/// 8-bit binary PGM from values in [0,1] (clamped, rounded). Single channel.
void save_pgm(const ImageF32& img, const std::filesystem::path& path);

// --- resampling ---------------------------------------------------------------

/// 2x2 box average; odd trailing row/column dropped.
ImageF32 downsample_half(const ImageF32& img);

/// Bilinear sample of channel `c`; coordinates are clamped to the image first.
float bilinear_sample(const ImageF32& img, double u, double v, int c = 0);

/// All channels at (u, v).
std::vector<float> bilinear_sample_all(const ImageF32& img, double u, double v);

Pyramid build_pyramid(const ImageF32& img, int levels);

/// Smallest side allowed at the coarsest pyramid level.
inline constexpr int kMinPyramidSide = 8;

// --- visualization -------------------------------------------------------------

using Rgb8 = std::array<std::uint8_t, 3>;

/// The 256-entry colormap (a turbo-style rainbow, dark blue -> dark red).
const std::array<Rgb8, 256>& disparity_colormap();

/// Colormap index for disparity d: round(clamp(d / d_max, 0, 1) * 255).
int colormap_index(double d, double d_max);

/// Pseudo-color RGB image; invalid pixels are black.
ImageF32 colorize(const DisparityMap& disp, double d_max);

/// colorize() written as PNG.
void colorize_disparity(const DisparityMap& disp, double d_max, const std::filesystem::path& path);

// --- conversions -----------------------------------------------------------------

/// Values as a 1-channel float image (invalid pixels keep their stored value).
ImageF32 to_image(const DisparityMap& disp);
ImageF32 to_image(const DepthMap& depth);
ImageF32 to_image(const FieldD& field);
FieldD to_field(const ImageF32& img, int c = 0);

}  // namespace stereoroma
