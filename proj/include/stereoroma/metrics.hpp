#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stereoroma/frame.hpp"

namespace stereoroma {

using PixelMask = std::vector<std::uint8_t>;

/// Mean |pred - gt| over pixels valid in both (and in `mask` when given).
/// Throws invalid_argument when no pixel qualifies.
double epe(const DisparityMap& pred, const DisparityMap& gt, const PixelMask* mask = nullptr);

struct DepthRange {
  double z_min = 0.2;  // m
  double z_max = 2.0;  // m
  bool contains(double z) const { return z >= z_min && z <= z_max; }
};

struct DepthErrors {
  double rmse = 0.0;  // m
  double mae = 0.0;   // m
  double rel = 0.0;
  std::size_t n = 0;
};

/// RMSE, MAE and mean relative error over pixels valid in both maps with gt
/// depth inside `range`.
DepthErrors depth_metrics(const DepthMap& pred, const DepthMap& gt, const DepthRange& range,
                          const PixelMask* mask = nullptr);

inline constexpr std::array<double, 3> kDeltaThresholds{1.05, 1.10, 1.25};

/// Percentage of included pixels with max(pred/gt, gt/pred) < threshold.
std::array<double, 3> delta_accuracy(const DepthMap& pred, const DepthMap& gt, const DepthRange& range,
                                     const std::array<double, 3>& thresholds = kDeltaThresholds,
                                     const PixelMask* mask = nullptr);

/// Per-pixel unbiased sample variance across runs. Needs >= 2 maps.
FieldD uncertainty_map(std::span<const DisparityMap> samples);

// --- reports ------------------------------------------------------------------

inline constexpr int kEvalSchemaVersion = 1;

struct EvalOptions {
  DepthRange range;
  double min_disp = 1e-3;  // disparities below this have no depth
  // Count pixels without a prediction as failures: EPE uses prediction 0 and
  // they miss every delta threshold. Depth errors still skip them.
  bool invalid_as_failure = false;
};

struct EvalReport {
  double epe = 0.0;   // px
  double rmse = 0.0;  // m
  double mae = 0.0;   // m
  double rel = 0.0;
  double delta_105 = 0.0;  // %
  double delta_110 = 0.0;
  double delta_125 = 0.0;
  double valid_fraction = 0.0;  // predicted pixels / evaluable gt pixels
  std::size_t n_pixels = 0;     // pixels entering EPE

  bool operator==(const EvalReport&) const = default;
};

/// Running sums behind a report; add() pools pixels across images.
struct EvalSums {
  double abs_disp = 0.0;
  std::size_t n_disp = 0;
  double sq_depth = 0.0, abs_depth = 0.0, rel_depth = 0.0;
  std::size_t n_depth = 0;
  std::array<std::size_t, 3> delta_hits{0, 0, 0};
  std::size_t n_delta = 0;
  std::size_t n_region = 0;     // gt-valid, in range, in mask
  std::size_t n_predicted = 0;  // ... and predicted

  void add(const EvalSums& o);
  EvalReport report() const;
};

EvalSums evaluate_sums(const DisparityMap& pred, const DisparityMap& gt, const CameraIntrinsics& cam,
                       const EvalOptions& opt, const PixelMask* mask = nullptr);

/// Evaluation mask: gt valid, pred valid, gt depth in range (and `mask`).
/// Throws invalid_argument if that leaves no pixels.
EvalReport evaluate_run(const DisparityMap& pred, const DisparityMap& gt, const CameraIntrinsics& cam,
                        const EvalOptions& opt = {}, const PixelMask* mask = nullptr);

std::string to_json(const EvalReport& r);
EvalReport eval_report_from_json(const std::string& text);

struct NamedReport {
  std::string name;
  EvalReport report;
};

/// One row per entry plus a final "mean" row (per-image means).
std::string to_csv(const std::vector<NamedReport>& rows);

}  // namespace stereoroma
