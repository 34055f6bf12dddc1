#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "stereoroma/denoiser.hpp"
#include "stereoroma/diffusion.hpp"

namespace stereoroma {

struct SamplerConfig {
  int steps = 128;  // uniformly strided over schedule.T
  NoiseSchedule schedule = make_schedule(ScheduleKind::cosine, 128);
  GuidanceConfig guidance{.mode = GuidanceMode::none};
  std::uint64_t seed = 0;
  NoiseKind noise_kind = NoiseKind::pyramid;
  int noise_levels = 4;
  NormSpec norm;
  int snapshot_every = 32;  // 0 disables snapshots
  // Clamp the implied clean estimate to [-1, 1] before each step. Without it
  // the first steps (beta near 0.999, 1/sqrt(alpha) ~ 30) amplify small
  // noise-prediction errors far outside the data range.
  bool clip_x0 = true;

  void validate() const;
};

/// One line of the sampling report.
struct StepRecord {
  int step = 0;  // 1-based reverse step index
  int t = 0;     // timestep of the base schedule being denoised
  double guidance_norm = 0.0;
  double mean_disp = 0.0;  // px, of the state after the step
  std::optional<std::string> snapshot_path;
};

struct Snapshot {
  int step = 0;
  DisparityMap disparity;
};

struct SampleResult {
  DisparityMap disparity;  // dense, clipped to [0, d_norm]
  std::vector<Snapshot> snapshots;
  std::vector<StepRecord> records;
};

/// Reverse diffusion from x_T ~ noise_kind; every step's fresh noise uses the
/// same kind. The denoiser is conditioned on the
/// channels its spec names, built from `frame`.
SampleResult sample(const Denoiser& denoiser, const StereoFrame& frame, const SamplerConfig& cfg);

/// `chains` independent runs; chain i uses seed derive_seed(cfg.seed, i).
std::vector<SampleResult> sample_chains(const Denoiser& denoiser, const StereoFrame& frame, const SamplerConfig& cfg,
                                        int chains);

/// Line-delimited JSON, one object per record.
std::string to_jsonl(const std::vector<StepRecord>& records);

}  // namespace stereoroma
