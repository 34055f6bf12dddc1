#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stereoroma/frame.hpp"
#include "stereoroma/geometry.hpp"
#include "stereoroma/rng.hpp"

namespace stereoroma {

enum class ScheduleKind { cosine, linear };

/// Tables indexed by timestep t in [0, T]; entry 0 is the clean-data
/// convention (beta 0, alpha_bar 1).
struct NoiseSchedule {
  ScheduleKind kind = ScheduleKind::cosine;
  int T = 0;
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;
};

std::string to_string(ScheduleKind kind);
ScheduleKind schedule_kind_from_string(const std::string& name);

/// Linear: beta evenly spaced from beta_start to beta_end. Cosine:
/// alpha_bar(t) = f(t)/f(0), f(t) = cos^2(((t/T + 0.008) / 1.008) * pi/2),
/// beta = 1 - alpha_bar(t)/alpha_bar(t-1) clipped to [beta_start, 0.999];
/// alpha_bar is then recomputed as the running product of the clipped alphas.
NoiseSchedule make_schedule(ScheduleKind kind, int T, double beta_start = 1e-4, double beta_end = 0.02);

/// Schedule over `steps` evenly strided timesteps of `base`, with betas
/// chosen so alpha_bar matches base at the kept timesteps. timesteps[i] is
/// the base timestep behind respaced step i (timesteps[0] = 0).
struct RespacedSchedule {
  NoiseSchedule schedule;
  std::vector<int> timesteps;
};
RespacedSchedule respace(const NoiseSchedule& base, int steps);

struct NormSpec {
  double d_norm = 192.0;

  void validate() const;
};

/// x = 2 * d / d_norm - 1. Invalid pixels become 0 (mask kept alongside).
struct NormalizedDisparity {
  FieldD x;
  std::vector<std::uint8_t> valid;
  std::size_t clipped = 0;  // valid pixels above d_norm, clipped to +1
};
NormalizedDisparity normalize_disparity(const DisparityMap& disp, const NormSpec& spec);

/// Inverse map; every pixel valid.
DisparityMap denormalize_disparity(const FieldD& x, const NormSpec& spec);

/// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps.
FieldD forward_diffuse(const FieldD& x0, int t, const FieldD& eps, const NoiseSchedule& sched);

FieldD white_noise(int width, int height, Rng& rng);

/// Sum of white noise drawn at width/2^i x height/2^i (i < levels), each
/// bilinearly upsampled and weighted 0.5^i, then divided by its empirical std.
FieldD pyramid_noise(int width, int height, int levels, Rng& rng);

enum class NoiseKind { white, pyramid };
std::string to_string(NoiseKind kind);
NoiseKind noise_kind_from_string(const std::string& name);

FieldD draw_noise(int width, int height, NoiseKind kind, int levels, Rng& rng);

/// Distribution of the fresh noise z injected by a reverse step. White noise
/// draws one normal per pixel in row-major order; a model trained on pyramid
/// noise should also be sampled with pyramid z.
struct StepNoise {
  NoiseKind kind = NoiseKind::white;
  int levels = 4;  // pyramid only
};

/// x_{t-1} = (x_t + beta_t * score) / sqrt(alpha_t) + sqrt(beta_t) z, with
/// z = 0 at t = 1. Every sampler update goes through here.
FieldD reverse_step_from_score(const FieldD& x_t, int t, const FieldD& score, const NoiseSchedule& sched, Rng& rng,
                               const StepNoise& noise = {});

/// Noise prediction made consistent with a clipped clean estimate:
/// x0_hat = (x_t - sqrt(1 - alpha_bar) eps_hat) / sqrt(alpha_bar) is clamped to
/// [-1, 1] and eps is re-derived from it. Feeding the result to the step below
/// gives the usual clipped-x0 posterior mean.
FieldD clip_predicted_noise(const FieldD& x_t, const FieldD& eps_hat, double alpha_bar);

/// Unguided step: score = -eps_hat / sqrt(1 - alpha_bar_t).
FieldD ancestral_step(const FieldD& x_t, int t, const FieldD& eps_hat, const NoiseSchedule& sched, Rng& rng,
                      const StepNoise& noise = {});

struct GuidedStepResult {
  FieldD x_prev;
  double guidance_norm = 0.0;  // L2 norm of the term added to the score
};

/// Guidance term added to the score at state x_t (normalized units).
/// Photometric: -s * (d_norm/2) * dL/dd, the gradient of the (pixel-mean)
/// stereo matching loss chained through the normalization.
/// Raw sign: s * alpha * sign(raw - d).
FieldD guidance_term(const FieldD& x_t, const StereoFrame& frame, const GuidanceConfig& cfg, const NormSpec& norm);

/// Unguided score perturbed by guidance_term(), then the standard reverse step.
/// With s == 0 or mode none this is bit-identical to ancestral_step().
GuidedStepResult guided_step(const FieldD& x_t, int t, const FieldD& eps_hat, const StereoFrame& frame,
                             const NoiseSchedule& sched, const GuidanceConfig& cfg, const NormSpec& norm, Rng& rng,
                             const StepNoise& noise = {});

}  // namespace stereoroma
