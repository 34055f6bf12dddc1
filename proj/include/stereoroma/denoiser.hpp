#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stereoroma/diffusion.hpp"
#include "stereoroma/frame.hpp"

namespace stereoroma {

/// Architecture of the noise-prediction U-Net. `cond` lists the conditioning
/// inputs joined by '+': left, right, raw (adds raw disparity and its
/// validity), color (3 channels); "none" for no conditioning.
struct DenoiserSpec {
  std::string cond = "left+right+raw";
  int base_width = 32;
  int depth = 3;
  int time_embed_dim = 64;

  /// Channels contributed by `cond` (excluding x_t).
  static int cond_channels(const std::string& cond);
  int in_channels() const { return 1 + cond_channels(cond); }
  /// Feature width at resolution level l (0 = full resolution).
  int width_at(int level) const;
  void validate() const;

  bool operator==(const DenoiserSpec&) const = default;
};

struct ParamTensor {
  std::string name;
  std::size_t offset = 0;
  std::vector<int> shape;
  std::size_t size() const;
};

/// Flat parameter layout; a pure function of the spec.
std::vector<ParamTensor> param_layout(const DenoiserSpec& spec);
std::size_t param_count(const DenoiserSpec& spec);

struct DenoiserParams {
  std::vector<float> values;
  bool operator==(const DenoiserParams&) const = default;
};

/// Random init; each tensor draws from its own derived stream, and the final
/// convolution is zero so the initial prediction is identically 0.
DenoiserParams init_params(const DenoiserSpec& spec, std::uint64_t seed);

/// Planar (channel, row, column) float stack of conditioning inputs.
struct FeatureMap {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> data;

  FeatureMap() = default;
  FeatureMap(int c, int h, int w) : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, 0.0f) {}
  float& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  float at(int c, int y, int x) const { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  FeatureMap crop(int x0, int y0, int w, int h) const;
  bool operator==(const FeatureMap&) const = default;
};

/// Conditioning channels in `cond` order: images mapped to [-1, 1], raw
/// disparity normalized with invalid pixels set to 0, validity as 0/1.
FeatureMap build_conditioning(const StereoFrame& frame, const std::string& cond, const NormSpec& norm);

/// Sinusoidal timestep embedding: [sin(t w_0), cos(t w_0), sin(t w_1), ...],
/// w_i = 10000^(-i / (dim/2)).
std::vector<double> time_embedding(double t, int dim);

/// eps_hat for one sample. Spatial dims must be divisible by 2^depth.
FieldD denoiser_forward(const DenoiserParams& params, const DenoiserSpec& spec, const FieldD& x_t, int t,
                        const FeatureMap& cond);

enum class LossKind { mse, l1 };
std::string to_string(LossKind kind);
LossKind loss_kind_from_string(const std::string& name);

struct TrainingExample {
  FieldD x_t;
  int t = 0;
  FeatureMap cond;
  FieldD eps;
};

struct LossAndGradient {
  double loss = 0.0;
  std::vector<double> grad;  // same layout as the parameter vector
};

/// Batch-mean loss between eps and eps_hat and its parameter gradient
/// (float32 arithmetic). Throws Errc::divergence on a non-finite loss.
LossAndGradient denoiser_backward(const DenoiserParams& params, const DenoiserSpec& spec,
                                  std::span<const TrainingExample> batch, LossKind loss);

/// Same computation in double precision with double parameters; used for
/// finite-difference verification.
LossAndGradient denoiser_backward_f64(std::span<const double> params, const DenoiserSpec& spec,
                                      std::span<const TrainingExample> batch, LossKind loss);
double denoiser_loss_f64(std::span<const double> params, const DenoiserSpec& spec,
                         std::span<const TrainingExample> batch, LossKind loss);

/// A trained model ready for sampling.
struct Denoiser {
  DenoiserSpec spec;
  DenoiserParams params;

  FieldD predict(const FieldD& x_t, int t, const FeatureMap& cond) const {
    return denoiser_forward(params, spec, x_t, t, cond);
  }
};

// --- training ------------------------------------------------------------------

struct TrainConfig {
  int epochs = 30;
  int batch_size = 4;
  double learning_rate = 1e-4;
  LossKind loss = LossKind::mse;
  int crop_w = 64;
  int crop_h = 64;
  std::uint64_t seed = 0;
  NoiseKind noise = NoiseKind::pyramid;
  int noise_levels = 4;
  double rms_decay = 0.99;
  double rms_eps = 1e-8;

  void validate() const;
};

struct TrainingPair {
  StereoFrame frame;
  DisparityMap gt;
};

/// Optimizer state; per-parameter running mean of squared gradients.
struct OptimizerState {
  std::vector<float> mean_sq;
  int epoch = 0;  // epochs completed
};

struct TrainResult {
  DenoiserParams params;
  OptimizerState optimizer;
  std::vector<double> loss_curve;  // mean loss per epoch, all epochs so far
  bool diverged = false;
};

/// Called after every epoch with (epoch index, mean loss).
using EpochCallback = std::function<void(int, double)>;

/// RMS-scaled gradient descent on the noise-prediction loss. Every epoch
/// draws its shuffles, crops, timesteps and noise from its own derived seed,
/// so resuming from a saved state reproduces the uninterrupted run. On a
/// non-finite loss training stops and returns the last good parameters.
TrainResult train(std::span<const TrainingPair> data, const DenoiserSpec& spec, const NoiseSchedule& sched,
                  const NormSpec& norm, const TrainConfig& cfg, const std::optional<TrainResult>& resume = std::nullopt,
                  const EpochCallback& on_epoch = {});

// --- checkpoints ------------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  DenoiserSpec spec;
  ScheduleKind schedule_kind = ScheduleKind::cosine;
  int schedule_T = 128;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  NormSpec norm;
  DenoiserParams params;
  std::optional<OptimizerState> optimizer;
  std::vector<double> loss_curve;
  std::string notes;  // free-form provenance (optimizer, init)

  NoiseSchedule schedule() const { return make_schedule(schedule_kind, schedule_T, beta_start, beta_end); }
};

/// Magic "SRDN", u32 version, u64 header length, JSON header, then
/// little-endian float32 parameters (and optimizer state if present).
void save_params(const Checkpoint& ckpt, const std::filesystem::path& path);

/// Throws bad_magic, version_mismatch, truncated_file, or spec_mismatch
/// (when `expected` is given and differs).
Checkpoint load_params(const std::filesystem::path& path, const std::optional<DenoiserSpec>& expected = std::nullopt);

}  // namespace stereoroma
