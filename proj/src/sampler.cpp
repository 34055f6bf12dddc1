#include "stereoroma/sampler.hpp"

#include <algorithm>

#include "json.hpp"
#include "stereoroma/error.hpp"
#include "stereoroma/parallel.hpp"

namespace stereoroma {

void SamplerConfig::validate() const {
  require(schedule.T >= 1 && static_cast<int>(schedule.beta.size()) == schedule.T + 1, Errc::config_error,
          "sampler: schedule is not initialized");
  require(steps >= 1 && steps <= schedule.T, Errc::config_error, "sample.steps must be in [1, T]");
  require(noise_levels >= 1, Errc::config_error, "sample.noise_levels must be >= 1");
  require(snapshot_every >= 0, Errc::config_error, "sample.snapshot_every must be >= 0");
  guidance.validate();
  norm.validate();
}

namespace {

DisparityMap to_disparity(const FieldD& x, const NormSpec& norm) {
  DisparityMap d = denormalize_disparity(x, norm);
  for (auto& v : d.values) v = std::clamp(v, 0.0, norm.d_norm);
  return d;
}

double mean_of(const DisparityMap& d) {
  double s = 0.0;
  for (double v : d.values) s += v;
  return d.values.empty() ? 0.0 : s / static_cast<double>(d.values.size());
}

}  // namespace

SampleResult sample(const Denoiser& denoiser, const StereoFrame& frame, const SamplerConfig& cfg) {
  cfg.validate();
  const int in_cond = DenoiserSpec::cond_channels(denoiser.spec.cond);
  const FeatureMap cond = build_conditioning(frame, denoiser.spec.cond, cfg.norm);
  require(cond.channels == in_cond, Errc::dimension_mismatch, "sample: conditioning channel mismatch");
  const RespacedSchedule rs = respace(cfg.schedule, cfg.steps);

  Rng rng(cfg.seed);
  const int w = frame.width(), h = frame.height();
  FieldD x = draw_noise(w, h, cfg.noise_kind, cfg.noise_levels, rng);
  const StepNoise step_noise{cfg.noise_kind, cfg.noise_levels};
  SampleResult out;
  const int S = cfg.steps;
  for (int i = S; i >= 1; --i) {
    const int t_base = rs.timesteps[i];
    FieldD eps_hat = denoiser.predict(x, t_base, cond);
    if (cfg.clip_x0) eps_hat = clip_predicted_noise(x, eps_hat, rs.schedule.alpha_bar[i]);
    GuidedStepResult step = guided_step(x, i, eps_hat, frame, rs.schedule, cfg.guidance, cfg.norm, rng, step_noise);
    x = std::move(step.x_prev);
    const int k = S - i + 1;
    DisparityMap d = to_disparity(x, cfg.norm);
    out.records.push_back({k, t_base, step.guidance_norm, mean_of(d), std::nullopt});
    if (cfg.snapshot_every > 0 && (k % cfg.snapshot_every == 0 || i == 1)) out.snapshots.push_back({k, d});
    if (i == 1) out.disparity = std::move(d);
  }
  return out;
}

std::vector<SampleResult> sample_chains(const Denoiser& denoiser, const StereoFrame& frame, const SamplerConfig& cfg,
                                        int chains) {
  require(chains >= 1, Errc::invalid_argument, "sample_chains: need at least one chain");
  std::vector<SampleResult> out(chains);
  parallel_for(static_cast<std::size_t>(chains), [&](std::size_t i) {
    SamplerConfig c = cfg;
    c.seed = derive_seed(cfg.seed, i);
    out[i] = sample(denoiser, frame, c);
  });
  return out;
}

std::string to_jsonl(const std::vector<StepRecord>& records) {
  std::string s;
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["step"] = r.step;
    j["t"] = r.t;
    j["guidance_norm"] = r.guidance_norm;
    j["mean_disp"] = r.mean_disp;
    if (r.snapshot_path) j["snapshot_path"] = *r.snapshot_path;
    s += j.dump();
    s += '\n';
  }
  return s;
}

}  // namespace stereoroma
