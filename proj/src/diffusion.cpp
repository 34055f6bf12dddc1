#include "stereoroma/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "stereoroma/error.hpp"

namespace stereoroma {

std::string to_string(ScheduleKind kind) { return kind == ScheduleKind::cosine ? "cosine" : "linear"; }

ScheduleKind schedule_kind_from_string(const std::string& name) {
  if (name == "cosine") return ScheduleKind::cosine;
  if (name == "linear") return ScheduleKind::linear;
  fail(Errc::config_error, "unknown schedule kind: " + name);
}

std::string to_string(NoiseKind kind) { return kind == NoiseKind::white ? "white" : "pyramid"; }

NoiseKind noise_kind_from_string(const std::string& name) {
  if (name == "white") return NoiseKind::white;
  if (name == "pyramid") return NoiseKind::pyramid;
  fail(Errc::config_error, "unknown noise kind: " + name);
}

NoiseSchedule make_schedule(ScheduleKind kind, int T, double beta_start, double beta_end) {
  require(T >= 2, Errc::invalid_argument, "make_schedule: T must be >= 2");
  require(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0, Errc::invalid_argument,
          "make_schedule: need 0 < beta_start <= beta_end < 1");
  NoiseSchedule s;
  s.kind = kind;
  s.T = T;
  s.beta.assign(static_cast<std::size_t>(T) + 1, 0.0);
  if (kind == ScheduleKind::linear) {
    for (int t = 1; t <= T; ++t) s.beta[t] = beta_start + (beta_end - beta_start) * (t - 1) / (T - 1);
  } else {
    auto f = [T](int t) {
      const double a = (static_cast<double>(t) / T + 0.008) / 1.008 * std::numbers::pi / 2.0;
      return std::cos(a) * std::cos(a);
    };
    const double f0 = f(0);
    for (int t = 1; t <= T; ++t) {
      const double ratio = (f(t) / f0) / (f(t - 1) / f0);
      s.beta[t] = std::clamp(1.0 - ratio, beta_start, 0.999);
    }
  }
  s.alpha.assign(s.beta.size(), 1.0);
  s.alpha_bar.assign(s.beta.size(), 1.0);
  for (int t = 1; t <= T; ++t) {
    s.alpha[t] = 1.0 - s.beta[t];
    s.alpha_bar[t] = s.alpha_bar[t - 1] * s.alpha[t];
  }
  return s;
}

RespacedSchedule respace(const NoiseSchedule& base, int steps) {
  require(steps >= 1 && steps <= base.T, Errc::invalid_argument, "respace: steps must be in [1, T]");
  RespacedSchedule out;
  out.timesteps.push_back(0);
  for (int i = 1; i <= steps; ++i)
    out.timesteps.push_back(static_cast<int>(std::lround(static_cast<double>(i) * base.T / steps)));
  auto& s = out.schedule;
  s.kind = base.kind;
  s.T = steps;
  s.beta.assign(static_cast<std::size_t>(steps) + 1, 0.0);
  s.alpha.assign(s.beta.size(), 1.0);
  s.alpha_bar.assign(s.beta.size(), 1.0);
  for (int i = 1; i <= steps; ++i) {
    if (steps == base.T) {
      s.beta[i] = base.beta[i];
    } else {
      s.beta[i] = 1.0 - base.alpha_bar[out.timesteps[i]] / base.alpha_bar[out.timesteps[i - 1]];
    }
    s.alpha[i] = 1.0 - s.beta[i];
    s.alpha_bar[i] = s.alpha_bar[i - 1] * s.alpha[i];
  }
  return out;
}

void NormSpec::validate() const { require(d_norm > 0.0, Errc::config_error, "norm.d_norm must be positive"); }

NormalizedDisparity normalize_disparity(const DisparityMap& disp, const NormSpec& spec) {
  spec.validate();
  NormalizedDisparity out{FieldD(disp.width, disp.height), disp.valid, 0};
  for (std::size_t i = 0; i < disp.size(); ++i) {
    if (!disp.valid[i]) continue;
    double d = disp.values[i];
    if (d > spec.d_norm) {
      d = spec.d_norm;
      ++out.clipped;
    }
    out.x.values[i] = 2.0 * (d / spec.d_norm) - 1.0;
  }
  return out;
}

DisparityMap denormalize_disparity(const FieldD& x, const NormSpec& spec) {
  DisparityMap d(x.width, x.height, 0.0, true);
  for (std::size_t i = 0; i < x.size(); ++i) d.values[i] = (x.values[i] + 1.0) * 0.5 * spec.d_norm;
  return d;
}

FieldD forward_diffuse(const FieldD& x0, int t, const FieldD& eps, const NoiseSchedule& sched) {
  require(x0.width == eps.width && x0.height == eps.height, Errc::dimension_mismatch,
          "forward_diffuse: noise shape differs from x0");
  require(t >= 0 && t <= sched.T, Errc::invalid_argument, "forward_diffuse: t out of range");
  const double a = std::sqrt(sched.alpha_bar[t]);
  const double b = std::sqrt(1.0 - sched.alpha_bar[t]);
  FieldD out(x0.width, x0.height);
  for (std::size_t i = 0; i < x0.size(); ++i) out.values[i] = a * x0.values[i] + b * eps.values[i];
  return out;
}

FieldD white_noise(int width, int height, Rng& rng) {
  FieldD f(width, height);
  for (auto& v : f.values) v = rng.normal();
  return f;
}

FieldD pyramid_noise(int width, int height, int levels, Rng& rng) {
  require(levels >= 1, Errc::invalid_argument, "pyramid_noise: levels must be >= 1");
  FieldD out(width, height);
  for (int i = 0; i < levels; ++i) {
    const int lw = std::max(1, width >> i), lh = std::max(1, height >> i);
    const FieldD coarse = white_noise(lw, lh, rng);
    const double weight = std::pow(0.5, i);
    const double sx = static_cast<double>(lw) / width, sy = static_cast<double>(lh) / height;
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        // Pixel-center aligned bilinear upsampling with edge clamp.
        const double u = std::clamp((x + 0.5) * sx - 0.5, 0.0, lw - 1.0);
        const double v = std::clamp((y + 0.5) * sy - 0.5, 0.0, lh - 1.0);
        const int x0 = static_cast<int>(u), y0 = static_cast<int>(v);
        const int x1 = std::min(x0 + 1, lw - 1), y1 = std::min(y0 + 1, lh - 1);
        const double fx = u - x0, fy = v - y0;
        const double val = (1 - fy) * ((1 - fx) * coarse.at(x0, y0) + fx * coarse.at(x1, y0)) +
                           fy * ((1 - fx) * coarse.at(x0, y1) + fx * coarse.at(x1, y1));
        out.at(x, y) += weight * val;
      }
  }
  double sum = 0.0, sq = 0.0;
  for (double v : out.values) {
    sum += v;
    sq += v * v;
  }
  const double n = static_cast<double>(out.size());
  const double var = sq / n - (sum / n) * (sum / n);
  if (var > 0.0) {
    const double inv = 1.0 / std::sqrt(var);
    for (auto& v : out.values) v *= inv;
  }
  return out;
}

FieldD draw_noise(int width, int height, NoiseKind kind, int levels, Rng& rng) {
  return kind == NoiseKind::white ? white_noise(width, height, rng) : pyramid_noise(width, height, levels, rng);
}

FieldD reverse_step_from_score(const FieldD& x_t, int t, const FieldD& score, const NoiseSchedule& sched, Rng& rng,
                               const StepNoise& noise) {
  require(t >= 1 && t <= sched.T, Errc::invalid_argument, "reverse step: t out of range");
  require(score.width == x_t.width && score.height == x_t.height, Errc::dimension_mismatch,
          "reverse step: score shape differs from x_t");
  const double beta = sched.beta[t];
  const double inv_sqrt_alpha = 1.0 / std::sqrt(sched.alpha[t]);
  const double sigma = std::sqrt(beta);
  FieldD out(x_t.width, x_t.height);
  if (noise.kind == NoiseKind::pyramid) {
    const FieldD z = t > 1 ? pyramid_noise(x_t.width, x_t.height, noise.levels, rng) : FieldD(x_t.width, x_t.height);
    for (std::size_t i = 0; i < x_t.size(); ++i)
      out.values[i] = inv_sqrt_alpha * (x_t.values[i] + beta * score.values[i]) + sigma * z.values[i];
    return out;
  }
  for (std::size_t i = 0; i < x_t.size(); ++i) {
    const double z = t > 1 ? rng.normal() : 0.0;
    out.values[i] = inv_sqrt_alpha * (x_t.values[i] + beta * score.values[i]) + sigma * z;
  }
  return out;
}

FieldD clip_predicted_noise(const FieldD& x_t, const FieldD& eps_hat, double alpha_bar) {
  require(x_t.width == eps_hat.width && x_t.height == eps_hat.height, Errc::dimension_mismatch,
          "clip_predicted_noise: shapes differ");
  require(alpha_bar > 0.0 && alpha_bar < 1.0, Errc::invalid_argument, "clip_predicted_noise: alpha_bar out of (0, 1)");
  const double a = std::sqrt(alpha_bar), b = std::sqrt(1.0 - alpha_bar);
  FieldD out(x_t.width, x_t.height);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x0 = std::clamp((x_t.values[i] - b * eps_hat.values[i]) / a, -1.0, 1.0);
    out.values[i] = (x_t.values[i] - a * x0) / b;
  }
  return out;
}

namespace {

FieldD unguided_score(const FieldD& eps_hat, int t, const NoiseSchedule& sched) {
  require(t >= 1 && t <= sched.T, Errc::invalid_argument, "reverse step: t out of range");
  const double k = -1.0 / std::sqrt(1.0 - sched.alpha_bar[t]);
  FieldD score(eps_hat.width, eps_hat.height);
  for (std::size_t i = 0; i < score.size(); ++i) score.values[i] = k * eps_hat.values[i];
  return score;
}

}  // namespace

FieldD ancestral_step(const FieldD& x_t, int t, const FieldD& eps_hat, const NoiseSchedule& sched, Rng& rng,
                      const StepNoise& noise) {
  return reverse_step_from_score(x_t, t, unguided_score(eps_hat, t, sched), sched, rng, noise);
}

FieldD guidance_term(const FieldD& x_t, const StereoFrame& frame, const GuidanceConfig& cfg, const NormSpec& norm) {
  FieldD term(x_t.width, x_t.height);
  if (cfg.mode == GuidanceMode::none || cfg.s == 0.0) return term;
  const DisparityMap disp = denormalize_disparity(x_t, norm);
  if (cfg.mode == GuidanceMode::stereo_photometric) {
    require(!frame.left.empty() && !frame.right.empty(), Errc::invalid_argument,
            "guided_step: photometric guidance needs a stereo pair");
    const FieldD g = grad_stereo_matching_loss(frame.left, frame.right, disp, cfg);
    const double k = -cfg.s * 0.5 * norm.d_norm;
    for (std::size_t i = 0; i < term.size(); ++i) term.values[i] = k * g.values[i];
  } else {
    require(frame.raw.has_value(), Errc::invalid_argument, "guided_step: raw guidance needs a raw disparity");
    const FieldD g = raw_sign_guidance(disp, *frame.raw, cfg.alpha);
    for (std::size_t i = 0; i < term.size(); ++i) term.values[i] = cfg.s * g.values[i];
  }
  return term;
}

GuidedStepResult guided_step(const FieldD& x_t, int t, const FieldD& eps_hat, const StereoFrame& frame,
                             const NoiseSchedule& sched, const GuidanceConfig& cfg, const NormSpec& norm, Rng& rng,
                             const StepNoise& noise) {
  FieldD score = unguided_score(eps_hat, t, sched);
  GuidedStepResult out;
  if (cfg.mode != GuidanceMode::none && cfg.s != 0.0) {
    const FieldD term = guidance_term(x_t, frame, cfg, norm);
    double sq = 0.0;
    for (std::size_t i = 0; i < score.size(); ++i) {
      score.values[i] += term.values[i];
      sq += term.values[i] * term.values[i];
    }
    out.guidance_norm = std::sqrt(sq);
  }
  out.x_prev = reverse_step_from_score(x_t, t, score, sched, rng, noise);
  return out;
}

}  // namespace stereoroma
