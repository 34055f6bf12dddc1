#pragma once

// Naive double-loop references for every evaluation metric, written against
// the textbook definitions rather than the library's code paths.

#include <algorithm>
#include <array>
#include <cmath>

#include "stereoroma/geometry.hpp"
#include "stereoroma/metrics.hpp"
#include "test_util.hpp"

namespace stereoroma::testing {

struct MetricInstance {
  DisparityMap pred, gt;
  PixelMask mask;
  CameraIntrinsics cam;
};

/// Random 16x16 instance: disparities spanning the depth range edges, some
/// invalid pixels on both sides, a random mask.
inline MetricInstance random_metric_instance(Rng& rng, int w = 16, int h = 16) {
  MetricInstance m;
  m.cam = {.fx = rng.uniform(50, 700), .fy = 100, .cx = 8, .cy = 8, .baseline = rng.uniform(0.03, 0.12)};
  m.pred = DisparityMap(w, h);
  m.gt = DisparityMap(w, h);
  m.mask.assign(static_cast<std::size_t>(w) * h, 1);
  const double fb = m.cam.fx * m.cam.baseline;
  for (std::size_t i = 0; i < m.gt.size(); ++i) {
    // gt depth in [0.1, 2.5] m so some pixels fall outside [0.2, 2].
    m.gt.values[i] = fb / rng.uniform(0.1, 2.5);
    m.pred.values[i] = std::max(1e-4, m.gt.values[i] * rng.uniform(0.8, 1.25) + rng.uniform(-0.5, 0.5));
    m.gt.valid[i] = rng.uniform() < 0.95;
    m.pred.valid[i] = rng.uniform() < 0.85;
    m.mask[i] = rng.uniform() < 0.8;
  }
  return m;
}

struct OracleMetrics {
  double epe = 0, rmse = 0, mae = 0, rel = 0;
  std::array<double, 3> delta{0, 0, 0};
  double valid_fraction = 0;
  std::size_t n = 0;
};

/// Everything over the mask gt-valid and pred-valid and gt depth in range
/// (and the mask), computed pixel by pixel.
inline OracleMetrics oracle_metrics(const MetricInstance& m, const DepthRange& range, double min_disp,
                                    bool use_mask) {
  OracleMetrics o;
  const double fb = m.cam.fx * m.cam.baseline;
  double abs_d = 0, sq = 0, ab = 0, rl = 0;
  std::array<double, 3> hits{0, 0, 0};
  std::size_t n_region = 0, n_pred = 0, n_depth = 0;
  for (int y = 0; y < m.gt.height; ++y)
    for (int x = 0; x < m.gt.width; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * m.gt.width + x;
      if (use_mask && !m.mask[i]) continue;
      if (!m.gt.is_valid(x, y) || m.gt.at(x, y) < min_disp) continue;
      const double zg = fb / m.gt.at(x, y);
      if (zg < range.z_min || zg > range.z_max) continue;
      ++n_region;
      if (!m.pred.is_valid(x, y)) continue;
      ++n_pred;
      abs_d += std::fabs(m.pred.at(x, y) - m.gt.at(x, y));
      if (m.pred.at(x, y) < min_disp) continue;
      const double zp = fb / m.pred.at(x, y);
      sq += (zp - zg) * (zp - zg);
      ab += std::fabs(zp - zg);
      rl += std::fabs(zp - zg) / zg;
      const double ratio = zp > zg ? zp / zg : zg / zp;
      hits[0] += ratio < 1.05;
      hits[1] += ratio < 1.10;
      hits[2] += ratio < 1.25;
      ++n_depth;
    }
  o.n = n_pred;
  if (n_pred > 0) o.epe = abs_d / n_pred;
  if (n_depth > 0) {
    o.rmse = std::sqrt(sq / n_depth);
    o.mae = ab / n_depth;
    o.rel = rl / n_depth;
    for (int k = 0; k < 3; ++k) o.delta[k] = 100.0 * hits[k] / n_depth;
  }
  o.valid_fraction = n_region ? static_cast<double>(n_pred) / n_region : 0.0;
  return o;
}

/// Unbiased per-pixel variance by the two-pass textbook formula.
inline std::vector<double> oracle_variance(const std::vector<DisparityMap>& s) {
  std::vector<double> out(s[0].size());
  const double n = static_cast<double>(s.size());
  for (int y = 0; y < s[0].height; ++y)
    for (int x = 0; x < s[0].width; ++x) {
      double mean = 0;
      for (const auto& m : s) mean += m.at(x, y);
      mean /= n;
      double ss = 0;
      for (const auto& m : s) ss += (m.at(x, y) - mean) * (m.at(x, y) - mean);
      out[static_cast<std::size_t>(y) * s[0].width + x] = ss / (n - 1);
    }
  return out;
}

/// Compares every metric of one instance; returns the largest absolute
/// discrepancy (deltas in percent, others in their units).
inline double metric_discrepancy(const MetricInstance& m, Rng& rng) {
  const DepthRange range;
  const double min_disp = 1e-3;
  double worst = 0;
  auto upd = [&](double a, double b) { worst = std::max(worst, std::fabs(a - b)); };

  for (bool use_mask : {false, true}) {
    const PixelMask* mask = use_mask ? &m.mask : nullptr;
    const auto o = oracle_metrics(m, range, min_disp, use_mask);
    const auto r = evaluate_run(m.pred, m.gt, m.cam, EvalOptions{range, min_disp, false}, mask);
    upd(r.epe, o.epe);
    upd(r.rmse, o.rmse);
    upd(r.mae, o.mae);
    upd(r.rel, o.rel);
    upd(r.delta_105, o.delta[0]);
    upd(r.delta_110, o.delta[1]);
    upd(r.delta_125, o.delta[2]);
    upd(r.valid_fraction, o.valid_fraction);
    upd(static_cast<double>(r.n_pixels), static_cast<double>(o.n));

    // Standalone functions over depth maps.
    const auto pz = disparity_to_depth(m.pred, m.cam, min_disp);
    const auto gz = disparity_to_depth(m.gt, m.cam, min_disp);
    const auto de = depth_metrics(pz, gz, range, mask);
    upd(de.rmse, o.rmse);
    upd(de.mae, o.mae);
    upd(de.rel, o.rel);
    const auto da = delta_accuracy(pz, gz, range, kDeltaThresholds, mask);
    for (int k = 0; k < 3; ++k) upd(da[k], o.delta[k]);

    // EPE over everything valid (no depth range).
    double s = 0;
    std::size_t n = 0;
    for (int y = 0; y < m.gt.height; ++y)
      for (int x = 0; x < m.gt.width; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * m.gt.width + x;
        if (!m.gt.is_valid(x, y) || !m.pred.is_valid(x, y) || (use_mask && !m.mask[i])) continue;
        s += std::fabs(m.pred.at(x, y) - m.gt.at(x, y));
        ++n;
      }
    upd(epe(m.pred, m.gt, mask), s / n);
  }

  std::vector<DisparityMap> runs(3 + rng.uniform_int(0, 7), m.gt);
  for (auto& r : runs)
    for (auto& v : r.values) v += rng.uniform(-2, 2);
  const auto var = uncertainty_map(runs);
  const auto ov = oracle_variance(runs);
  for (std::size_t i = 0; i < ov.size(); ++i) upd(var.values[i], ov[i]);
  return worst;
}

}  // namespace stereoroma::testing
