#include "stereoroma/sgm.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <limits>
#include <string>

#include "stereoroma/error.hpp"
#include "stereoroma/parallel.hpp"

namespace stereoroma {

void SgmParams::validate() const {
  require(d_max >= 1, Errc::config_error, "sgm.d_max must be >= 1");
  require(census_window >= 3 && census_window <= 7 && census_window % 2 == 1, Errc::config_error,
          "sgm.census_window must be 3, 5 or 7");
  require(p1 > 0 && p1 < p2, Errc::config_error, "sgm penalties must satisfy 0 < p1 < p2");
  require(num_paths == 4 || num_paths == 8, Errc::config_error, "sgm.num_paths must be 4 or 8");
  require(lr_threshold >= 0.0, Errc::config_error, "sgm.lr_threshold must be >= 0");
  require(uniqueness_ratio > 0.0 && uniqueness_ratio <= 1.0, Errc::config_error,
          "sgm.uniqueness_ratio must be in (0, 1]");
}

int census_bit(int dx, int dy, int window) {
  const int r = window / 2;
  const int idx = (dy + r) * window + (dx + r);
  const int center = r * window + r;
  return idx < center ? idx : idx - 1;
}

CensusImage census_transform(const ImageF32& img, int window) {
  require(img.channels == 1, Errc::invalid_argument, "census_transform: single-channel image required");
  require(window >= 3 && window <= 7 && window % 2 == 1, Errc::invalid_argument,
          "census_transform: window must be 3, 5 or 7");
  require(window <= std::min(img.width, img.height), Errc::invalid_argument, "census_transform: window larger than image");
  const int r = window / 2;
  CensusImage out{img.width, img.height, window, std::vector<std::uint64_t>(img.pixel_count(), 0)};
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const float c = img.at(x, y);
      std::uint64_t bits = 0;
      int bit = 0;
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          if (dx == 0 && dy == 0) continue;
          const int nx = std::clamp(x + dx, 0, img.width - 1);
          const int ny = std::clamp(y + dy, 0, img.height - 1);
          if (img.at(nx, ny) > c) bits |= std::uint64_t{1} << bit;
          ++bit;
        }
      out.bits[static_cast<std::size_t>(y) * img.width + x] = bits;
    }
  return out;
}

CostVolume compute_cost_volume(const CensusImage& left, const CensusImage& right, int d_max) {
  require(left.width == right.width && left.height == right.height && left.window == right.window,
          Errc::dimension_mismatch, "compute_cost_volume: census images differ in size");
  require(d_max >= 1, Errc::invalid_argument, "compute_cost_volume: d_max must be >= 1");
  const auto sentinel = static_cast<std::uint32_t>(left.window * left.window - 1);
  CostVolume vol{left.width, left.height, d_max,
                 std::vector<std::uint32_t>(static_cast<std::size_t>(left.width) * left.height * d_max)};
  for (int y = 0; y < left.height; ++y)
    for (int x = 0; x < left.width; ++x) {
      const std::uint64_t l = left.at(x, y);
      auto* c = &vol.cost[(static_cast<std::size_t>(y) * left.width + x) * d_max];
      for (int d = 0; d < d_max; ++d)
        c[d] = x + d < left.width ? static_cast<std::uint32_t>(std::popcount(l ^ right.at(x + d, y))) : sentinel;
    }
  return vol;
}

CostVolume aggregate_direction(const CostVolume& vol, int dx, int dy, int p1, int p2) {
  const int w = vol.width, h = vol.height, D = vol.d_max;
  CostVolume out{w, h, D, std::vector<std::uint32_t>(vol.cost.size())};
  const int y0 = dy >= 0 ? 0 : h - 1, y1 = dy >= 0 ? h : -1, ys = dy >= 0 ? 1 : -1;
  const int x0 = dx >= 0 ? 0 : w - 1, x1 = dx >= 0 ? w : -1, xs = dx >= 0 ? 1 : -1;
  for (int y = y0; y != y1; y += ys)
    for (int x = x0; x != x1; x += xs) {
      const std::size_t base = (static_cast<std::size_t>(y) * w + x) * D;
      const int px = x - dx, py = y - dy;
      if (px < 0 || px >= w || py < 0 || py >= h) {
        std::copy_n(&vol.cost[base], D, &out.cost[base]);
        continue;
      }
      const auto* prev = &out.cost[(static_cast<std::size_t>(py) * w + px) * D];
      const std::uint32_t prev_min = *std::min_element(prev, prev + D);
      for (int d = 0; d < D; ++d) {
        std::uint32_t best = prev[d];
        if (d > 0) best = std::min<std::uint32_t>(best, prev[d - 1] + p1);
        if (d + 1 < D) best = std::min<std::uint32_t>(best, prev[d + 1] + p1);
        best = std::min<std::uint32_t>(best, prev_min + p2);
        out.cost[base + d] = vol.cost[base + d] + best - prev_min;
      }
    }
  return out;
}

CostVolume aggregate_paths(const CostVolume& vol, const SgmParams& params) {
  static constexpr std::array<std::array<int, 2>, 8> kDirs = {
      {{1, 0}, {-1, 0}, {0, 1}, {0, -1}, {1, 1}, {-1, -1}, {1, -1}, {-1, 1}}};
  const int n = params.num_paths;
  require(n == 4 || n == 8, Errc::invalid_argument, "aggregate_paths: num_paths must be 4 or 8");
  std::vector<CostVolume> per_dir(static_cast<std::size_t>(n));
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
    per_dir[i] = aggregate_direction(vol, kDirs[i][0], kDirs[i][1], params.p1, params.p2);
  });
  CostVolume sum{vol.width, vol.height, vol.d_max, std::vector<std::uint32_t>(vol.cost.size(), 0)};
  for (const auto& dir : per_dir)
    for (std::size_t i = 0; i < sum.cost.size(); ++i) sum.cost[i] += dir.cost[i];
  return sum;
}

namespace {

// Equiangular (V-shaped) fit through the costs at best-1, best, best+1.
double equiangular_offset(double cm, double c0, double cp) {
  double denom = cp < cm ? cm - c0 : cp - c0;
  if (denom <= 0.0) return 0.0;
  return std::clamp(0.5 * (cm - cp) / denom, -0.5, 0.5);
}

}  // namespace

DisparityMap compute_raw_disparity(const ImageF32& left, const ImageF32& right, const SgmParams& params) {
  params.validate();
  require(left.channels == 1 && right.channels == 1, Errc::invalid_argument,
          "compute_raw_disparity: single-channel images required");
  require(left.width == right.width && left.height == right.height, Errc::dimension_mismatch,
          "compute_raw_disparity: left/right sizes differ");
  const int w = left.width, h = left.height, D = params.d_max;
  auto vol = compute_cost_volume(census_transform(left, params.census_window),
                                 census_transform(right, params.census_window), D);
  // Out-of-range entries carry the sentinel in the raw volume. Fed into the
  // path recurrences unchanged, they act as evidence against large
  // disparities and leak that bias along every path leaving the right border,
  // so textureless areas get a confident (and wrong) d = 0. For aggregation
  // they are replaced by the mean in-range cost of the pixel, which is
  // neutral; WTA below never selects them.
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int in_range = std::min(D, w - x);
      if (in_range == D) continue;
      auto* c = &vol.cost[(static_cast<std::size_t>(y) * w + x) * D];
      std::uint64_t sum = 0;
      for (int d = 0; d < in_range; ++d) sum += c[d];
      const auto fill = static_cast<std::uint32_t>((sum + in_range / 2) / in_range);
      std::fill(c + in_range, c + D, fill);
    }
  const auto agg = aggregate_paths(vol, params);

  DisparityMap disp(w, h, 0.0, false);
  std::vector<int> best_left(static_cast<std::size_t>(w) * h, -1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const auto* c = &agg.cost[(static_cast<std::size_t>(y) * w + x) * D];
      const int n = std::min(D, w - x);
      const int best = static_cast<int>(std::min_element(c, c + n) - c);
      std::uint32_t second = std::numeric_limits<std::uint32_t>::max();
      for (int d = 0; d < n; ++d)
        if (std::abs(d - best) > 1) second = std::min(second, c[d]);
      // With d_max <= 3 the test is vacuous; at the right border, where too
      // few disparities remain in range to run it, the pixel stays invalid.
      const bool unique = D <= 3 || (n > 3 && static_cast<double>(c[best]) < params.uniqueness_ratio * second);
      if (!unique) continue;
      double value = best;
      if (best > 0 && best + 1 < n) value += equiangular_offset(c[best - 1], c[best], c[best + 1]);
      best_left[static_cast<std::size_t>(y) * w + x] = best;
      disp.at(x, y) = value;
    }

  // Right-view WTA: right pixel xr pairs with left pixel xr - d.
  std::vector<int> best_right(static_cast<std::size_t>(w) * h, -1);
  for (int y = 0; y < h; ++y)
    for (int xr = 0; xr < w; ++xr) {
      std::uint32_t best_cost = std::numeric_limits<std::uint32_t>::max();
      int best = -1;
      for (int d = 0; d < D && xr - d >= 0; ++d) {
        const std::uint32_t c = agg.at(xr - d, y, d);
        if (c < best_cost) {
          best_cost = c;
          best = d;
        }
      }
      best_right[static_cast<std::size_t>(y) * w + xr] = best;
    }

  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      if (best_left[i] < 0) continue;
      const int xr = x + best_left[i];
      const int dr = best_right[static_cast<std::size_t>(y) * w + xr];
      if (dr >= 0 && std::abs(disp.values[i] - dr) <= params.lr_threshold) {
        disp.valid[i] = 1;
      } else {
        disp.values[i] = 0.0;
      }
    }
  return disp;
}

DisparityMap compute_raw_disparity(const StereoFrame& frame, const SgmParams& params) {
  require(!frame.left.empty() && !frame.right.empty(), Errc::invalid_argument,
          "compute_raw_disparity: frame needs left and right images");
  return compute_raw_disparity(frame.left, frame.right, params);
}

}  // namespace stereoroma
