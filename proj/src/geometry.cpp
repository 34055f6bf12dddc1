#include "stereoroma/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>

#include "stereoroma/error.hpp"

namespace stereoroma {

void CameraIntrinsics::validate() const {
  require(fx > 0.0 && fy > 0.0, Errc::config_error, "camera focal lengths must be positive");
  require(baseline > 0.0, Errc::config_error, "camera baseline must be positive");
}

void GuidanceConfig::validate() const {
  require(gamma >= 0.0, Errc::config_error, "guidance.gamma must be >= 0");
  require(pyramid_levels >= 1, Errc::config_error, "guidance.pyramid_levels must be >= 1");
  require(ssim_window >= 1 && ssim_window % 2 == 1, Errc::config_error, "guidance.ssim_window must be odd");
  require(ssim_c1 > 0.0 && ssim_c2 > 0.0, Errc::config_error, "guidance SSIM constants must be positive");
  require(alpha >= 0.0, Errc::config_error, "guidance.alpha must be >= 0");
}

DepthMap disparity_to_depth(const DisparityMap& disp, const CameraIntrinsics& cam, double min_disp) {
  require(min_disp > 0.0, Errc::invalid_argument, "disparity_to_depth: min_disp must be positive");
  DepthMap depth(disp.width, disp.height, 0.0, false);
  const double fb = cam.fx * cam.baseline;
  for (std::size_t i = 0; i < disp.size(); ++i) {
    if (disp.valid[i] && std::isfinite(disp.values[i]) && disp.values[i] >= min_disp) {
      depth.values[i] = fb / disp.values[i];
      depth.valid[i] = 1;
    }
  }
  return depth;
}

DisparityMap depth_to_disparity(const DepthMap& depth, const CameraIntrinsics& cam) {
  DisparityMap disp(depth.width, depth.height, 0.0, false);
  const double fb = cam.fx * cam.baseline;
  for (std::size_t i = 0; i < depth.size(); ++i) {
    if (depth.valid[i] && depth.values[i] > 0.0) {
      disp.values[i] = fb / depth.values[i];
      disp.valid[i] = 1;
    }
  }
  return disp;
}

PointCloud backproject(const DepthMap& depth, const CameraIntrinsics& cam, const std::optional<ImageF32>& color) {
  if (color)
    require(color->width == depth.width && color->height == depth.height, Errc::dimension_mismatch,
            "backproject: color and depth sizes differ");
  PointCloud cloud;
  for (int v = 0; v < depth.height; ++v)
    for (int u = 0; u < depth.width; ++u) {
      if (!depth.is_valid(u, v)) continue;
      const double z = depth.at(u, v);
      if (!(z > 0.0)) continue;
      cloud.points.push_back({(u - cam.cx) / cam.fx * z, (v - cam.cy) / cam.fy * z, z});
      if (color) {
        std::array<std::uint8_t, 3> rgb{};
        for (int c = 0; c < 3; ++c) {
          const float val = color->at(u, v, std::min(c, color->channels - 1));
          rgb[c] = static_cast<std::uint8_t>(std::lround(std::clamp(val, 0.0f, 1.0f) * 255.0f));
        }
        cloud.colors.push_back(rgb);
      }
    }
  return cloud;
}

std::array<double, 2> project(const std::array<double, 3>& p, const CameraIntrinsics& cam) {
  return {cam.fx * p[0] / p[2] + cam.cx, cam.fy * p[1] / p[2] + cam.cy};
}

void write_ply(const PointCloud& cloud, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(Errc::io_failure, "cannot write " + path.string());
  const bool has_color = !cloud.colors.empty();
  out << "ply\nformat ascii 1.0\nelement vertex " << cloud.points.size() << "\n"
      << "property double x\nproperty double y\nproperty double z\n";
  if (has_color) out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  out << "end_header\n";
  // max_digits10 keeps the text round trip exact for doubles.
  out << std::setprecision(17);
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    const auto& p = cloud.points[i];
    out << p[0] << ' ' << p[1] << ' ' << p[2];
    if (has_color)
      out << ' ' << int{cloud.colors[i][0]} << ' ' << int{cloud.colors[i][1]} << ' ' << int{cloud.colors[i][2]};
    out << '\n';
  }
  if (!out) fail(Errc::io_failure, "write failed: " + path.string());
}

PointCloud read_ply(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::missing_file, "cannot open " + path.string());
  std::string line;
  std::size_t count = 0;
  bool has_color = false;
  while (std::getline(in, line)) {
    if (line.rfind("element vertex", 0) == 0) count = std::stoul(line.substr(15));
    if (line == "property uchar red") has_color = true;
    if (line == "end_header") break;
  }
  PointCloud cloud;
  for (std::size_t i = 0; i < count; ++i) {
    std::array<double, 3> p{};
    if (!(in >> p[0] >> p[1] >> p[2])) fail(Errc::truncated_file, "truncated PLY " + path.string());
    cloud.points.push_back(p);
    if (has_color) {
      int r = 0, g = 0, b = 0;
      in >> r >> g >> b;
      cloud.colors.push_back({static_cast<std::uint8_t>(r), static_cast<std::uint8_t>(g), static_cast<std::uint8_t>(b)});
    }
  }
  return cloud;
}

namespace {

// Row-wise linear sample with border clamp; also returns d(value)/du, which
// is zero when the coordinate is clamped.
struct RowSample {
  double value;
  double slope;
};

RowSample sample_row(const double* row, int w, double u) {
  if (u <= 0.0) return {row[0], 0.0};
  if (u >= w - 1) return {row[w - 1], 0.0};
  const int x0 = static_cast<int>(std::floor(u));
  const int x1 = std::min(x0 + 1, w - 1);
  const double f = u - x0;
  return {(1.0 - f) * row[x0] + f * row[x1], row[x1] - row[x0]};
}

std::vector<double> to_doubles(const ImageF32& img) {
  require(img.channels == 1, Errc::invalid_argument, "single-channel image required");
  return {img.data.begin(), img.data.end()};
}

// Truncated-window box statistics. Window radius r; at borders only the
// in-image part of the window is averaged.
class BoxFilter {
 public:
  BoxFilter(int w, int h, int r) : w_(w), h_(h), r_(r), inv_count_(static_cast<std::size_t>(w) * h) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const int nx = std::min(x + r, w - 1) - std::max(x - r, 0) + 1;
        const int ny = std::min(y + r, h - 1) - std::max(y - r, 0) + 1;
        inv_count_[static_cast<std::size_t>(y) * w + x] = 1.0 / (nx * ny);
      }
  }

  std::vector<double> sum(const std::vector<double>& in) const {
    // Separable running sums; fixed evaluation order.
    std::vector<double> tmp(in.size()), out(in.size());
    for (int y = 0; y < h_; ++y)
      for (int x = 0; x < w_; ++x) {
        double s = 0.0;
        for (int k = std::max(x - r_, 0); k <= std::min(x + r_, w_ - 1); ++k) s += in[static_cast<std::size_t>(y) * w_ + k];
        tmp[static_cast<std::size_t>(y) * w_ + x] = s;
      }
    for (int y = 0; y < h_; ++y)
      for (int x = 0; x < w_; ++x) {
        double s = 0.0;
        for (int k = std::max(y - r_, 0); k <= std::min(y + r_, h_ - 1); ++k) s += tmp[static_cast<std::size_t>(k) * w_ + x];
        out[static_cast<std::size_t>(y) * w_ + x] = s;
      }
    return out;
  }

  std::vector<double> mean(const std::vector<double>& in) const {
    auto out = sum(in);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= inv_count_[i];
    return out;
  }

  // Adjoint of mean(): out[q] = sum over windows p containing q of g[p] / n(p).
  std::vector<double> mean_adjoint(const std::vector<double>& g) const {
    std::vector<double> scaled(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) scaled[i] = g[i] * inv_count_[i];
    return sum(scaled);
  }

 private:
  int w_, h_, r_;
  std::vector<double> inv_count_;
};

struct SsimTerms {
  double loss = 0.0;
  std::vector<double> per_pixel;
  std::vector<double> grad_b;  // d(mean loss)/d b, filled on request
};

SsimTerms ssim_terms(const std::vector<double>& a, const std::vector<double>& b, int w, int h, int window, double c1,
                     double c2, bool want_grad) {
  const BoxFilter box(w, h, window / 2);
  const std::size_t n = a.size();
  std::vector<double> aa(n), bb(n), ab(n);
  for (std::size_t i = 0; i < n; ++i) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  const auto mu_a = box.mean(a), mu_b = box.mean(b), s_aa = box.mean(aa), s_bb = box.mean(bb), s_ab = box.mean(ab);

  SsimTerms out;
  out.per_pixel.resize(n);
  std::vector<double> g_mu_b, g_s_bb, g_s_ab;
  if (want_grad) {
    g_mu_b.resize(n);
    g_s_bb.resize(n);
    g_s_ab.resize(n);
  }
  const double g = -0.5 / static_cast<double>(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double ma = mu_a[i], mb = mu_b[i];
    const double n1 = 2.0 * ma * mb + c1;
    const double n2 = 2.0 * (s_ab[i] - ma * mb) + c2;
    const double d1 = ma * ma + mb * mb + c1;
    const double d2 = (s_aa[i] - ma * ma) + (s_bb[i] - mb * mb) + c2;
    const double ssim = (n1 * n2) / (d1 * d2);
    out.per_pixel[i] = 0.5 * (1.0 - ssim);
    total += out.per_pixel[i];
    if (want_grad) {
      const double dd = d1 * d2;
      g_mu_b[i] = g * ((2.0 * ma * n2 - 2.0 * ma * n1) / dd - ssim * (2.0 * mb / d1 - 2.0 * mb / d2));
      g_s_bb[i] = g * (-ssim / d2);
      g_s_ab[i] = g * (2.0 * n1 / dd);
    }
  }
  out.loss = total / static_cast<double>(n);
  if (want_grad) {
    const auto t_mu = box.mean_adjoint(g_mu_b), t_bb = box.mean_adjoint(g_s_bb), t_ab = box.mean_adjoint(g_s_ab);
    out.grad_b.resize(n);
    for (std::size_t i = 0; i < n; ++i) out.grad_b[i] = t_mu[i] + 2.0 * b[i] * t_bb[i] + a[i] * t_ab[i];
  }
  return out;
}

struct SmoothTerms {
  double loss = 0.0;
  std::vector<double> per_pixel;
  std::vector<double> grad_d;
};

SmoothTerms smooth_terms(const std::vector<double>& img, const std::vector<double>& d, int w, int h, bool want_grad) {
  SmoothTerms out;
  const std::size_t n = d.size();
  out.per_pixel.assign(n, 0.0);
  if (want_grad) out.grad_d.assign(n, 0.0);
  const double inv_n = 1.0 / static_cast<double>(n);
  double total = 0.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x + 1 < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      const double diff = d[i + 1] - d[i];
      const double weight = std::exp(-std::abs(img[i + 1] - img[i]));
      out.per_pixel[i] = std::abs(diff) * weight;
      total += out.per_pixel[i];
      if (want_grad && diff != 0.0) {
        const double gi = (diff > 0.0 ? 1.0 : -1.0) * weight * inv_n;
        out.grad_d[i + 1] += gi;
        out.grad_d[i] -= gi;
      }
    }
  out.loss = total * inv_n;
  return out;
}

FieldD to_field(const std::vector<double>& v, int w, int h) {
  FieldD f(w, h);
  f.values = v;
  return f;
}

}  // namespace

ImageF32 warp_right_to_left(const ImageF32& right, const DisparityMap& disp) {
  require(right.width == disp.width && right.height == disp.height, Errc::dimension_mismatch,
          "warp_right_to_left: sizes differ");
  ImageF32 out(right.width, right.height, right.channels);
  const int w = right.width;
  std::vector<double> row(static_cast<std::size_t>(w));
  for (int c = 0; c < right.channels; ++c)
    for (int v = 0; v < right.height; ++v) {
      for (int x = 0; x < w; ++x) row[x] = right.at(x, v, c);
      for (int u = 0; u < w; ++u) out.at(u, v, c) = static_cast<float>(sample_row(row.data(), w, u + disp.at(u, v)).value);
    }
  return out;
}

LossMap ssim_loss(const ImageF32& a, const ImageF32& b, int window, double c1, double c2) {
  require(a.width == b.width && a.height == b.height, Errc::dimension_mismatch, "ssim_loss: sizes differ");
  require(window >= 1 && window % 2 == 1, Errc::invalid_argument, "ssim_loss: window must be odd");
  auto t = ssim_terms(to_doubles(a), to_doubles(b), a.width, a.height, window, c1, c2, false);
  return {t.loss, to_field(t.per_pixel, a.width, a.height)};
}

LossMap smoothness_loss(const ImageF32& left, const DisparityMap& disp) {
  require(left.width == disp.width && left.height == disp.height, Errc::dimension_mismatch,
          "smoothness_loss: sizes differ");
  auto t = smooth_terms(to_doubles(left), disp.values, left.width, left.height, false);
  return {t.loss, to_field(t.per_pixel, left.width, left.height)};
}

LossAndGrad stereo_matching_loss_and_grad(const ImageF32& left, const ImageF32& right, const DisparityMap& disp,
                                          const GuidanceConfig& cfg) {
  cfg.validate();
  require(left.width == right.width && left.height == right.height && left.width == disp.width &&
              left.height == disp.height,
          Errc::dimension_mismatch, "stereo_matching_loss: sizes differ");
  const int levels = cfg.pyramid_levels;
  const auto lp = build_pyramid(left, levels);
  const auto rp = build_pyramid(right, levels);

  // Disparity pyramid: 2x2 average, then halve the values.
  std::vector<std::vector<double>> dp{disp.values};
  for (int k = 1; k < levels; ++k) {
    const int w = lp.levels[k].width, h = lp.levels[k].height, pw = lp.levels[k - 1].width;
    const auto& prev = dp.back();
    std::vector<double> cur(static_cast<std::size_t>(w) * h);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const std::size_t i = static_cast<std::size_t>(2 * y) * pw + 2 * x;
        cur[static_cast<std::size_t>(y) * w + x] = 0.125 * (prev[i] + prev[i + 1] + prev[i + pw] + prev[i + pw + 1]);
      }
    dp.push_back(std::move(cur));
  }

  LossAndGrad out;
  std::vector<double> upper_grad;  // gradient w.r.t. dp[k + 1]
  for (int k = levels - 1; k >= 0; --k) {
    const int w = lp.levels[k].width, h = lp.levels[k].height;
    const auto a = to_doubles(lp.levels[k]);
    const auto r = to_doubles(rp.levels[k]);
    const auto& d = dp[k];
    std::vector<double> b(d.size()), slope(d.size());
    for (int v = 0; v < h; ++v)
      for (int u = 0; u < w; ++u) {
        const std::size_t i = static_cast<std::size_t>(v) * w + u;
        const auto s = sample_row(&r[static_cast<std::size_t>(v) * w], w, u + d[i]);
        b[i] = s.value;
        slope[i] = s.slope;
      }
    const auto ssim = ssim_terms(a, b, w, h, cfg.ssim_window, cfg.ssim_c1, cfg.ssim_c2, true);
    const auto smooth = smooth_terms(a, d, w, h, true);
    out.loss += ssim.loss + cfg.gamma * smooth.loss;

    std::vector<double> g(d.size());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = ssim.grad_b[i] * slope[i] + cfg.gamma * smooth.grad_d[i];
    if (!upper_grad.empty()) {
      const int cw = lp.levels[k + 1].width, ch = lp.levels[k + 1].height;
      for (int y = 0; y < ch; ++y)
        for (int x = 0; x < cw; ++x) {
          const double gc = 0.125 * upper_grad[static_cast<std::size_t>(y) * cw + x];
          const std::size_t i = static_cast<std::size_t>(2 * y) * w + 2 * x;
          g[i] += gc;
          g[i + 1] += gc;
          g[i + w] += gc;
          g[i + w + 1] += gc;
        }
    }
    upper_grad = std::move(g);
  }
  out.grad = to_field(upper_grad, disp.width, disp.height);
  return out;
}

double stereo_matching_loss(const ImageF32& left, const ImageF32& right, const DisparityMap& disp,
                            const GuidanceConfig& cfg) {
  return stereo_matching_loss_and_grad(left, right, disp, cfg).loss;
}

FieldD grad_stereo_matching_loss(const ImageF32& left, const ImageF32& right, const DisparityMap& disp,
                                 const GuidanceConfig& cfg) {
  return stereo_matching_loss_and_grad(left, right, disp, cfg).grad;
}

FieldD raw_sign_guidance(const DisparityMap& disp, const DisparityMap& raw, double alpha) {
  require(disp.width == raw.width && disp.height == raw.height, Errc::dimension_mismatch,
          "raw_sign_guidance: sizes differ");
  FieldD out(disp.width, disp.height);
  for (std::size_t i = 0; i < disp.size(); ++i) {
    if (!raw.valid[i] || !(raw.values[i] > 0.0)) continue;
    const double diff = raw.values[i] - disp.values[i];
    out.values[i] = diff > 0.0 ? alpha : (diff < 0.0 ? -alpha : 0.0);
  }
  return out;
}

}  // namespace stereoroma
