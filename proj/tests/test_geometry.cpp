#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>

#include "gradient_oracle.hpp"
#include "stereoroma/error.hpp"
#include "stereoroma/geometry.hpp"

using namespace stereoroma;
using stereoroma::testing::TempDir;

namespace {

CameraIntrinsics cam_600() { return {.fx = 600, .fy = 600, .cx = 31.5, .cy = 23.5, .baseline = 0.055}; }

}  // namespace

TEST(Depth, UnitAndArithmetic) {
  DisparityMap d(1, 1, 1.0);
  EXPECT_DOUBLE_EQ(disparity_to_depth(d, {.fx = 1, .fy = 1, .baseline = 1}, 1e-3).values[0], 1.0);
  d.values[0] = 33.0;
  EXPECT_NEAR(disparity_to_depth(d, cam_600(), 1e-3).values[0], 1.0, 1e-12);
  d.values[0] = 1e-4;
  EXPECT_FALSE(disparity_to_depth(d, cam_600(), 0.1).valid[0]);
}

TEST(Depth, InverseRoundTrip) {
  Rng rng(1);
  DepthMap z(8, 8);
  for (auto& v : z.values) v = rng.uniform(0.2, 3.0);
  z.valid[5] = 0;
  const auto disp = depth_to_disparity(z, cam_600());
  EXPECT_FALSE(disp.valid[5]);
  const auto back = disparity_to_depth(disp, cam_600(), 1e-6);
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (i == 5) continue;
    EXPECT_NEAR(back.values[i], z.values[i], 1e-5);
  }
  DepthMap two(1, 1, 2.0);
  EXPECT_NEAR(depth_to_disparity(two, cam_600()).values[0], 16.5, 1e-12);
}

TEST(Backproject, PrincipalPointOnAxis) {
  CameraIntrinsics cam{.fx = 500, .fy = 520, .cx = 3, .cy = 2, .baseline = 0.1};
  DepthMap z(6, 5, 0.0, false);
  z.at(3, 2) = 1.7;
  z.valid[2 * 6 + 3] = 1;
  const auto cloud = backproject(z, cam);
  ASSERT_EQ(cloud.points.size(), 1u);
  EXPECT_DOUBLE_EQ(cloud.points[0][0], 0.0);
  EXPECT_DOUBLE_EQ(cloud.points[0][1], 0.0);
  EXPECT_DOUBLE_EQ(cloud.points[0][2], 1.7);
}

TEST(Backproject, ReprojectionRecoversPixels) {
  Rng rng(2);
  DepthMap z(64, 48);
  for (auto& v : z.values) v = rng.uniform(0.3, 2.0);
  const auto cam = cam_600();
  const auto cloud = backproject(z, cam);
  ASSERT_EQ(cloud.points.size(), z.size());
  std::size_t i = 0;
  for (int v = 0; v < 48; ++v)
    for (int u = 0; u < 64; ++u, ++i) {
      const auto uv = project(cloud.points[i], cam);
      EXPECT_NEAR(uv[0], u, 1e-6);
      EXPECT_NEAR(uv[1], v, 1e-6);
    }
}

TEST(Backproject, ConstantDepthIsPlanar) {
  DepthMap z(20, 10, 0.8);
  const auto cloud = backproject(z, cam_600());
  // Least-squares plane fit through the centroid; smallest singular value
  // measures out-of-plane spread.
  Eigen::MatrixXd m(static_cast<Eigen::Index>(cloud.points.size()), 3);
  for (std::size_t i = 0; i < cloud.points.size(); ++i)
    for (int c = 0; c < 3; ++c) m(static_cast<Eigen::Index>(i), c) = cloud.points[i][c];
  const Eigen::RowVector3d centroid = m.colwise().mean();
  m.rowwise() -= centroid;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  EXPECT_LT(svd.singularValues()(2), 1e-12);
}

TEST(Ply, RoundTripWithColor) {
  TempDir dir;
  PointCloud c;
  c.points = {{0.1, -0.2, 1.0 / 3.0}, {1e-9, 2.5, 7.0}};
  c.colors = {{1, 2, 3}, {255, 0, 128}};
  write_ply(c, dir / "c.ply");
  const auto back = read_ply(dir / "c.ply");
  EXPECT_EQ(back.points, c.points);
  EXPECT_EQ(back.colors, c.colors);
}

TEST(Warp, ZeroDisparityIsIdentity) {
  Rng rng(3);
  const auto right = stereoroma::testing::random_image(13, 7, 1, rng);
  EXPECT_EQ(warp_right_to_left(right, DisparityMap(13, 7, 0.0)), right);
}

TEST(Warp, ShiftSceneRecoversLeft) {
  Rng rng(4);
  const auto s = stereoroma::testing::make_shift_scene(32, 16, 5, rng);
  const auto warped = warp_right_to_left(s.right, s.gt);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x + 5 < 32; ++x) EXPECT_EQ(warped.at(x, y), s.left.at(x, y));
}

TEST(Warp, ClampsPastBorder) {
  Rng rng(5);
  const auto right = stereoroma::testing::random_image(10, 3, 1, rng);
  const auto warped = warp_right_to_left(right, DisparityMap(10, 3, 50.0));
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 10; ++x) EXPECT_EQ(warped.at(x, y), right.at(9, y));
}

TEST(Ssim, IdenticalIsZero) {
  Rng rng(6);
  const auto a = stereoroma::testing::random_image(12, 12, 1, rng);
  const auto l = ssim_loss(a, a, 7, 1e-4, 9e-4);
  EXPECT_NEAR(l.value, 0.0, 1e-12);
  for (double v : l.per_pixel.values) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(Ssim, ConstantImagesClosedForm) {
  // Zero variance everywhere: SSIM = (2 ma mb + c1) c2 / ((ma^2 + mb^2 + c1) c2).
  const double c1 = 1e-4, c2 = 9e-4;
  for (double b : {1.0, 0.5, 0.25}) {
    const double ssim = c1 / (b * b + c1);
    const double expected = 0.5 * (1.0 - ssim);
    const auto l = ssim_loss(ImageF32(9, 9, 1, 0.0f), ImageF32(9, 9, 1, static_cast<float>(b)), 7, c1, c2);
    for (double v : l.per_pixel.values) EXPECT_NEAR(v, expected, 1e-12);
  }
}

TEST(Ssim, SymmetricAndBounded) {
  Rng rng(7);
  const auto a = stereoroma::testing::random_image(16, 12, 1, rng);
  const auto b = stereoroma::testing::random_image(16, 12, 1, rng);
  const auto ab = ssim_loss(a, b, 7, 1e-4, 9e-4), ba = ssim_loss(b, a, 7, 1e-4, 9e-4);
  EXPECT_NEAR(ab.value, ba.value, 1e-14);
  for (std::size_t i = 0; i < ab.per_pixel.size(); ++i) {
    EXPECT_NEAR(ab.per_pixel.values[i], ba.per_pixel.values[i], 1e-14);
    EXPECT_GE(ab.per_pixel.values[i], 0.0);
    EXPECT_LE(ab.per_pixel.values[i], 1.0);
  }
}

TEST(Smoothness, ClosedForms) {
  const ImageF32 flat(8, 4, 1, 0.3f);
  EXPECT_EQ(smoothness_loss(flat, DisparityMap(8, 4, 5.0)).value, 0.0);

  DisparityMap ramp(8, 4);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 8; ++x) ramp.at(x, y) = x;
  const auto l = smoothness_loss(flat, ramp);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 7; ++x) EXPECT_DOUBLE_EQ(l.per_pixel.at(x, y), 1.0);
    EXPECT_EQ(l.per_pixel.at(7, y), 0.0);
  }

  ImageF32 stripes(8, 4);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 8; ++x) stripes.at(x, y) = static_cast<float>(x % 2);
  EXPECT_LT(smoothness_loss(stripes, ramp).value, l.value);
}

TEST(StereoLoss, SingleLevelIsSsimPlusSmoothness) {
  Rng rng(8);
  const auto s = stereoroma::testing::make_shift_scene(32, 32, 3, rng);
  DisparityMap d(32, 32);
  for (auto& v : d.values) v = 3.0 + rng.uniform(-1, 1);
  GuidanceConfig cfg{.gamma = 0.3, .pyramid_levels = 1};
  const double expected = ssim_loss(s.left, warp_right_to_left(s.right, d), 7, cfg.ssim_c1, cfg.ssim_c2).value +
                          0.3 * smoothness_loss(s.left, d).value;
  // The warp inside the loss stays in double; the float warp here rounds.
  EXPECT_NEAR(stereo_matching_loss(s.left, s.right, d, cfg), expected, 1e-6);
}

TEST(StereoLoss, GroundTruthBeatsOffsets) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(20 + seed);
    const auto s = stereoroma::testing::make_shift_scene(64, 32, 6, rng);
    const GuidanceConfig cfg;
    const double at_gt = stereo_matching_loss(s.left, s.right, s.gt, cfg);
    for (double delta : {1.0, 2.0, 4.0}) {
      DisparityMap off = s.gt;
      for (auto& v : off.values) v += delta;
      EXPECT_LT(at_gt, stereo_matching_loss(s.left, s.right, off, cfg)) << "delta " << delta;
    }
  }
}

TEST(StereoLoss, ConstantImagesGiveZeroGradient) {
  const ImageF32 a(32, 32, 1, 0.4f), b(32, 32, 1, 0.6f);
  Rng rng(9);
  DisparityMap d(32, 32);
  for (auto& v : d.values) v = rng.uniform(0, 5);
  const auto g = grad_stereo_matching_loss(a, b, d, GuidanceConfig{.gamma = 0.0});
  for (double v : g.values) EXPECT_EQ(v, 0.0);
}

TEST(StereoLoss, GammaZeroIgnoresFlatRegions) {
  // Far from texture (beyond the SSIM support) the loss cannot see disparity.
  ImageF32 img(32, 32, 1, 0.5f);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 6; ++x) img.at(x, y) = static_cast<float>((x + y) % 3) / 3.0f;
  const GuidanceConfig cfg{.gamma = 0.0, .pyramid_levels = 1};
  DisparityMap d(32, 32, 1.0), e = d;
  e.at(25, 16) = 3.7;
  EXPECT_EQ(stereo_matching_loss(img, img, d, cfg), stereo_matching_loss(img, img, e, cfg));
}

TEST(StereoLoss, GradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto r = stereoroma::testing::check_stereo_gradient(seed, 32, 32, 60, GuidanceConfig{});
    EXPECT_GT(r.probes, 40);
    EXPECT_LT(r.max_rel_error, 1e-4) << "seed " << seed;
  }
}

TEST(StereoLoss, GradientSmallerAtGroundTruth) {
  Rng rng(10);
  const auto s = stereoroma::testing::make_shift_scene(32, 32, 4, rng);
  auto norm = [](const FieldD& f) {
    double a = 0;
    for (double v : f.values) a += v * v;
    return std::sqrt(a);
  };
  const GuidanceConfig cfg;
  DisparityMap off = s.gt;
  for (auto& v : off.values) v += 1.0;
  EXPECT_LT(norm(grad_stereo_matching_loss(s.left, s.right, s.gt, cfg)),
            norm(grad_stereo_matching_loss(s.left, s.right, off, cfg)));
}

TEST(StereoLoss, TooDeepPyramidIsError) {
  EXPECT_THROW(stereo_matching_loss(ImageF32(16, 16), ImageF32(16, 16), DisparityMap(16, 16),
                                    GuidanceConfig{.pyramid_levels = 3}),
               Error);
}

TEST(RawSign, Definition) {
  DisparityMap d(4, 1), raw(4, 1);
  d.values = {2.0, 5.0, 3.0, 1.0};
  raw.values = {2.0, 4.0, 6.0, 9.0};
  raw.valid = {1, 1, 1, 0};
  const auto g = raw_sign_guidance(d, raw, 0.7);
  EXPECT_EQ(g.values, (std::vector<double>{0.0, -0.7, 0.7, 0.0}));
  // Zero-valued raw is treated as missing.
  raw.values[0] = 0.0;
  d.values[0] = -1.0;
  EXPECT_EQ(raw_sign_guidance(d, raw, 0.7).values[0], 0.0);
}
