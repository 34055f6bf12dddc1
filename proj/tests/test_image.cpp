#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <limits>

#include "stereoroma/error.hpp"
#include "stereoroma/image.hpp"
#include "test_util.hpp"

using namespace stereoroma;
using stereoroma::testing::TempDir;

namespace {

template <class F>
Errc error_code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no Error thrown";
  return Errc::invalid_argument;
}

bool bitwise_equal(const ImageF32& a, const ImageF32& b) {
  return a.width == b.width && a.height == b.height && a.channels == b.channels &&
         std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) == 0;
}

}  // namespace

TEST(ImageIo, PgmEndpointsScaleToUnitRange) {
  TempDir dir;
  const std::vector<char> bytes = {'P', '5', '\n', '2', ' ', '2', '\n', '2', '5', '5', '\n',
                                   0,   static_cast<char>(255),   0,   static_cast<char>(255)};
  stereoroma::testing::write_bytes(dir / "a.pgm", bytes);
  const auto img = load_image(dir / "a.pgm");
  ASSERT_EQ(img.width, 2);
  ASSERT_EQ(img.height, 2);
  EXPECT_EQ(img.data, (std::vector<float>{0.0f, 1.0f, 0.0f, 1.0f}));
}

TEST(ImageIo, Pgm16BitScales) {
  TempDir dir;
  std::vector<char> bytes = {'P', '5', '\n', '2', ' ', '1', '\n', '6', '5', '5', '3', '5', '\n'};
  // Big-endian samples 0 and 65535.
  for (unsigned char b : {0x00, 0x00, 0xFF, 0xFF}) bytes.push_back(static_cast<char>(b));
  stereoroma::testing::write_bytes(dir / "b.pgm", bytes);
  const auto img = load_image(dir / "b.pgm");
  EXPECT_EQ(img.data, (std::vector<float>{0.0f, 1.0f}));
}

TEST(ImageIo, MinimalPfmLayout) {
  TempDir dir;
  ImageF32 img(1, 1, 1, 0.25f);
  save_pfm(img, dir / "m.pfm");
  const auto bytes = stereoroma::testing::read_bytes(dir / "m.pfm");
  const std::string header = "Pf\n1 1\n-1\n";
  ASSERT_EQ(bytes.size(), header.size() + 4);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + static_cast<long>(header.size())), header);
  float v;
  std::memcpy(&v, bytes.data() + header.size(), 4);
  EXPECT_EQ(v, 0.25f);
}

TEST(ImageIo, ThreeChannelPayloadSize) {
  TempDir dir;
  ImageF32 img(2, 2, 3, 1.0f);
  save_pfm(img, dir / "c.pfm");
  const auto bytes = stereoroma::testing::read_bytes(dir / "c.pfm");
  const std::string header = "PF\n2 2\n-1\n";
  EXPECT_EQ(bytes.size() - header.size(), 48u);
}

TEST(ImageIo, PfmRoundTripIsBitExact) {
  TempDir dir;
  Rng rng(11);
  for (auto [w, h, c] : {std::tuple{16, 16, 1}, std::tuple{33, 17, 1}, std::tuple{5, 9, 3}}) {
    auto img = stereoroma::testing::random_image(w, h, c, rng, -1e6, 1e6);
    // Extreme finite values and signed zero.
    img.data[0] = std::numeric_limits<float>::max();
    img.data[1] = std::numeric_limits<float>::denorm_min();
    img.data[2] = -0.0f;
    save_pfm(img, dir / "r.pfm");
    EXPECT_TRUE(bitwise_equal(load_image(dir / "r.pfm"), img)) << w << "x" << h << "x" << c;
  }
}

TEST(ImageIo, ExternallyWrittenLittleEndianPfm) {
  // Written by tests/data/make_fixtures.py, rows stored bottom-to-top.
  const auto img = load_image(std::filesystem::path(STEREOROMA_TEST_DATA) / "ref_little_endian.pfm");
  ASSERT_EQ(img.width, 3);
  ASSERT_EQ(img.height, 2);
  EXPECT_EQ(img.at(0, 0), 3.5f);
  EXPECT_EQ(img.at(2, 0), -2.25f);
  EXPECT_EQ(img.at(1, 1), 7.0f);
  EXPECT_EQ(img.at(2, 1), 1e-3f);
}

TEST(ImageIo, BigEndianPfmIsByteSwapped) {
  TempDir dir;
  std::vector<char> bytes;
  for (char ch : std::string("Pf\n1 1\n1.0\n")) bytes.push_back(ch);
  std::uint32_t raw;
  const float v = 3.5f;
  std::memcpy(&raw, &v, 4);
  for (int s = 24; s >= 0; s -= 8) bytes.push_back(static_cast<char>((raw >> s) & 0xFF));
  stereoroma::testing::write_bytes(dir / "be.pfm", bytes);
  EXPECT_EQ(load_image(dir / "be.pfm").at(0, 0), 3.5f);
}

TEST(ImageIo, DistinctErrors) {
  TempDir dir;
  ImageF32 img(4, 4, 1, 0.5f);
  save_pfm(img, dir / "ok.pfm");
  auto bytes = stereoroma::testing::read_bytes(dir / "ok.pfm");

  auto truncated = bytes;
  truncated.resize(truncated.size() - 3);
  stereoroma::testing::write_bytes(dir / "t.pfm", truncated);
  EXPECT_EQ(error_code_of([&] { load_image(dir / "t.pfm"); }), Errc::truncated_file);

  auto longer = bytes;
  longer.insert(longer.end(), 8, 0);
  stereoroma::testing::write_bytes(dir / "l.pfm", longer);
  EXPECT_EQ(error_code_of([&] { load_image(dir / "l.pfm"); }), Errc::size_mismatch);

  stereoroma::testing::write_bytes(dir / "x.bin", {'G', 'I', 'F', '8', '9', 'a'});
  EXPECT_EQ(error_code_of([&] { load_image(dir / "x.bin"); }), Errc::unsupported_format);

  EXPECT_EQ(error_code_of([&] { load_image(dir / "absent.pfm"); }), Errc::missing_file);
  EXPECT_EQ(error_code_of([&] { save_pfm(ImageF32(2, 2, 2), dir / "bad.pfm"); }), Errc::invalid_argument);
}

TEST(ImageIo, PngRoundTrip8Bit) {
  TempDir dir;
  ImageF32 img(3, 2, 3);
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<float>(i * 13 % 256) / 255.0f;
  save_png(img, dir / "a.png");
  EXPECT_EQ(load_image(dir / "a.png"), img);
}

TEST(Downsample, ConstantStaysConstant) {
  ImageF32 img(10, 6, 1, 0.37f);
  const auto half = downsample_half(img);
  EXPECT_EQ(half.width, 5);
  EXPECT_EQ(half.height, 3);
  for (float v : half.data) EXPECT_FLOAT_EQ(v, 0.37f);
}

TEST(Downsample, TwoByTwoMean) {
  ImageF32 img(2, 2);
  img.data = {1, 2, 3, 4};
  EXPECT_EQ(downsample_half(img).data, std::vector<float>{2.5f});
}

TEST(Downsample, OddSizeMatchesBlockMeans) {
  Rng rng(3);
  const auto img = stereoroma::testing::random_image(5, 5, 1, rng);
  const auto half = downsample_half(img);
  ASSERT_EQ(half.width, 2);
  ASSERT_EQ(half.height, 2);
  for (int by = 0; by < 2; ++by)
    for (int bx = 0; bx < 2; ++bx) {
      double s = 0;
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx) s += img.data[(2 * by + dy) * 5 + 2 * bx + dx];
      EXPECT_NEAR(half.at(bx, by), s / 4.0, 1e-6);
    }
}

TEST(Downsample, PreservesMeanOnEvenSizes) {
  Rng rng(4);
  const auto img = stereoroma::testing::random_image(16, 8, 1, rng);
  const auto half = downsample_half(img);
  double a = 0, b = 0;
  for (float v : img.data) a += v;
  for (float v : half.data) b += v;
  EXPECT_NEAR(a / img.data.size(), b / half.data.size(), 1e-6);
}

TEST(Downsample, RejectsTinyImages) {
  EXPECT_THROW(downsample_half(ImageF32(1, 4)), Error);
}

TEST(Bilinear, LatticeMidpointAndClamp) {
  Rng rng(5);
  const auto img = stereoroma::testing::random_image(7, 5, 2, rng);
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 7; ++x) EXPECT_EQ(bilinear_sample(img, x, y, 1), img.at(x, y, 1));

  ImageF32 ramp(2, 1);
  ramp.data = {0.0f, 1.0f};
  EXPECT_FLOAT_EQ(bilinear_sample(ramp, 0.5, 0.0), 0.5f);
  EXPECT_EQ(bilinear_sample(img, -3.2, 2.0), img.at(0, 2));
  EXPECT_EQ(bilinear_sample(img, 100.0, -7.0), img.at(6, 0));
}

TEST(Bilinear, PiecewiseLinearInU) {
  Rng rng(6);
  const auto img = stereoroma::testing::random_image(8, 4, 1, rng);
  // Within one cell the second difference vanishes.
  for (double u = 2.05; u < 2.9; u += 0.1) {
    const double a = bilinear_sample(img, u - 0.04, 1.3), b = bilinear_sample(img, u, 1.3),
                 c = bilinear_sample(img, u + 0.04, 1.3);
    EXPECT_NEAR(a - 2 * b + c, 0.0, 1e-6);
  }
  // Continuity across the lattice line.
  EXPECT_NEAR(bilinear_sample(img, 3.0 - 1e-7, 1.5), bilinear_sample(img, 3.0 + 1e-7, 1.5), 1e-5);
}

TEST(Pyramid, Sizes) {
  ImageF32 img(64, 64, 1, 0.2f);
  const auto p = build_pyramid(img, 3);
  ASSERT_EQ(p.levels.size(), 3u);
  EXPECT_EQ(p.levels[1].width, 32);
  EXPECT_EQ(p.levels[2].width, 16);
  for (const auto& l : p.levels)
    for (float v : l.data) EXPECT_FLOAT_EQ(v, 0.2f);
  EXPECT_EQ(build_pyramid(img, 1).levels.size(), 1u);
}

TEST(Pyramid, FloorHalving) {
  ImageF32 img(45, 37);
  const auto p = build_pyramid(img, 3);
  for (std::size_t i = 1; i < p.levels.size(); ++i) {
    EXPECT_EQ(p.levels[i].width, p.levels[i - 1].width / 2);
    EXPECT_EQ(p.levels[i].height, p.levels[i - 1].height / 2);
  }
}

TEST(Pyramid, TooDeepIsError) {
  EXPECT_THROW(build_pyramid(ImageF32(32, 32), 4), Error);
  EXPECT_NO_THROW(build_pyramid(ImageF32(32, 32), 3));
}

TEST(Colormap, EndpointsAndInvalid) {
  EXPECT_EQ(colormap_index(0.0, 50.0), 0);
  EXPECT_EQ(colormap_index(50.0, 50.0), 255);
  EXPECT_EQ(colormap_index(80.0, 50.0), 255);

  DisparityMap d(3, 1);
  d.values = {0.0, 50.0, 10.0};
  d.valid = {1, 1, 0};
  TempDir dir;
  colorize_disparity(d, 50.0, dir / "c.png");
  const auto png = load_image(dir / "c.png");
  ASSERT_EQ(png.channels, 3);
  const auto& cmap = disparity_colormap();
  for (int c = 0; c < 3; ++c) {
    EXPECT_EQ(std::lround(png.at(0, 0, c) * 255), cmap[0][c]);
    EXPECT_EQ(std::lround(png.at(1, 0, c) * 255), cmap[255][c]);
    EXPECT_EQ(png.at(2, 0, c), 0.0f);
  }
}
