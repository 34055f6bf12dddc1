#include "stereoroma/image.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>

#include "stereoroma/error.hpp"

namespace stereoroma {

ImageF32::ImageF32(int w, int h, int c, float fill)
    : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {
  require(w >= 0 && h >= 0 && c >= 1, Errc::invalid_argument, "ImageF32: bad dimensions");
}

ImageF32 ImageF32::channel(int c) const {
  require(c >= 0 && c < channels, Errc::invalid_argument, "ImageF32::channel: index out of range");
  ImageF32 out(width, height, 1);
  for (std::size_t i = 0; i < pixel_count(); ++i) out.data[i] = data[i * channels + c];
  return out;
}

namespace {

std::vector<unsigned char> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::missing_file, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Whitespace-separated header tokens with '#' comments (netpbm style).
class HeaderReader {
 public:
  explicit HeaderReader(const std::vector<unsigned char>& bytes) : bytes_(bytes) {}

  std::string token() {
    skip_space_and_comments();
    std::string tok;
    while (pos_ < bytes_.size() && !std::isspace(bytes_[pos_])) tok.push_back(static_cast<char>(bytes_[pos_++]));
    if (tok.empty()) fail(Errc::truncated_file, "truncated header");
    return tok;
  }

  // Exactly one whitespace byte separates the header from the payload.
  std::size_t payload_offset() {
    if (pos_ >= bytes_.size()) fail(Errc::truncated_file, "truncated header");
    return pos_ + 1;
  }

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  const std::vector<unsigned char>& bytes_;
  std::size_t pos_ = 0;
};

int parse_dim(const std::string& tok) {
  try {
    std::size_t used = 0;
    const long v = std::stol(tok, &used);
    if (used != tok.size() || v <= 0 || v > (1 << 20)) throw std::invalid_argument(tok);
    return static_cast<int>(v);
  } catch (const std::exception&) {
    fail(Errc::size_mismatch, "bad dimension in header: " + tok);
  }
}

void check_payload(std::size_t have, std::size_t need, const std::filesystem::path& path) {
  if (have < need) fail(Errc::truncated_file, "truncated payload in " + path.string());
  if (have > need) fail(Errc::size_mismatch, "payload larger than header declares in " + path.string());
}

ImageF32 load_pfm(const std::vector<unsigned char>& bytes, const std::filesystem::path& path) {
  HeaderReader hdr(bytes);
  const std::string magic = hdr.token();
  const int channels = magic == "PF" ? 3 : 1;
  const int w = parse_dim(hdr.token());
  const int h = parse_dim(hdr.token());
  double scale = 0.0;
  try {
    scale = std::stod(hdr.token());
  } catch (const std::invalid_argument&) {
    fail(Errc::size_mismatch, "bad PFM scale line in " + path.string());
  }
  if (scale == 0.0) fail(Errc::size_mismatch, "PFM scale must be nonzero in " + path.string());
  const bool little = scale < 0.0;
  const std::size_t off = hdr.payload_offset();
  const std::size_t count = static_cast<std::size_t>(w) * h * channels;
  check_payload(bytes.size() - std::min(off, bytes.size()), count * 4, path);

  ImageF32 img(w, h, channels);
  const bool swap = little != (std::endian::native == std::endian::little);
  for (int row = 0; row < h; ++row) {
    // Stored bottom row first.
    const int y = h - 1 - row;
    for (int i = 0; i < w * channels; ++i) {
      std::uint32_t raw = 0;
      std::memcpy(&raw, &bytes[off + (static_cast<std::size_t>(row) * w * channels + i) * 4], 4);
      if (swap) raw = __builtin_bswap32(raw);
      img.data[static_cast<std::size_t>(y) * w * channels + i] = std::bit_cast<float>(raw);
    }
  }
  return img;
}

ImageF32 load_pgm(const std::vector<unsigned char>& bytes, const std::filesystem::path& path) {
  HeaderReader hdr(bytes);
  hdr.token();
  const int w = parse_dim(hdr.token());
  const int h = parse_dim(hdr.token());
  const int maxval = parse_dim(hdr.token());
  if (maxval > 65535) fail(Errc::size_mismatch, "PGM maxval out of range in " + path.string());
  const std::size_t off = hdr.payload_offset();
  const std::size_t bpp = maxval < 256 ? 1 : 2;
  const std::size_t count = static_cast<std::size_t>(w) * h;
  check_payload(bytes.size() - std::min(off, bytes.size()), count * bpp, path);

  ImageF32 img(w, h, 1);
  for (std::size_t i = 0; i < count; ++i) {
    const unsigned v = bpp == 1 ? bytes[off + i] : (unsigned{bytes[off + 2 * i]} << 8) | bytes[off + 2 * i + 1];
    img.data[i] = static_cast<float>(v) / static_cast<float>(maxval);
  }
  return img;
}

ImageF32 load_png(const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str()))
    fail(Errc::truncated_file, "cannot decode PNG " + path.string() + ": " + image.message);
  const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  const int channels = color ? 3 : 1;
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&image);
    fail(Errc::truncated_file, "cannot decode PNG " + path.string() + ": " + image.message);
  }
  ImageF32 img(static_cast<int>(image.width), static_cast<int>(image.height), channels);
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<float>(buf[i]) / 255.0f;
  return img;
}

std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

}  // namespace

ImageF32 load_image(const std::filesystem::path& path) {
  const auto bytes = read_all(path);
  if (bytes.size() < 2) fail(Errc::truncated_file, "file too short: " + path.string());
  if (bytes[0] == 'P' && (bytes[1] == 'f' || bytes[1] == 'F')) return load_pfm(bytes, path);
  if (bytes[0] == 'P' && bytes[1] == '5') return load_pgm(bytes, path);
  static constexpr unsigned char kPngSig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (bytes.size() >= 8 && std::memcmp(bytes.data(), kPngSig, 8) == 0) return load_png(path);
  fail(Errc::unsupported_format, "unsupported image format: " + path.string());
}

void save_pfm(const ImageF32& img, const std::filesystem::path& path) {
  require(img.channels == 1 || img.channels == 3, Errc::invalid_argument, "save_pfm: channels must be 1 or 3");
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(Errc::io_failure, "cannot write " + path.string());
  out << (img.channels == 3 ? "PF" : "Pf") << '\n' << img.width << ' ' << img.height << '\n' << "-1\n";
  const std::size_t row = static_cast<std::size_t>(img.width) * img.channels;
  std::vector<unsigned char> buf(row * 4);
  for (int y = img.height - 1; y >= 0; --y) {
    for (std::size_t i = 0; i < row; ++i) {
      auto raw = std::bit_cast<std::uint32_t>(img.data[y * row + i]);
      if constexpr (std::endian::native == std::endian::big) raw = __builtin_bswap32(raw);
      std::memcpy(&buf[i * 4], &raw, 4);
    }
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  }
  if (!out) fail(Errc::io_failure, "write failed: " + path.string());
}

void save_png(const ImageF32& img, const std::filesystem::path& path) {
  require(img.channels == 1 || img.channels == 3, Errc::invalid_argument, "save_png: channels must be 1 or 3");
  std::vector<png_byte> buf(img.data.size());
  std::transform(img.data.begin(), img.data.end(), buf.begin(), to_byte);
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = img.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&image, path.c_str(), 0, buf.data(), 0, nullptr))
    fail(Errc::io_failure, "cannot write PNG " + path.string() + ": " + image.message);
}

void save_pgm(const ImageF32& img, const std::filesystem::path& path) {
  require(img.channels == 1, Errc::invalid_argument, "save_pgm: single channel only");
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(Errc::io_failure, "cannot write " + path.string());
  out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  std::vector<unsigned char> buf(img.data.size());
  std::transform(img.data.begin(), img.data.end(), buf.begin(), to_byte);
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) fail(Errc::io_failure, "write failed: " + path.string());
}

ImageF32 downsample_half(const ImageF32& img) {
  require(img.width >= 2 && img.height >= 2, Errc::invalid_argument, "downsample_half: image too small");
  const int w = img.width / 2, h = img.height / 2, c = img.channels;
  ImageF32 out(w, h, c);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int k = 0; k < c; ++k) {
        const float s = img.at(2 * x, 2 * y, k) + img.at(2 * x + 1, 2 * y, k) + img.at(2 * x, 2 * y + 1, k) +
                        img.at(2 * x + 1, 2 * y + 1, k);
        out.at(x, y, k) = 0.25f * s;
      }
  return out;
}

float bilinear_sample(const ImageF32& img, double u, double v, int c) {
  u = std::clamp(u, 0.0, static_cast<double>(img.width - 1));
  v = std::clamp(v, 0.0, static_cast<double>(img.height - 1));
  const int x0 = static_cast<int>(std::floor(u));
  const int y0 = static_cast<int>(std::floor(v));
  const int x1 = std::min(x0 + 1, img.width - 1);
  const int y1 = std::min(y0 + 1, img.height - 1);
  const double fx = u - x0, fy = v - y0;
  const double top = (1.0 - fx) * img.at(x0, y0, c) + fx * img.at(x1, y0, c);
  const double bot = (1.0 - fx) * img.at(x0, y1, c) + fx * img.at(x1, y1, c);
  return static_cast<float>((1.0 - fy) * top + fy * bot);
}

std::vector<float> bilinear_sample_all(const ImageF32& img, double u, double v) {
  std::vector<float> out(static_cast<std::size_t>(img.channels));
  for (int c = 0; c < img.channels; ++c) out[c] = bilinear_sample(img, u, v, c);
  return out;
}

Pyramid build_pyramid(const ImageF32& img, int levels) {
  require(levels >= 1, Errc::invalid_argument, "build_pyramid: levels must be >= 1");
  const int shrink = 1 << (levels - 1);
  require(img.width / shrink >= kMinPyramidSide && img.height / shrink >= kMinPyramidSide, Errc::invalid_argument,
          "build_pyramid: too many levels for a " + std::to_string(img.width) + "x" + std::to_string(img.height) +
              " image");
  Pyramid p;
  p.levels.reserve(static_cast<std::size_t>(levels));
  p.levels.push_back(img);
  for (int i = 1; i < levels; ++i) p.levels.push_back(downsample_half(p.levels.back()));
  return p;
}

const std::array<Rgb8, 256>& disparity_colormap() {
  static const std::array<Rgb8, 256> table = [] {
    // Polynomial fit of the turbo colormap.
    std::array<Rgb8, 256> t{};
    for (int i = 0; i < 256; ++i) {
      const double x = i / 255.0;
      const double r =
          0.13572138 + x * (4.61539260 + x * (-42.66032258 + x * (132.13108234 + x * (-152.94239396 + x * 59.28637943))));
      const double g =
          0.09140261 + x * (2.19418839 + x * (4.84296658 + x * (-14.18503333 + x * (4.27729857 + x * 2.82956604))));
      const double b =
          0.10667330 + x * (12.64194608 + x * (-60.58204836 + x * (110.36276771 + x * (-89.90310912 + x * 27.34824973))));
      auto q = [](double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); };
      t[i] = {q(r), q(g), q(b)};
    }
    return t;
  }();
  return table;
}

int colormap_index(double d, double d_max) {
  return static_cast<int>(std::lround(std::clamp(d / d_max, 0.0, 1.0) * 255.0));
}

ImageF32 colorize(const DisparityMap& disp, double d_max) {
  require(d_max > 0.0, Errc::invalid_argument, "colorize: d_max must be positive");
  const auto& cmap = disparity_colormap();
  ImageF32 out(disp.width, disp.height, 3);
  for (int y = 0; y < disp.height; ++y)
    for (int x = 0; x < disp.width; ++x) {
      if (!disp.is_valid(x, y)) continue;
      const auto& rgb = cmap[static_cast<std::size_t>(colormap_index(disp.at(x, y), d_max))];
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = static_cast<float>(rgb[c]) / 255.0f;
    }
  return out;
}

void colorize_disparity(const DisparityMap& disp, double d_max, const std::filesystem::path& path) {
  save_png(colorize(disp, d_max), path);
}

namespace {
template <class Map>
ImageF32 masked_to_image(const Map& m) {
  ImageF32 out(m.width, m.height, 1);
  for (std::size_t i = 0; i < m.size(); ++i) out.data[i] = static_cast<float>(m.values[i]);
  return out;
}
}  // namespace

ImageF32 to_image(const DisparityMap& disp) { return masked_to_image(disp); }
ImageF32 to_image(const DepthMap& depth) { return masked_to_image(depth); }

ImageF32 to_image(const FieldD& field) {
  ImageF32 out(field.width, field.height, 1);
  for (std::size_t i = 0; i < field.size(); ++i) out.data[i] = static_cast<float>(field.values[i]);
  return out;
}

FieldD to_field(const ImageF32& img, int c) {
  FieldD f(img.width, img.height);
  for (std::size_t i = 0; i < img.pixel_count(); ++i) f.values[i] = img.data[i * img.channels + c];
  return f;
}

}  // namespace stereoroma
