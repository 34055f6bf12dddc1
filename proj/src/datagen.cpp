#include "stereoroma/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "stereoroma/error.hpp"
#include "stereoroma/parallel.hpp"

namespace stereoroma {

using nlohmann::json;

std::string to_string(Material m) {
  switch (m) {
    case Material::background:
      return "background";
    case Material::diffuse:
      return "diffuse";
    case Material::specular:
      return "specular";
    case Material::transparent:
      return "transparent";
  }
  return "unknown";
}

void SceneConfig::validate(double d_norm) const {
  require(width >= 8 && height >= 8, Errc::config_error, "scene size must be at least 8x8");
  require(n_objects >= 0, Errc::config_error, "scene.n_objects must be >= 0");
  require(d_min >= 0.0 && d_min < d_max && d_max <= d_norm, Errc::config_error,
          "scene disparity range must satisfy 0 <= d_min < d_max <= d_norm");
  double sum = 0.0;
  for (double p : material_mix) {
    require(p >= 0.0, Errc::config_error, "scene.material_mix entries must be >= 0");
    sum += p;
  }
  require(std::abs(sum - 1.0) < 1e-9, Errc::config_error, "scene.material_mix must sum to 1");
  require(speckle_density >= 0.0, Errc::config_error, "scene.speckle_density must be >= 0");
  require(noise_sigma >= 0.0, Errc::config_error, "scene.noise_sigma must be >= 0");
  require(texture_contrast >= 0.0, Errc::config_error, "scene.texture_contrast must be >= 0");
  require(transparent_alpha > 0.0 && transparent_alpha <= 1.0, Errc::config_error,
          "scene.transparent_alpha must be in (0, 1]");
  require(size_min > 0.0 && size_min <= size_max && size_max <= 0.5, Errc::config_error,
          "scene object size range must satisfy 0 < size_min <= size_max <= 0.5");
}

bool Layer::contains(double u, double v) const {
  if (infinite) return true;
  const double nx = (u - cx) / rx, ny = (v - cy) / ry;
  if (shape == Shape::rectangle) return std::abs(nx) <= 1.0 && std::abs(ny) <= 1.0;
  return nx * nx + ny * ny <= 1.0;
}

double Layer::inset(double u, double v) const {
  if (infinite) return 1e9;
  if (shape == Shape::rectangle) return std::min(rx - std::abs(u - cx), ry - std::abs(v - cy));
  const double nx = (u - cx) / rx, ny = (v - cy) / ry;
  return (1.0 - std::sqrt(nx * nx + ny * ny)) * std::min(rx, ry);
}

std::size_t SceneSample::count(Material m) const {
  return static_cast<std::size_t>(std::count(material.begin(), material.end(), static_cast<std::uint8_t>(m)));
}

namespace {

constexpr double kRimWidth = 1.5;        // opaque outline of transparent objects, px
constexpr double kRefraction = 3.0;      // max apparent shift of the background through glass, px
constexpr double kRipple = 4.0;          // view-dependent distortion through glass, px
constexpr double kDotAmplitude = 0.35;   // speckle dot brightness
constexpr double kDotSigma = 0.6;        // px
constexpr double kDotCell = 2.0;         // one candidate dot per cell
constexpr double kSpecularJitter = 2.5;  // px, highlight displacement between views

double hash01(std::uint64_t seed, std::int64_t ix, std::int64_t iy, std::uint64_t salt = 0) {
  const std::uint64_t h = splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(ix) * 0x9E3779B97F4A7C15ull ^
                                                       (static_cast<std::uint64_t>(iy) + 0x51ED27ull) *
                                                           0xC2B2AE3D27D4EB4Full ^
                                                       salt));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

// Lattice value noise in [0, 1].
double value_noise(std::uint64_t seed, double x, double y, double cell) {
  const double gx = x / cell, gy = y / cell;
  const double fx = std::floor(gx), fy = std::floor(gy);
  const auto ix = static_cast<std::int64_t>(fx), iy = static_cast<std::int64_t>(fy);
  const double tx = smoothstep(gx - fx), ty = smoothstep(gy - fy);
  const double v00 = hash01(seed, ix, iy), v10 = hash01(seed, ix + 1, iy);
  const double v01 = hash01(seed, ix, iy + 1), v11 = hash01(seed, ix + 1, iy + 1);
  return (1 - ty) * ((1 - tx) * v00 + tx * v10) + ty * ((1 - tx) * v01 + tx * v11);
}

double texture(const Layer& l, double contrast, double u, double v) {
  const double n = 0.65 * (value_noise(l.texture, u, v, 4.0) - 0.5) + 0.35 * (value_noise(l.texture ^ 0xABCDull, u, v, 2.0) - 0.5);
  return l.base + 2.0 * contrast * n;
}

// Speckle dots fixed to surface coordinates (u, v). `jitter` shifts every dot
// horizontally by jitter * (per-dot random in [-1, 1]); sigma is the dot radius.
double dot_field(std::uint64_t seed, double density, double u, double v, double jitter, double sigma) {
  if (density <= 0.0) return 0.0;
  const double p = std::min(1.0, density * kDotCell * kDotCell);
  const auto cx = static_cast<std::int64_t>(std::floor(u / kDotCell));
  const auto cy = static_cast<std::int64_t>(std::floor(v / kDotCell));
  double sum = 0.0;
  for (std::int64_t j = cy - 2; j <= cy + 2; ++j)
    for (std::int64_t i = cx - 2; i <= cx + 2; ++i) {
      if (hash01(seed, i, j, 1) >= p) continue;
      const double px = (static_cast<double>(i) + hash01(seed, i, j, 2)) * kDotCell +
                        jitter * (2.0 * hash01(seed, i, j, 4) - 1.0);
      const double py = (static_cast<double>(j) + hash01(seed, i, j, 3)) * kDotCell;
      const double r2 = (u - px) * (u - px) + (v - py) * (v - py);
      sum += std::exp(-r2 / (2.0 * sigma * sigma));
    }
  return sum;
}

struct Renderer {
  const SceneGeometry& g;
  const SceneConfig& cfg;
  double density;  // speckle density in effect

  // Left-image surface coordinate of layer k seen at column x of `view`.
  double surface_u(const Layer& l, int view, double x, double v) const {
    return view == 0 ? x : (x - l.a - l.c * v) / (1.0 + l.b);
  }

  // Front layer at (x, v) among layers whose disparity there is below `bound`.
  int front(int view, double x, double v, double bound, double* disp_out = nullptr) const {
    int best = -1;
    double best_d = -1e300;
    for (std::size_t k = 0; k < g.layers.size(); ++k) {
      const Layer& l = g.layers[k];
      const double u = surface_u(l, view, x, v);
      if (!l.contains(u, v)) continue;
      const double d = l.disparity(u, v);
      if (d >= bound) continue;
      if (d > best_d) {
        best_d = d;
        best = static_cast<int>(k);
      }
    }
    if (disp_out) *disp_out = best_d;
    return best;
  }

  double shade(int view, double x, double v, double bound, int depth = 0) const {
    const int k = front(view, x, v, bound);
    if (k < 0) return g.layers[0].base;
    const Layer& l = g.layers[k];
    const double u = surface_u(l, view, x, v);
    const double sign = view == 0 ? 1.0 : -1.0;
    double tex = texture(l, cfg.texture_contrast, u, v);
    switch (l.material) {
      case Material::background:
      case Material::diffuse:
        return tex + kDotAmplitude * dot_field(g.pattern_seed, density, u, v, 0.0, kDotSigma);
      case Material::specular: {
        // Dots turn into saturated blobs that do not follow the surface
        // between views; one large highlight moves the same way.
        const double blobs = dot_field(g.pattern_seed, density * 0.5, u, v, sign * kSpecularJitter, 1.0);
        const double hx = l.cx + 0.3 * l.rx + sign * kSpecularJitter, hy = l.cy - 0.3 * l.ry;
        const double hr = 0.3 * std::min(l.rx, l.ry);
        const double hl = std::exp(-((u - hx) * (u - hx) + (v - hy) * (v - hy)) / (2.0 * hr * hr));
        const double s = std::min(1.0, 1.5 * blobs + 1.2 * hl);
        return (1.0 - s) * (tex + kDotAmplitude * 0.3 * dot_field(g.pattern_seed, density, u, v, 0.0, kDotSigma)) +
               s * 1.0;
      }
      case Material::transparent: {
        if (l.inset(u, v) < kRimWidth || depth > 2)
          return l.base + 2.0 * (tex - l.base) + kDotAmplitude * dot_field(g.pattern_seed, density, u, v, 0.0, kDotSigma);
        // Background seen through the glass, displaced by a lens-like
        // refraction plus an uneven-surface ripple; both differ between the
        // two views, so the see-through texture has no consistent match.
        const double nx = std::clamp((u - l.cx) / l.rx, -1.0, 1.0);
        const double ripple = 2.0 * value_noise(l.texture + 17 + static_cast<std::uint64_t>(view), u, v, 2.5) - 1.0;
        const double d_here = l.disparity(u, v);
        const double shift = sign * kRefraction * nx + kRipple * ripple;
        const double behind = shade(view, x + shift, v, d_here, depth + 1);
        const double own = tex + 0.2 * kDotAmplitude * dot_field(g.pattern_seed, density, u, v, 0.0, kDotSigma);
        return cfg.transparent_alpha * own + (1.0 - cfg.transparent_alpha) * behind;
      }
    }
    return tex;
  }

  ImageF32 render(int view) const {
    ImageF32 img(cfg.width, cfg.height, 1);
    for (int y = 0; y < cfg.height; ++y)
      for (int x = 0; x < cfg.width; ++x) img.at(x, y) = static_cast<float>(shade(view, x, y, 1e300));
    return img;
  }
};

void add_noise_and_clamp(ImageF32& img, double sigma, Rng& rng) {
  for (auto& v : img.data) {
    const double n = sigma > 0.0 ? sigma * rng.normal() : 0.0;
    v = static_cast<float>(std::clamp(static_cast<double>(v) + n, 0.0, 1.0));
  }
}

void render_views(SceneSample& s, double density) {
  Renderer r{s.geometry, s.cfg, density};
  s.frame.left = r.render(0);
  s.frame.right = r.render(1);
  Rng noise(s.geometry.noise_seed);
  add_noise_and_clamp(s.frame.left, s.cfg.noise_sigma, noise);
  add_noise_and_clamp(s.frame.right, s.cfg.noise_sigma, noise);
}

Material pick_material(const std::array<double, 3>& mix, double r) {
  if (r < mix[0]) return Material::diffuse;
  if (r < mix[0] + mix[1]) return Material::specular;
  return Material::transparent;
}

}  // namespace

SceneSample generate_scene(const SceneConfig& cfg, Rng& rng) {
  cfg.validate();
  SceneSample s;
  s.cfg = cfg;
  const double W = cfg.width, H = cfg.height;
  const double range = cfg.d_max - cfg.d_min;

  // Background: a gently slanted plane (closer toward the bottom, like a desk).
  Layer bg;
  bg.infinite = true;
  bg.material = Material::background;
  const double bg_span = 0.3 * range;
  const double slope_v = rng.uniform(0.0, 0.5) * bg_span / H;
  const double slope_u = rng.uniform(-0.15, 0.15) * bg_span / W;
  bg.b = slope_u;
  bg.c = slope_v;
  const double corner_min = std::min(0.0, slope_u * (W - 1));
  const double corner_max = std::max(0.0, slope_u * (W - 1)) + slope_v * (H - 1);
  bg.a = cfg.d_min - corner_min + rng.uniform(0.0, std::max(0.0, bg_span - (corner_max - corner_min)));
  bg.base = rng.uniform(0.35, 0.6);
  bg.texture = rng.next_u64();
  s.geometry.layers.push_back(bg);
  const double bg_top = bg.a + corner_max;

  for (int i = 0; i < cfg.n_objects; ++i) {
    Layer l;
    l.shape = rng.uniform() < 0.5 ? Shape::rectangle : Shape::ellipse;
    l.material = pick_material(cfg.material_mix, rng.uniform());
    l.rx = rng.uniform(cfg.size_min, cfg.size_max) * W;
    l.ry = rng.uniform(cfg.size_min, cfg.size_max) * W;
    l.cx = rng.uniform(0.1 * W, 0.9 * W);
    l.cy = rng.uniform(0.1 * H, 0.9 * H);
    double gb = 0.0, gc = 0.0;
    if (rng.uniform() < 0.5) {
      gb = rng.uniform(-0.04, 0.04);
      gc = rng.uniform(-0.04, 0.04);
    }
    const double spread = std::abs(gb) * l.rx + std::abs(gc) * l.ry;
    const double lo = std::min(cfg.d_max, bg_top + 1.0) + spread;
    const double hi = cfg.d_max - spread;
    const double center = lo < hi ? rng.uniform(lo, hi) : 0.5 * (lo + hi);
    l.b = gb;
    l.c = gc;
    l.a = center - gb * l.cx - gc * l.cy;
    l.base = rng.uniform(0.25, 0.75);
    l.texture = rng.next_u64();
    s.geometry.layers.push_back(l);
  }
  s.geometry.noise_seed = rng.next_u64();
  s.geometry.pattern_seed = rng.next_u64();

  // A short-baseline desk camera: the default disparity range maps to
  // roughly 0.17-2 m of depth.
  s.frame.camera.fx = s.frame.camera.fy = 80.0;
  s.frame.camera.baseline = 0.05;
  s.frame.camera.cx = 0.5 * (W - 1);
  s.frame.camera.cy = 0.5 * (H - 1);

  // Ground truth, labels and occlusion from the geometry.
  Renderer r{s.geometry, s.cfg, 0.0};
  const std::size_t n = static_cast<std::size_t>(cfg.width) * cfg.height;
  s.gt = DisparityMap(cfg.width, cfg.height, 0.0, true);
  s.material.assign(n, 0);
  s.occluded.assign(n, 0);
  s.layer.assign(n, 0);
  for (int y = 0; y < cfg.height; ++y)
    for (int x = 0; x < cfg.width; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * cfg.width + x;
      double d = 0.0;
      const int k = r.front(0, x, y, 1e300, &d);
      // Stored at float precision so dataset files reproduce it exactly.
      s.gt.values[i] = static_cast<double>(static_cast<float>(d));
      s.layer[i] = static_cast<std::uint8_t>(k);
      s.material[i] = static_cast<std::uint8_t>(s.geometry.layers[k].material);
      const double xr = x + d;
      bool occ = xr > W - 1;
      if (!occ) {
        double dr = 0.0;
        r.front(1, xr, y, 1e300, &dr);
        occ = dr > d + 1e-6;
      }
      s.occluded[i] = occ ? 1 : 0;
    }
  render_views(s, 0.0);
  return s;
}

SceneSample apply_speckle(const SceneSample& sample, const SceneConfig& cfg, Rng& rng) {
  SceneSample s = sample;
  s.cfg.speckle_density = cfg.speckle_density;
  s.geometry.pattern_seed = rng.next_u64();
  if (cfg.speckle_density > 0.0) render_views(s, cfg.speckle_density);
  s.speckled = cfg.speckle_density > 0.0;
  return s;
}

SceneSample corrupt_raw(const SceneSample& sample, const CorruptionConfig& cfg, Rng& rng) {
  SceneSample s = sample;
  DisparityMap raw = compute_raw_disparity(s.frame.left, s.frame.right, cfg.sgm);
  const int w = raw.width, h = raw.height;

  // Transparent interiors: blob-shaped holes covering roughly the target fraction.
  const std::uint64_t hole_seed = rng.next_u64();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      if (s.material[i] != static_cast<std::uint8_t>(Material::transparent)) continue;
      const Layer& l = s.geometry.layers[s.layer[i]];
      if (l.inset(x, y) < kRimWidth) continue;
      // Value noise is concentrated around 0.5; stretch it before thresholding.
      const double nv = std::clamp(0.5 + 1.8 * (value_noise(hole_seed, x, y, 5.0) - 0.5), 0.0, 1.0);
      if (nv < cfg.transparent_dropout) raw.valid[i] = 0;
    }
  for (int p = 0; p < cfg.dropout_patches; ++p) {
    const int pw = rng.uniform_int(3, std::max(3, w / 6)), ph = rng.uniform_int(3, std::max(3, h / 6));
    const int x0 = rng.uniform_int(0, w - 1), y0 = rng.uniform_int(0, h - 1);
    for (int y = y0; y < std::min(h, y0 + ph); ++y)
      for (int x = x0; x < std::min(w, x0 + pw); ++x) raw.valid[static_cast<std::size_t>(y) * w + x] = 0;
  }
  std::vector<double> bias(s.geometry.layers.size(), 0.0);
  for (std::size_t k = 0; k < bias.size(); ++k)
    if (s.geometry.layers[k].material == Material::specular) bias[k] = rng.uniform(-cfg.specular_bias, cfg.specular_bias);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (!raw.valid[i]) {
      raw.values[i] = 0.0;
      continue;
    }
    const double v = std::max(0.0, raw.values[i] + bias[s.layer[i]]);
    raw.values[i] = static_cast<double>(static_cast<float>(v));
  }
  s.frame.raw = std::move(raw);
  return s;
}

SceneSample make_sample(const SceneConfig& cfg, const CorruptionConfig& corrupt, std::uint64_t seed) {
  Rng geo(derive_seed(seed, 0)), speckle(derive_seed(seed, 1)), damage(derive_seed(seed, 2));
  SceneConfig c = cfg;
  c.seed = seed;
  SceneSample s = generate_scene(c, geo);
  s = apply_speckle(s, c, speckle);
  return corrupt_raw(s, corrupt, damage);
}

bool is_train_index(int index, int n, double train_fraction) {
  return static_cast<double>(index) < train_fraction * static_cast<double>(n);
}

std::vector<DatasetEntry> generate_dataset(const SceneConfig& cfg, const CorruptionConfig& corrupt, int n, int first,
                                           double train_fraction, int total) {
  require(n >= 0 && first >= 0, Errc::invalid_argument, "generate_dataset: negative count");
  cfg.validate();
  if (total < 0) total = first + n;
  std::vector<DatasetEntry> out(n);
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t k) {
    const int i = first + static_cast<int>(k);
    DatasetEntry& e = out[k];
    char name[32];
    std::snprintf(name, sizeof name, "%05d", i);
    e.name = name;
    e.index = i;
    e.seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(i));
    e.train = is_train_index(i, total, train_fraction);
    e.sample = make_sample(cfg, corrupt, e.seed);
  });
  return out;
}

// --- directory IO -------------------------------------------------------------------

namespace {

json scene_cfg_json(const SceneConfig& c) {
  json j;
  j["width"] = c.width;
  j["height"] = c.height;
  j["n_objects"] = c.n_objects;
  j["d_min"] = c.d_min;
  j["d_max"] = c.d_max;
  j["material_mix"] = c.material_mix;
  j["speckle_density"] = c.speckle_density;
  j["noise_sigma"] = c.noise_sigma;
  j["texture_contrast"] = c.texture_contrast;
  j["transparent_alpha"] = c.transparent_alpha;
  j["size_min"] = c.size_min;
  j["size_max"] = c.size_max;
  j["seed"] = c.seed;
  return j;
}

SceneConfig scene_cfg_from_json(const json& j) {
  SceneConfig c;
  c.width = j.at("width");
  c.height = j.at("height");
  c.n_objects = j.at("n_objects");
  c.d_min = j.at("d_min");
  c.d_max = j.at("d_max");
  c.material_mix = j.at("material_mix").get<std::array<double, 3>>();
  c.speckle_density = j.at("speckle_density");
  c.noise_sigma = j.at("noise_sigma");
  c.texture_contrast = j.at("texture_contrast");
  c.transparent_alpha = j.at("transparent_alpha");
  c.size_min = j.at("size_min");
  c.size_max = j.at("size_max");
  c.seed = j.at("seed");
  return c;
}

json layer_json(const Layer& l) {
  return {{"shape", static_cast<int>(l.shape)}, {"material", static_cast<int>(l.material)},
          {"cx", l.cx}, {"cy", l.cy}, {"rx", l.rx}, {"ry", l.ry}, {"a", l.a}, {"b", l.b}, {"c", l.c},
          {"base", l.base}, {"texture", l.texture}, {"infinite", l.infinite}};
}

Layer layer_from_json(const json& j) {
  Layer l;
  l.shape = static_cast<Shape>(j.at("shape").get<int>());
  l.material = static_cast<Material>(j.at("material").get<int>());
  l.cx = j.at("cx");
  l.cy = j.at("cy");
  l.rx = j.at("rx");
  l.ry = j.at("ry");
  l.a = j.at("a");
  l.b = j.at("b");
  l.c = j.at("c");
  l.base = j.at("base");
  l.texture = j.at("texture");
  l.infinite = j.at("infinite");
  return l;
}

json camera_json(const CameraIntrinsics& c) {
  return {{"fx", c.fx}, {"fy", c.fy}, {"cx", c.cx}, {"cy", c.cy}, {"baseline", c.baseline}};
}

CameraIntrinsics camera_from_json(const json& j) {
  CameraIntrinsics c;
  c.fx = j.at("fx");
  c.fy = j.at("fy");
  c.cx = j.at("cx");
  c.cy = j.at("cy");
  c.baseline = j.at("baseline");
  return c;
}

ImageF32 label_image(const std::vector<std::uint8_t>& v, int w, int h) {
  ImageF32 img(w, h, 1);
  for (std::size_t i = 0; i < v.size(); ++i) img.data[i] = static_cast<float>(v[i]) / 255.0f;
  return img;
}

std::vector<std::uint8_t> labels_from(const ImageF32& img) {
  std::vector<std::uint8_t> v(img.data.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<std::uint8_t>(std::lround(img.data[i] * 255.0f));
  return v;
}

void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream os(p, std::ios::binary);
  if (!os) fail(Errc::io_failure, "cannot write " + p.string());
  os << s;
  if (!os) fail(Errc::io_failure, "write failed: " + p.string());
}

json read_json(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) fail(Errc::missing_file, "missing file " + p.string());
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    fail(Errc::unsupported_format, "malformed JSON in " + p.string() + ": " + e.what());
  }
}

void write_sample(const std::filesystem::path& d, const DatasetEntry& e) {
  const SceneSample& s = e.sample;
  require(s.frame.raw.has_value(), Errc::invalid_argument, "write_dataset: sample " + e.name + " has no raw disparity");
  std::filesystem::create_directories(d);
  const int w = s.gt.width, h = s.gt.height;
  save_pfm(s.frame.left, d / "left.pfm");
  save_pfm(s.frame.right, d / "right.pfm");
  save_pfm(to_image(s.gt), d / "gt.pfm");
  save_pfm(to_image(*s.frame.raw), d / "raw.pfm");
  std::vector<std::uint8_t> valid(s.frame.raw->valid.size());
  for (std::size_t i = 0; i < valid.size(); ++i) valid[i] = s.frame.raw->valid[i] ? 255 : 0;
  save_pgm(label_image(valid, w, h), d / "valid.pgm");
  save_pgm(label_image(s.material, w, h), d / "material.pgm");
  save_pgm(label_image(s.occluded, w, h), d / "occlusion.pgm");
  save_pgm(label_image(s.layer, w, h), d / "layer.pgm");

  nlohmann::ordered_json meta;
  meta["schema_version"] = kDatasetSchemaVersion;
  meta["name"] = e.name;
  meta["index"] = e.index;
  meta["seed"] = e.seed;
  meta["split"] = e.train ? "train" : "test";
  meta["scene"] = scene_cfg_json(s.cfg);
  meta["camera"] = camera_json(s.frame.camera);
  meta["speckled"] = s.speckled;
  json layers = json::array();
  for (const auto& l : s.geometry.layers) layers.push_back(layer_json(l));
  meta["geometry"] = {{"layers", layers}, {"noise_seed", s.geometry.noise_seed},
                      {"pattern_seed", s.geometry.pattern_seed}};
  json stats;
  for (auto m : {Material::background, Material::diffuse, Material::specular, Material::transparent})
    stats[to_string(m)] = s.count(m);
  stats["raw_valid"] = s.frame.raw->valid_count();
  meta["pixels"] = stats;
  write_text(d / "meta.json", meta.dump(2) + "\n");
}

}  // namespace

void write_dataset(const std::filesystem::path& dir, const std::vector<DatasetEntry>& entries) {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json manifest;
  manifest["schema_version"] = kDatasetSchemaVersion;
  manifest["count"] = entries.size();
  json list = json::array();
  for (const auto& e : entries) {
    write_sample(dir / e.name, e);
    list.push_back({{"name", e.name}, {"index", e.index}, {"seed", e.seed}, {"split", e.train ? "train" : "test"}});
  }
  manifest["samples"] = list;
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

DatasetEntry read_sample(const std::filesystem::path& d) {
  const std::string name = d.filename().string();
  for (const char* f : {"left.pfm", "right.pfm", "gt.pfm", "raw.pfm", "valid.pgm", "material.pgm", "occlusion.pgm",
                        "layer.pgm", "meta.json"})
    if (!std::filesystem::exists(d / f)) fail(Errc::missing_file, "sample " + name + ": missing " + f);
  const json meta = read_json(d / "meta.json");
  const int version = meta.value("schema_version", -1);
  if (version != kDatasetSchemaVersion)
    fail(Errc::version_mismatch, "sample " + name + ": schema version " + std::to_string(version) + ", expected " +
                                     std::to_string(kDatasetSchemaVersion));
  DatasetEntry e;
  try {
    e.name = meta.at("name");
    e.index = meta.at("index");
    e.seed = meta.at("seed");
    e.train = meta.at("split").get<std::string>() == "train";
    SceneSample& s = e.sample;
    s.cfg = scene_cfg_from_json(meta.at("scene"));
    s.frame.camera = camera_from_json(meta.at("camera"));
    s.speckled = meta.at("speckled");
    for (const auto& l : meta.at("geometry").at("layers")) s.geometry.layers.push_back(layer_from_json(l));
    s.geometry.noise_seed = meta.at("geometry").at("noise_seed");
    s.geometry.pattern_seed = meta.at("geometry").at("pattern_seed");
  } catch (const json::exception& ex) {
    fail(Errc::unsupported_format, "sample " + name + ": bad meta.json: " + ex.what());
  }
  SceneSample& s = e.sample;
  s.frame.left = load_image(d / "left.pfm");
  s.frame.right = load_image(d / "right.pfm");
  const ImageF32 gt = load_image(d / "gt.pfm");
  const ImageF32 raw = load_image(d / "raw.pfm");
  const ImageF32 valid = load_image(d / "valid.pgm");
  const int w = gt.width, h = gt.height;
  for (const ImageF32* img : std::initializer_list<const ImageF32*>{&s.frame.left, &s.frame.right, &raw, &valid})
    require(img->width == w && img->height == h, Errc::dimension_mismatch, "sample " + name + ": image sizes differ");
  s.gt = DisparityMap(w, h, 0.0, true);
  for (std::size_t i = 0; i < s.gt.size(); ++i) s.gt.values[i] = gt.data[i];
  DisparityMap r(w, h, 0.0, false);
  for (std::size_t i = 0; i < r.size(); ++i) {
    r.values[i] = raw.data[i];
    r.valid[i] = valid.data[i] > 0.5f ? 1 : 0;
  }
  s.frame.raw = std::move(r);
  s.material = labels_from(load_image(d / "material.pgm"));
  s.occluded = labels_from(load_image(d / "occlusion.pgm"));
  s.layer = labels_from(load_image(d / "layer.pgm"));
  return e;
}

std::vector<DatasetEntry> read_dataset(const std::filesystem::path& dir) {
  const json manifest = read_json(dir / "manifest.json");
  const int version = manifest.value("schema_version", -1);
  if (version != kDatasetSchemaVersion)
    fail(Errc::version_mismatch, "dataset schema version " + std::to_string(version) + ", expected " +
                                     std::to_string(kDatasetSchemaVersion));
  std::vector<DatasetEntry> out;
  for (const auto& item : manifest.at("samples")) out.push_back(read_sample(dir / item.at("name").get<std::string>()));
  return out;
}

}  // namespace stereoroma
