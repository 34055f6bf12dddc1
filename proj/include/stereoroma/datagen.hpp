#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "stereoroma/frame.hpp"
#include "stereoroma/rng.hpp"
#include "stereoroma/sgm.hpp"

namespace stereoroma {

enum class Material : std::uint8_t { background = 0, diffuse = 1, specular = 2, transparent = 3 };

std::string to_string(Material m);

struct SceneConfig {
  int width = 64;
  int height = 64;
  int n_objects = 3;
  double d_min = 2.0;
  double d_max = 24.0;
  // Probabilities over {diffuse, specular, transparent}.
  std::array<double, 3> material_mix{0.3, 0.2, 0.5};
  double speckle_density = 0.08;  // dots per px^2
  double noise_sigma = 0.005;
  double texture_contrast = 0.12;
  double transparent_alpha = 0.3;  // opacity of a transparent surface
  double size_min = 0.12;  // object half-size range, fraction of width
  double size_max = 0.3;
  std::uint64_t seed = 0;

  void validate(double d_norm = 192.0) const;
  bool operator==(const SceneConfig&) const = default;
};

enum class Shape : std::uint8_t { rectangle = 0, ellipse = 1 };

/// One planar layer. Disparity over left-image coordinates is
/// a + b*u + c*v; the outline is given in left-image coordinates too.
struct Layer {
  Shape shape = Shape::rectangle;
  Material material = Material::diffuse;
  double cx = 0, cy = 0, rx = 0, ry = 0;
  double a = 0, b = 0, c = 0;
  double base = 0.5;          // mean albedo
  std::uint64_t texture = 0;  // texture / speckle stream
  bool infinite = false;      // background plane covers everything

  double disparity(double u, double v) const { return a + b * u + c * v; }
  bool contains(double u, double v) const;
  /// Distance (px, approximate for ellipses) from (u, v) to the outline, for
  /// points inside.
  double inset(double u, double v) const;
  bool operator==(const Layer&) const = default;
};

struct SceneGeometry {
  std::vector<Layer> layers;  // layers[0] is the background
  std::uint64_t noise_seed = 0;    // sensor noise stream
  std::uint64_t pattern_seed = 0;  // speckle dots and specular blobs
  bool operator==(const SceneGeometry&) const = default;
};

struct SceneSample {
  StereoFrame frame;                  // raw is set by corrupt_raw
  DisparityMap gt;                    // valid everywhere
  std::vector<std::uint8_t> material;  // Material per left pixel
  std::vector<std::uint8_t> occluded;  // 1 where the left pixel is hidden in (or outside) the right view
  std::vector<std::uint8_t> layer;     // index of the front layer per left pixel
  SceneGeometry geometry;
  SceneConfig cfg;
  bool speckled = false;

  std::size_t count(Material m) const;
  bool operator==(const SceneSample&) const = default;
};

/// Layered primitives over a slanted background. Both views are rendered
/// from the geometry (the right view is not a warp of the left); no speckle.
SceneSample generate_scene(const SceneConfig& cfg, Rng& rng);

/// Re-renders both views with a dot pattern fixed to the surfaces, attenuated
/// on transparent surfaces and replaced by view-dependent saturated blobs on
/// specular ones. speckle_density 0 leaves the images unchanged.
SceneSample apply_speckle(const SceneSample& sample, const SceneConfig& cfg, Rng& rng);

struct CorruptionConfig {
  SgmParams sgm{.d_max = 32, .census_window = 7, .p1 = 4, .p2 = 30};
  double transparent_dropout = 0.6;  // target fraction of transparent interior invalidated
  int dropout_patches = 2;           // random invalid rectangles anywhere
  double specular_bias = 2.0;        // max |bias| (px) added per specular object
};

/// raw = SGM of the (speckled) pair, then degraded by material-dependent
/// dropout and specular bias. gt is never touched.
SceneSample corrupt_raw(const SceneSample& sample, const CorruptionConfig& cfg, Rng& rng);

/// generate_scene + apply_speckle + corrupt_raw with streams derived from seed.
SceneSample make_sample(const SceneConfig& cfg, const CorruptionConfig& corrupt, std::uint64_t seed);

// --- dataset directories ------------------------------------------------------------

inline constexpr int kDatasetSchemaVersion = 1;

struct DatasetEntry {
  std::string name;
  std::uint64_t seed = 0;
  int index = 0;
  bool train = true;
  SceneSample sample;
};

/// Writes sample dirs (left.pfm, right.pfm, gt.pfm, raw.pfm, valid.pgm,
/// material.pgm, occlusion.pgm, layer.pgm, meta.json) plus manifest.json.
void write_dataset(const std::filesystem::path& dir, const std::vector<DatasetEntry>& entries);

/// Generates samples first..first+n-1; sample i uses seed derive_seed(cfg.seed, i)
/// and is in the training split when i < train_fraction * total (total
/// defaults to first + n).
std::vector<DatasetEntry> generate_dataset(const SceneConfig& cfg, const CorruptionConfig& corrupt, int n,
                                           int first = 0, double train_fraction = 0.9, int total = -1);

std::vector<DatasetEntry> read_dataset(const std::filesystem::path& dir);
DatasetEntry read_sample(const std::filesystem::path& sample_dir);

bool is_train_index(int index, int n, double train_fraction = 0.9);

}  // namespace stereoroma
