#include "stereoroma/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "stereoroma/error.hpp"

namespace stereoroma {

namespace {

// Defaults for every recognised key.
const std::map<std::string, std::string>& defaults() {
  static const std::map<std::string, std::string> d = {
      {"seed", "0"},
      {"data.n", "240"},
      {"data.train_fraction", "0.9"},
      {"scene.width", "64"},
      {"scene.height", "64"},
      {"scene.n_objects", "3"},
      {"scene.d_min", "2"},
      {"scene.d_max", "24"},
      {"scene.mix", "0.3,0.2,0.5"},
      {"scene.speckle_density", "0.08"},
      {"scene.noise_sigma", "0.005"},
      {"scene.texture_contrast", "0.12"},
      {"scene.transparent_alpha", "0.3"},
      {"scene.size_min", "0.12"},
      {"scene.size_max", "0.3"},
      {"corrupt.transparent_dropout", "0.6"},
      {"corrupt.dropout_patches", "2"},
      {"corrupt.specular_bias", "2"},
      {"sgm.d_max", "32"},
      {"sgm.census_window", "7"},
      {"sgm.p1", "4"},
      {"sgm.p2", "30"},
      {"sgm.num_paths", "8"},
      {"sgm.lr_threshold", "1"},
      {"sgm.uniqueness_ratio", "0.95"},
      {"model.cond", "left+right+raw"},
      {"model.base_width", "16"},
      {"model.depth", "2"},
      {"model.time_embed_dim", "32"},
      {"train.epochs", "30"},
      {"train.batch_size", "4"},
      {"train.learning_rate", "1e-4"},
      {"train.loss", "mse"},
      {"train.crop_w", "64"},
      {"train.crop_h", "64"},
      {"train.noise", "pyramid"},
      {"train.noise_levels", "4"},
      {"train.rms_decay", "0.99"},
      {"train.rms_eps", "1e-8"},
      {"schedule.kind", "cosine"},
      {"schedule.T", "128"},
      {"schedule.beta_start", "1e-4"},
      {"schedule.beta_end", "0.02"},
      {"norm.d_norm", "192"},
      {"sample.steps", "128"},
      {"sample.noise", "pyramid"},
      {"sample.noise_levels", "4"},
      {"sample.snapshot_every", "32"},
      {"sample.clip_x0", "true"},
      {"sample.chains", "1"},
      {"guidance.mode", "none"},
      {"guidance.s", "1"},
      {"guidance.gamma", "0.1"},
      {"guidance.pyramid_levels", "3"},
      {"guidance.ssim_window", "7"},
      {"guidance.c1", "1e-4"},
      {"guidance.c2", "9e-4"},
      {"guidance.alpha", "1"},
      {"eval.z_min", "0.2"},
      {"eval.z_max", "2"},
      {"eval.min_disp", "1e-3"},
      {"eval.invalid_as_failure", "false"},
      {"camera.fx", "80"},
      {"camera.fy", "80"},
      {"camera.cx", "-1"},
      {"camera.cy", "-1"},
      {"camera.baseline", "0.05"},
  };
  return d;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::string to_string(GuidanceMode mode) {
  switch (mode) {
    case GuidanceMode::none:
      return "none";
    case GuidanceMode::stereo_photometric:
      return "stereo";
    case GuidanceMode::raw_sign:
      return "raw";
  }
  return "none";
}

GuidanceMode guidance_mode_from_string(const std::string& name) {
  if (name == "none") return GuidanceMode::none;
  if (name == "stereo") return GuidanceMode::stereo_photometric;
  if (name == "raw") return GuidanceMode::raw_sign;
  fail(Errc::config_error, "unknown guidance mode '" + name + "' (none, stereo, raw)");
}

RunConfig::RunConfig() : values_(defaults()) {}

RunConfig RunConfig::from_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      fail(Errc::config_error, "config line " + std::to_string(lineno) + ": expected key=value");
    cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) fail(Errc::missing_file, "cannot open config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return from_text(ss.str());
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (!defaults().count(key)) fail(Errc::config_error, "unknown config key '" + key + "'");
  values_[key] = value;
}

const std::string& RunConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) fail(Errc::config_error, "unknown config key '" + key + "'");
  return it->second;
}

int RunConfig::integer(const std::string& key) const {
  const std::string& s = get(key);
  int v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) fail(Errc::config_error, key + ": not an integer: '" + s + "'");
  return v;
}

std::uint64_t RunConfig::u64(const std::string& key) const {
  const std::string& s = get(key);
  std::uint64_t v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    fail(Errc::config_error, key + ": not an unsigned integer: '" + s + "'");
  return v;
}

double RunConfig::real(const std::string& key) const {
  const std::string& s = get(key);
  double v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) fail(Errc::config_error, key + ": not a number: '" + s + "'");
  return v;
}

bool RunConfig::boolean(const std::string& key) const {
  const std::string& s = get(key);
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  fail(Errc::config_error, key + ": expected true/false, got '" + s + "'");
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
  return out;
}

void RunConfig::echo(const std::filesystem::path& dir, const std::string& name) const {
  std::filesystem::create_directories(dir);
  std::ofstream os(dir / name, std::ios::binary);
  if (!os) fail(Errc::io_failure, "cannot write " + (dir / name).string());
  os << to_text();
}

SceneConfig RunConfig::scene() const {
  SceneConfig c;
  c.width = integer("scene.width");
  c.height = integer("scene.height");
  c.n_objects = integer("scene.n_objects");
  c.d_min = real("scene.d_min");
  c.d_max = real("scene.d_max");
  {
    std::istringstream is(get("scene.mix"));
    std::string part;
    int k = 0;
    while (std::getline(is, part, ',')) {
      if (k >= 3) fail(Errc::config_error, "scene.mix needs exactly 3 comma-separated values");
      try {
        std::size_t used = 0;
        c.material_mix[k] = std::stod(trim(part), &used);
        if (used != trim(part).size()) throw std::invalid_argument(part);
      } catch (const std::exception&) {
        fail(Errc::config_error, "scene.mix: not a number: '" + part + "'");
      }
      ++k;
    }
    if (k != 3) fail(Errc::config_error, "scene.mix needs exactly 3 comma-separated values");
  }
  c.speckle_density = real("scene.speckle_density");
  c.noise_sigma = real("scene.noise_sigma");
  c.texture_contrast = real("scene.texture_contrast");
  c.transparent_alpha = real("scene.transparent_alpha");
  c.size_min = real("scene.size_min");
  c.size_max = real("scene.size_max");
  c.seed = u64("seed");
  c.validate(norm().d_norm);
  return c;
}

CorruptionConfig RunConfig::corruption() const {
  CorruptionConfig c;
  c.sgm = sgm();
  c.transparent_dropout = real("corrupt.transparent_dropout");
  c.dropout_patches = integer("corrupt.dropout_patches");
  c.specular_bias = real("corrupt.specular_bias");
  require(c.transparent_dropout >= 0.0 && c.transparent_dropout <= 1.0, Errc::config_error,
          "corrupt.transparent_dropout must be in [0, 1]");
  require(c.dropout_patches >= 0, Errc::config_error, "corrupt.dropout_patches must be >= 0");
  require(c.specular_bias >= 0.0, Errc::config_error, "corrupt.specular_bias must be >= 0");
  return c;
}

SgmParams RunConfig::sgm() const {
  SgmParams p;
  p.d_max = integer("sgm.d_max");
  p.census_window = integer("sgm.census_window");
  p.p1 = integer("sgm.p1");
  p.p2 = integer("sgm.p2");
  p.num_paths = integer("sgm.num_paths");
  p.lr_threshold = real("sgm.lr_threshold");
  p.uniqueness_ratio = real("sgm.uniqueness_ratio");
  p.validate();
  return p;
}

DenoiserSpec RunConfig::model() const {
  DenoiserSpec s;
  s.cond = get("model.cond");
  s.base_width = integer("model.base_width");
  s.depth = integer("model.depth");
  s.time_embed_dim = integer("model.time_embed_dim");
  s.validate();
  return s;
}

TrainConfig RunConfig::train() const {
  TrainConfig t;
  t.epochs = integer("train.epochs");
  t.batch_size = integer("train.batch_size");
  t.learning_rate = real("train.learning_rate");
  t.loss = loss_kind_from_string(get("train.loss"));
  t.crop_w = integer("train.crop_w");
  t.crop_h = integer("train.crop_h");
  t.seed = u64("seed");
  t.noise = noise_kind_from_string(get("train.noise"));
  t.noise_levels = integer("train.noise_levels");
  t.rms_decay = real("train.rms_decay");
  t.rms_eps = real("train.rms_eps");
  t.validate();
  return t;
}

NoiseSchedule RunConfig::schedule() const {
  try {
    return make_schedule(schedule_kind_from_string(get("schedule.kind")), integer("schedule.T"),
                         real("schedule.beta_start"), real("schedule.beta_end"));
  } catch (const Error& e) {
    if (e.code() == Errc::invalid_argument) fail(Errc::config_error, e.what());
    throw;
  }
}

NormSpec RunConfig::norm() const {
  NormSpec n;
  n.d_norm = real("norm.d_norm");
  n.validate();
  return n;
}

GuidanceConfig RunConfig::guidance() const {
  GuidanceConfig g;
  g.mode = guidance_mode_from_string(get("guidance.mode"));
  g.s = real("guidance.s");
  g.gamma = real("guidance.gamma");
  g.pyramid_levels = integer("guidance.pyramid_levels");
  g.ssim_window = integer("guidance.ssim_window");
  g.ssim_c1 = real("guidance.c1");
  g.ssim_c2 = real("guidance.c2");
  g.alpha = real("guidance.alpha");
  g.validate();
  return g;
}

SamplerConfig RunConfig::sampler() const {
  SamplerConfig s;
  s.steps = integer("sample.steps");
  s.schedule = schedule();
  s.guidance = guidance();
  s.seed = u64("seed");
  s.noise_kind = noise_kind_from_string(get("sample.noise"));
  s.noise_levels = integer("sample.noise_levels");
  s.norm = norm();
  s.snapshot_every = integer("sample.snapshot_every");
  s.clip_x0 = boolean("sample.clip_x0");
  s.validate();
  require(integer("sample.chains") >= 1, Errc::config_error, "sample.chains must be >= 1");
  return s;
}

EvalOptions RunConfig::eval() const {
  EvalOptions o;
  o.range.z_min = real("eval.z_min");
  o.range.z_max = real("eval.z_max");
  o.min_disp = real("eval.min_disp");
  o.invalid_as_failure = boolean("eval.invalid_as_failure");
  require(o.range.z_min > 0.0 && o.range.z_min < o.range.z_max, Errc::config_error,
          "eval range must satisfy 0 < z_min < z_max");
  require(o.min_disp > 0.0, Errc::config_error, "eval.min_disp must be positive");
  return o;
}

CameraIntrinsics RunConfig::camera() const {
  CameraIntrinsics c;
  c.fx = real("camera.fx");
  c.fy = real("camera.fy");
  c.cx = real("camera.cx");
  c.cy = real("camera.cy");
  c.baseline = real("camera.baseline");
  return c;
}

void RunConfig::validate() const {
  scene();
  corruption();
  model();
  train();
  sampler();
  eval();
  require(integer("data.n") >= 1, Errc::config_error, "data.n must be >= 1");
  const double tf = real("data.train_fraction");
  require(tf >= 0.0 && tf <= 1.0, Errc::config_error, "data.train_fraction must be in [0, 1]");
}

}  // namespace stereoroma
