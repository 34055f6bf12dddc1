#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "stereoroma/datagen.hpp"
#include "stereoroma/denoiser.hpp"
#include "stereoroma/diffusion.hpp"
#include "stereoroma/geometry.hpp"
#include "stereoroma/metrics.hpp"
#include "stereoroma/sampler.hpp"
#include "stereoroma/sgm.hpp"

namespace stereoroma {

/// Flat key=value configuration with dotted section prefixes (sgm.p1=10).
/// Every key has a default; unknown keys are rejected.
class RunConfig {
 public:
  RunConfig();

  /// Parses "key = value" lines; '#' starts a comment.
  static RunConfig from_text(const std::string& text);
  static RunConfig from_file(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;
  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string str(const std::string& key) const { return get(key); }
  int integer(const std::string& key) const;
  double real(const std::string& key) const;
  bool boolean(const std::string& key) const;
  std::uint64_t u64(const std::string& key) const;

  /// Sorted "key=value" lines of every key; from_text() of this reproduces the config.
  std::string to_text() const;
  void echo(const std::filesystem::path& dir, const std::string& name = "config.txt") const;

  // Typed views; each validates its component before returning.
  SceneConfig scene() const;
  CorruptionConfig corruption() const;
  SgmParams sgm() const;
  DenoiserSpec model() const;
  TrainConfig train() const;
  NoiseSchedule schedule() const;
  NormSpec norm() const;
  GuidanceConfig guidance() const;
  SamplerConfig sampler() const;
  EvalOptions eval() const;
  CameraIntrinsics camera() const;

  /// Validates every component view.
  void validate() const;

 private:
  std::map<std::string, std::string> values_;
};

GuidanceMode guidance_mode_from_string(const std::string& name);
std::string to_string(GuidanceMode mode);

}  // namespace stereoroma
