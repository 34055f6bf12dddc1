#include "stereoroma/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include "json.hpp"
#include "stereoroma/error.hpp"

namespace stereoroma {

namespace {

template <class A, class B>
void check_dims(const A& a, const B& b, const PixelMask* mask, const char* what) {
  require(a.width == b.width && a.height == b.height, Errc::dimension_mismatch,
          std::string(what) + ": prediction and ground truth sizes differ");
  require(!mask || mask->size() == a.size(), Errc::dimension_mismatch, std::string(what) + ": mask size differs");
}

bool in_mask(const PixelMask* mask, std::size_t i) { return !mask || (*mask)[i] != 0; }

}  // namespace

double epe(const DisparityMap& pred, const DisparityMap& gt, const PixelMask* mask) {
  check_dims(pred, gt, mask, "epe");
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!gt.valid[i] || !pred.valid[i] || !in_mask(mask, i)) continue;
    sum += std::abs(pred.values[i] - gt.values[i]);
    ++n;
  }
  require(n > 0, Errc::invalid_argument, "epe: empty evaluation mask");
  return sum / static_cast<double>(n);
}

DepthErrors depth_metrics(const DepthMap& pred, const DepthMap& gt, const DepthRange& range, const PixelMask* mask) {
  check_dims(pred, gt, mask, "depth_metrics");
  DepthErrors e;
  double sq = 0.0, ab = 0.0, rel = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!gt.valid[i] || !pred.valid[i] || !in_mask(mask, i) || !range.contains(gt.values[i])) continue;
    const double d = pred.values[i] - gt.values[i];
    sq += d * d;
    ab += std::abs(d);
    rel += std::abs(d) / gt.values[i];
    ++e.n;
  }
  require(e.n > 0, Errc::invalid_argument, "depth_metrics: no pixels in range");
  const double n = static_cast<double>(e.n);
  e.rmse = std::sqrt(sq / n);
  e.mae = ab / n;
  e.rel = rel / n;
  return e;
}

std::array<double, 3> delta_accuracy(const DepthMap& pred, const DepthMap& gt, const DepthRange& range,
                                     const std::array<double, 3>& thresholds, const PixelMask* mask) {
  check_dims(pred, gt, mask, "delta_accuracy");
  std::array<std::size_t, 3> hits{0, 0, 0};
  std::size_t n = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!gt.valid[i] || !pred.valid[i] || !in_mask(mask, i) || !range.contains(gt.values[i])) continue;
    require(pred.values[i] > 0.0 && gt.values[i] > 0.0, Errc::invalid_argument,
            "delta_accuracy: depths must be positive");
    const double r = std::max(pred.values[i] / gt.values[i], gt.values[i] / pred.values[i]);
    for (std::size_t k = 0; k < 3; ++k) hits[k] += r < thresholds[k] ? 1 : 0;
    ++n;
  }
  std::array<double, 3> out{0.0, 0.0, 0.0};
  if (n == 0) return out;
  for (std::size_t k = 0; k < 3; ++k) out[k] = 100.0 * static_cast<double>(hits[k]) / static_cast<double>(n);
  return out;
}

FieldD uncertainty_map(std::span<const DisparityMap> samples) {
  require(samples.size() >= 2, Errc::invalid_argument, "uncertainty_map: need at least 2 samples");
  const int w = samples[0].width, h = samples[0].height;
  for (const auto& s : samples)
    require(s.width == w && s.height == h, Errc::dimension_mismatch, "uncertainty_map: sample sizes differ");
  const double n = static_cast<double>(samples.size());
  FieldD var(w, h);
  for (std::size_t i = 0; i < var.size(); ++i) {
    double mean = 0.0;
    for (const auto& s : samples) mean += s.values[i];
    mean /= n;
    double ss = 0.0;
    for (const auto& s : samples) ss += (s.values[i] - mean) * (s.values[i] - mean);
    var.values[i] = ss / (n - 1.0);
  }
  return var;
}

void EvalSums::add(const EvalSums& o) {
  abs_disp += o.abs_disp;
  n_disp += o.n_disp;
  sq_depth += o.sq_depth;
  abs_depth += o.abs_depth;
  rel_depth += o.rel_depth;
  n_depth += o.n_depth;
  for (std::size_t k = 0; k < 3; ++k) delta_hits[k] += o.delta_hits[k];
  n_delta += o.n_delta;
  n_region += o.n_region;
  n_predicted += o.n_predicted;
}

EvalReport EvalSums::report() const {
  require(n_disp > 0, Errc::invalid_argument, "evaluate: empty evaluation mask");
  EvalReport r;
  r.n_pixels = n_disp;
  r.epe = abs_disp / static_cast<double>(n_disp);
  if (n_depth > 0) {
    const double n = static_cast<double>(n_depth);
    r.rmse = std::sqrt(sq_depth / n);
    r.mae = abs_depth / n;
    r.rel = rel_depth / n;
  }
  if (n_delta > 0) {
    const double n = static_cast<double>(n_delta);
    r.delta_105 = 100.0 * static_cast<double>(delta_hits[0]) / n;
    r.delta_110 = 100.0 * static_cast<double>(delta_hits[1]) / n;
    r.delta_125 = 100.0 * static_cast<double>(delta_hits[2]) / n;
  }
  r.valid_fraction = n_region > 0 ? static_cast<double>(n_predicted) / static_cast<double>(n_region) : 0.0;
  return r;
}

EvalSums evaluate_sums(const DisparityMap& pred, const DisparityMap& gt, const CameraIntrinsics& cam,
                       const EvalOptions& opt, const PixelMask* mask) {
  check_dims(pred, gt, mask, "evaluate_run");
  cam.validate();
  const double fb = cam.fx * cam.baseline;
  EvalSums s;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!gt.valid[i] || !in_mask(mask, i) || gt.values[i] < opt.min_disp) continue;
    const double z_gt = fb / gt.values[i];
    if (!opt.range.contains(z_gt)) continue;
    ++s.n_region;
    const bool has_pred = pred.valid[i] && pred.values[i] >= opt.min_disp;
    if (pred.valid[i]) ++s.n_predicted;
    if (pred.valid[i] || opt.invalid_as_failure) {
      s.abs_disp += std::abs((pred.valid[i] ? pred.values[i] : 0.0) - gt.values[i]);
      ++s.n_disp;
    }
    if (has_pred) {
      const double z = fb / pred.values[i];
      const double d = z - z_gt;
      s.sq_depth += d * d;
      s.abs_depth += std::abs(d);
      s.rel_depth += std::abs(d) / z_gt;
      ++s.n_depth;
      const double r = std::max(z / z_gt, z_gt / z);
      for (std::size_t k = 0; k < 3; ++k) s.delta_hits[k] += r < kDeltaThresholds[k] ? 1 : 0;
      ++s.n_delta;
    } else if (opt.invalid_as_failure) {
      ++s.n_delta;
    }
  }
  return s;
}

EvalReport evaluate_run(const DisparityMap& pred, const DisparityMap& gt, const CameraIntrinsics& cam,
                        const EvalOptions& opt, const PixelMask* mask) {
  return evaluate_sums(pred, gt, cam, opt, mask).report();
}

std::string to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["schema_version"] = kEvalSchemaVersion;
  j["epe"] = r.epe;
  j["rmse"] = r.rmse;
  j["mae"] = r.mae;
  j["rel"] = r.rel;
  j["delta_105"] = r.delta_105;
  j["delta_110"] = r.delta_110;
  j["delta_125"] = r.delta_125;
  j["valid_fraction"] = r.valid_fraction;
  j["n_pixels"] = r.n_pixels;
  return j.dump(2);
}

EvalReport eval_report_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    const int v = j.at("schema_version");
    if (v != kEvalSchemaVersion) fail(Errc::version_mismatch, "eval report schema version " + std::to_string(v));
    EvalReport r;
    r.epe = j.at("epe");
    r.rmse = j.at("rmse");
    r.mae = j.at("mae");
    r.rel = j.at("rel");
    r.delta_105 = j.at("delta_105");
    r.delta_110 = j.at("delta_110");
    r.delta_125 = j.at("delta_125");
    r.valid_fraction = j.at("valid_fraction");
    r.n_pixels = j.at("n_pixels");
    return r;
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::unsupported_format, std::string("malformed eval report: ") + e.what());
  }
}

std::string to_csv(const std::vector<NamedReport>& rows) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "name,epe,rmse,mae,rel,delta_105,delta_110,delta_125,valid_fraction,n_pixels\n";
  auto line = [&os](const std::string& name, const EvalReport& r) {
    os << name << ',' << r.epe << ',' << r.rmse << ',' << r.mae << ',' << r.rel << ',' << r.delta_105 << ','
       << r.delta_110 << ',' << r.delta_125 << ',' << r.valid_fraction << ',' << r.n_pixels << '\n';
  };
  EvalReport mean;
  for (const auto& row : rows) {
    line(row.name, row.report);
    mean.epe += row.report.epe;
    mean.rmse += row.report.rmse;
    mean.mae += row.report.mae;
    mean.rel += row.report.rel;
    mean.delta_105 += row.report.delta_105;
    mean.delta_110 += row.report.delta_110;
    mean.delta_125 += row.report.delta_125;
    mean.valid_fraction += row.report.valid_fraction;
    mean.n_pixels += row.report.n_pixels;
  }
  if (!rows.empty()) {
    const double n = static_cast<double>(rows.size());
    mean.epe /= n;
    mean.rmse /= n;
    mean.mae /= n;
    mean.rel /= n;
    mean.delta_105 /= n;
    mean.delta_110 /= n;
    mean.delta_125 /= n;
    mean.valid_fraction /= n;
    line("mean", mean);
  }
  return os.str();
}

}  // namespace stereoroma
