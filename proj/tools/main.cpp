// stereoroma command-line driver: data generation, SGM, training, guided
// inference, evaluation, point clouds and visualization.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "stereoroma/config.hpp"
#include "stereoroma/error.hpp"
#include "stereoroma/geometry.hpp"
#include "stereoroma/metrics.hpp"
#include "stereoroma/parallel.hpp"

namespace fs = std::filesystem;
using namespace stereoroma;

namespace {

enum ExitCode { kOk = 0, kOther = 1, kConfig = 2, kIo = 3, kDivergence = 4 };

int exit_code_for(Errc code) {
  switch (code) {
    case Errc::config_error:
      return kConfig;
    case Errc::divergence:
      return kDivergence;
    case Errc::io_failure:
    case Errc::missing_file:
    case Errc::truncated_file:
    case Errc::bad_magic:
    case Errc::unsupported_format:
    case Errc::size_mismatch:
    case Errc::version_mismatch:
      return kIo;
    default:
      return kOther;
  }
}

struct Common {
  std::string config_file;
  std::vector<std::string> sets;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_file, "key=value config file (e.g. an echoed config.txt)");
  cmd->add_option("--set", c.sets, "override, key=value (repeatable)");
  cmd->add_option("--out", c.out, "output directory");
  cmd->allow_extras();
}

// Builds the run config: defaults < file < --set < --section.key value extras < command flags.
RunConfig resolve(const Common& c, CLI::App* cmd, const std::map<std::string, std::string>& flags) {
  RunConfig cfg = c.config_file.empty() ? RunConfig{} : RunConfig::from_file(c.config_file);
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) fail(Errc::config_error, "--set expects key=value, got '" + s + "'");
    cfg.set(s.substr(0, eq), s.substr(eq + 1));
  }
  const auto extras = cmd->remaining();
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const std::string& a = extras[i];
    if (a.rfind("--", 0) != 0 || i + 1 >= extras.size())
      fail(Errc::config_error, "unexpected argument '" + a + "' (overrides take the form --section.key value)");
    cfg.set(a.substr(2), extras[++i]);
  }
  for (const auto& [k, v] : flags) cfg.set(k, v);
  cfg.validate();
  return cfg;
}

fs::path run_dir(const Common& c, const RunConfig& cfg) {
  if (!c.out.empty()) return c.out;
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%d-%H%M%S", std::gmtime(&now));
  return fs::path("runs") / (std::string(stamp) + "-seed" + cfg.get("seed"));
}

CameraIntrinsics resolved_camera(CameraIntrinsics cam, int w, int h) {
  if (cam.cx < 0) cam.cx = 0.5 * (w - 1);
  if (cam.cy < 0) cam.cy = 0.5 * (h - 1);
  cam.validate();
  return cam;
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream os(p, std::ios::binary);
  if (!os) fail(Errc::io_failure, "cannot write " + p.string());
  os << s;
  if (!os) fail(Errc::io_failure, "write failed: " + p.string());
}

DisparityMap disparity_from_image(const ImageF32& img, const ImageF32* valid) {
  DisparityMap d(img.width, img.height, 0.0, true);
  for (std::size_t i = 0; i < d.size(); ++i) {
    d.values[i] = img.data[i];
    if (valid) d.valid[i] = valid->data[i] > 0.5f ? 1 : 0;
  }
  return d;
}

// Prediction inside a directory: disp.pfm (dense) or raw.pfm + valid.pgm.
std::optional<DisparityMap> load_prediction(const fs::path& dir) {
  if (fs::exists(dir / "disp.pfm")) return disparity_from_image(load_image(dir / "disp.pfm"), nullptr);
  if (fs::exists(dir / "raw.pfm")) {
    if (fs::exists(dir / "valid.pgm")) {
      const ImageF32 v = load_image(dir / "valid.pgm");
      return disparity_from_image(load_image(dir / "raw.pfm"), &v);
    }
    return disparity_from_image(load_image(dir / "raw.pfm"), nullptr);
  }
  return std::nullopt;
}

void save_validity(const DisparityMap& d, const fs::path& p) {
  ImageF32 v(d.width, d.height, 1);
  for (std::size_t i = 0; i < d.size(); ++i) v.data[i] = d.valid[i] ? 1.0f : 0.0f;
  save_pgm(v, p);
}

// --- commands --------------------------------------------------------------------

int cmd_gen_data(const RunConfig& cfg, const fs::path& out) {
  const SceneConfig scene = cfg.scene();
  const CorruptionConfig corrupt = cfg.corruption();
  const int n = cfg.integer("data.n");
  const auto entries = generate_dataset(scene, corrupt, n, 0, cfg.real("data.train_fraction"));
  write_dataset(out, entries);
  cfg.echo(out);
  std::size_t counts[4] = {0, 0, 0, 0}, total = 0, train = 0;
  for (const auto& e : entries) {
    for (auto m : e.sample.material) ++counts[m];
    total += e.sample.material.size();
    train += e.train ? 1 : 0;
  }
  std::printf("generated %d samples (%zu train, %zu test) in %s\n", n, train, entries.size() - train,
              out.string().c_str());
  for (int m = 0; m < 4; ++m)
    std::printf("  %-12s %6.2f%% of pixels\n", to_string(static_cast<Material>(m)).c_str(),
                100.0 * static_cast<double>(counts[m]) / static_cast<double>(total));
  return kOk;
}

int cmd_sgm(const RunConfig& cfg, const fs::path& out, const std::string& input, const std::string& left,
            const std::string& right, const std::string& gt_path, bool viz) {
  const SgmParams params = cfg.sgm();
  ImageF32 l, r;
  std::optional<DisparityMap> gt;
  if (!input.empty()) {
    for (const char* f : {"left.pfm", "right.pfm"})
      if (!fs::exists(fs::path(input) / f)) fail(Errc::missing_file, "missing " + (fs::path(input) / f).string());
    l = load_image(fs::path(input) / "left.pfm");
    r = load_image(fs::path(input) / "right.pfm");
    if (fs::exists(fs::path(input) / "gt.pfm")) gt = disparity_from_image(load_image(fs::path(input) / "gt.pfm"), nullptr);
  } else {
    if (left.empty() || right.empty()) fail(Errc::missing_file, "sgm: need --input DIR or both --left and --right");
    if (!fs::exists(right)) fail(Errc::missing_file, "missing right image " + right);
    l = load_image(left);
    r = load_image(right);
  }
  if (!gt_path.empty()) gt = disparity_from_image(load_image(gt_path), nullptr);
  if (l.channels != 1) l = l.channel(0);
  if (r.channels != 1) r = r.channel(0);
  const DisparityMap raw = compute_raw_disparity(l, r, params);
  fs::create_directories(out);
  save_pfm(to_image(raw), out / "raw.pfm");
  save_validity(raw, out / "valid.pgm");
  if (viz) colorize_disparity(raw, params.d_max, out / "raw.png");
  cfg.echo(out);
  std::printf("sgm: %zu / %zu pixels valid\n", raw.valid_count(), raw.size());
  if (gt) std::printf("sgm: EPE vs gt %.6f px\n", epe(raw, *gt));
  return kOk;
}

void write_loss_csv(const fs::path& p, const std::vector<double>& curve) {
  std::string s = "epoch,loss\n";
  char buf[64];
  for (std::size_t e = 0; e < curve.size(); ++e) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g\n", e + 1, curve[e]);
    s += buf;
  }
  write_text(p, s);
}

int cmd_train(const RunConfig& cfg, const fs::path& out, const std::string& data, const std::string& resume) {
  if (data.empty()) fail(Errc::config_error, "train: --data DIR is required");
  const DenoiserSpec spec = cfg.model();
  const TrainConfig tc = cfg.train();
  const NoiseSchedule sched = cfg.schedule();
  const NormSpec norm = cfg.norm();
  std::optional<TrainResult> state;
  if (!resume.empty()) {
    Checkpoint ck = load_params(resume, spec);
    if (!ck.optimizer) fail(Errc::config_error, "train: checkpoint " + resume + " has no optimizer state to resume");
    state = TrainResult{ck.params, *ck.optimizer, ck.loss_curve, false};
  }
  std::vector<TrainingPair> pairs;
  for (auto& e : read_dataset(data))
    if (e.train) pairs.push_back({std::move(e.sample.frame), std::move(e.sample.gt)});
  if (pairs.empty()) fail(Errc::config_error, "train: dataset has no training samples");
  fs::create_directories(out);
  cfg.echo(out);
  std::printf("train: %zu samples, %zu parameters\n", pairs.size(), param_count(spec));
  const TrainResult res = train(pairs, spec, sched, norm, tc, state, [](int epoch, double loss) {
    std::printf("epoch %3d  loss %.6f\n", epoch + 1, loss);
    std::fflush(stdout);
  });
  Checkpoint ck;
  ck.spec = spec;
  ck.schedule_kind = sched.kind;
  ck.schedule_T = sched.T;
  ck.beta_start = cfg.real("schedule.beta_start");
  ck.beta_end = cfg.real("schedule.beta_end");
  ck.norm = norm;
  ck.params = res.params;
  ck.optimizer = res.optimizer;
  ck.loss_curve = res.loss_curve;
  ck.notes = "optimizer=rmsprop decay=" + cfg.get("train.rms_decay") + " lr=" + cfg.get("train.learning_rate") +
             "; init=he-normal per tensor, zero output conv; seed=" + cfg.get("seed");
  save_params(ck, out / "model.ckpt");
  write_loss_csv(out / "loss.csv", res.loss_curve);
  if (res.diverged) {
    std::fprintf(stderr, "train: loss became non-finite; saved the last good parameters\n");
    return kDivergence;
  }
  return kOk;
}

void write_sample_outputs(const fs::path& dir, const SampleResult& r, const CameraIntrinsics& cam, double d_max,
                          bool snapshots, bool pointcloud, const StereoFrame& frame) {
  fs::create_directories(dir);
  save_pfm(to_image(r.disparity), dir / "disp.pfm");
  colorize_disparity(r.disparity, d_max, dir / "disp.png");
  const DepthMap depth = disparity_to_depth(r.disparity, cam, 1e-3);
  save_pfm(to_image(depth), dir / "depth.pfm");
  std::vector<StepRecord> records = r.records;
  if (snapshots) {
    fs::create_directories(dir / "snapshots");
    for (const auto& s : r.snapshots) {
      char name[32];
      std::snprintf(name, sizeof name, "step_%04d", s.step);
      save_pfm(to_image(s.disparity), dir / "snapshots" / (std::string(name) + ".pfm"));
      colorize_disparity(s.disparity, d_max, dir / "snapshots" / (std::string(name) + ".png"));
      records[static_cast<std::size_t>(s.step - 1)].snapshot_path = "snapshots/" + std::string(name) + ".pfm";
    }
  }
  write_text(dir / "steps.jsonl", to_jsonl(records));
  if (pointcloud) {
    std::optional<ImageF32> color;
    if (frame.color) color = *frame.color;
    else color = frame.left;
    write_ply(backproject(depth, cam, color), dir / "cloud.ply");
  }
}

int cmd_infer(const RunConfig& cfg, const fs::path& out, const std::string& ckpt_path, const std::string& input,
              const std::string& data, const std::string& split, int uncertainty, bool snapshots, bool pointcloud) {
  if (ckpt_path.empty()) fail(Errc::config_error, "infer: --ckpt is required");
  const Checkpoint ck = load_params(ckpt_path);
  Denoiser model{ck.spec, ck.params};
  SamplerConfig sc = cfg.sampler();
  sc.schedule = ck.schedule();
  sc.norm = ck.norm;
  if (sc.steps > sc.schedule.T) fail(Errc::config_error, "sample.steps exceeds the checkpoint schedule length");
  const int chains = cfg.integer("sample.chains");
  if (uncertainty == 1) fail(Errc::config_error, "infer: --uncertainty needs at least 2 runs");

  std::vector<DatasetEntry> inputs;
  if (!input.empty()) {
    inputs.push_back(read_sample(input));
  } else if (!data.empty()) {
    for (auto& e : read_dataset(data))
      if (split == "all" || (split == "test") != e.train) inputs.push_back(std::move(e));
  } else {
    fail(Errc::config_error, "infer: need --input SAMPLE_DIR or --data DATASET_DIR");
  }
  fs::create_directories(out);
  cfg.echo(out);
  const double d_max = cfg.real("scene.d_max");
  for (const auto& e : inputs) {
    const StereoFrame& frame = e.sample.frame;
    const CameraIntrinsics cam = frame.camera;
    const fs::path dir = out / e.name;
    // Each sample gets its own stream; guided and unguided runs stay paired.
    SamplerConfig scs = sc;
    scs.seed = derive_seed(sc.seed, static_cast<std::uint64_t>(e.index));
    if (chains <= 1) {
      const SampleResult r = sample(model, frame, scs);
      write_sample_outputs(dir, r, cam, d_max, snapshots, pointcloud, frame);
      std::printf("%s: mean disparity %.4f px\n", e.name.c_str(), r.records.back().mean_disp);
      continue;
    }
    const auto runs = sample_chains(model, frame, scs, chains);
    std::vector<DisparityMap> maps;
    for (const auto& r : runs) maps.push_back(r.disparity);
    // Chain 0 is the reported prediction; the spread of all chains is the uncertainty.
    write_sample_outputs(dir, runs[0], cam, d_max, snapshots, pointcloud, frame);
    const FieldD var = uncertainty_map(maps);
    save_pfm(to_image(var), dir / "variance.pfm");
    double vmax = 0.0;
    for (double v : var.values) vmax = std::max(vmax, v);
    DisparityMap vis(var.width, var.height, 0.0, true);
    vis.values = var.values;
    colorize_disparity(vis, vmax > 0.0 ? vmax : 1.0, dir / "variance.png");
    double vmean = 0.0;
    for (double v : var.values) vmean += v;
    std::printf("%s: %d runs, mean variance %.6f px^2\n", e.name.c_str(), chains,
                vmean / static_cast<double>(var.size()));
  }
  return kOk;
}

int cmd_eval(const RunConfig& cfg, const fs::path& out, const std::string& pred_dir, const std::string& gt_dir,
             const std::string& region, const std::string& split) {
  if (pred_dir.empty() || gt_dir.empty()) fail(Errc::config_error, "eval: --pred and --gt are required");
  const EvalOptions opt = cfg.eval();
  std::vector<DatasetEntry> gts;
  for (auto& e : read_dataset(gt_dir))
    if (split == "all" || (split == "test") != e.train) gts.push_back(std::move(e));
  std::vector<std::string> missing;
  std::vector<std::pair<const DatasetEntry*, DisparityMap>> preds;
  for (const auto& e : gts) {
    auto p = load_prediction(fs::path(pred_dir) / e.name);
    if (!p)
      missing.push_back(e.name);
    else
      preds.emplace_back(&e, std::move(*p));
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    fail(Errc::missing_file, "eval: no prediction for " + std::to_string(missing.size()) + " sample(s): " + list);
  }
  std::vector<NamedReport> rows;
  EvalSums pooled;
  for (const auto& [e, pred] : preds) {
    PixelMask mask;
    const PixelMask* mp = nullptr;
    if (region != "all") {
      Material m;
      if (region == "transparent") m = Material::transparent;
      else if (region == "specular") m = Material::specular;
      else if (region == "diffuse") m = Material::diffuse;
      else fail(Errc::config_error, "eval: unknown --region '" + region + "'");
      mask.resize(e->sample.material.size());
      for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = e->sample.material[i] == static_cast<std::uint8_t>(m);
      mp = &mask;
    }
    const EvalSums s = evaluate_sums(pred, e->sample.gt, e->sample.frame.camera, opt, mp);
    if (s.n_disp == 0) continue;
    pooled.add(s);
    rows.push_back({e->name, s.report()});
  }
  if (rows.empty()) fail(Errc::invalid_argument, "eval: no evaluable pixels");
  fs::create_directories(out);
  cfg.echo(out);
  const EvalReport report = pooled.report();
  write_text(out / "report.json", to_json(report) + "\n");
  write_text(out / "report.csv", to_csv(rows));
  std::printf("eval: %zu samples  EPE %.6f px  RMSE %.6f m  MAE %.6f m  REL %.6f  d1.05 %.3f%%  d1.10 %.3f%%  d1.25 %.3f%%\n",
              rows.size(), report.epe, report.rmse, report.mae, report.rel, report.delta_105, report.delta_110,
              report.delta_125);
  return kOk;
}

int cmd_pointcloud(const RunConfig& cfg, const fs::path& out, const std::string& disp_path,
                   const std::string& valid_path, const std::string& color_path) {
  if (disp_path.empty()) fail(Errc::config_error, "pointcloud: --disp is required");
  const ImageF32 img = load_image(disp_path);
  std::optional<ImageF32> valid;
  if (!valid_path.empty()) valid = load_image(valid_path);
  const DisparityMap disp = disparity_from_image(img, valid ? &*valid : nullptr);
  const CameraIntrinsics cam = resolved_camera(cfg.camera(), disp.width, disp.height);
  std::optional<ImageF32> color;
  if (!color_path.empty()) color = load_image(color_path);
  const DepthMap depth = disparity_to_depth(disp, cam, cfg.real("eval.min_disp"));
  const PointCloud cloud = backproject(depth, cam, color);
  const fs::path target = out.extension() == ".ply" ? out : out / "cloud.ply";
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  write_ply(cloud, target);
  cfg.echo(target.parent_path().empty() ? fs::path(".") : target.parent_path());
  std::printf("pointcloud: %zu points -> %s\n", cloud.points.size(), target.string().c_str());
  return kOk;
}

int cmd_viz(const RunConfig& cfg, const fs::path& out, const std::string& disp_path, const std::string& valid_path,
            double dmax) {
  if (disp_path.empty()) fail(Errc::config_error, "viz: --disp is required");
  std::optional<ImageF32> valid;
  if (!valid_path.empty()) valid = load_image(valid_path);
  const DisparityMap disp = disparity_from_image(load_image(disp_path), valid ? &*valid : nullptr);
  const double d = dmax > 0.0 ? dmax : cfg.real("scene.d_max");
  const fs::path target = out.extension() == ".png" ? out : out / "disp.png";
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  colorize_disparity(disp, d, target);
  cfg.echo(target.parent_path().empty() ? fs::path(".") : target.parent_path());
  std::printf("viz: wrote %s\n", target.string().c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stereoroma: guided diffusion stereo depth at desk scale"};
  app.require_subcommand(1);

  Common gen_c, sgm_c, train_c, infer_c, eval_c, pc_c, viz_c;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic stereo dataset");
  add_common(gen, gen_c);
  std::string gen_n, gen_size, gen_seed;
  gen->add_option("--n", gen_n, "number of samples");
  gen->add_option("--size", gen_size, "image size WxH");
  gen->add_option("--seed", gen_seed, "base seed");

  auto* sgm_cmd = app.add_subcommand("sgm", "raw disparity by semi-global matching");
  add_common(sgm_cmd, sgm_c);
  std::string sgm_input, sgm_left, sgm_right, sgm_gt;
  bool sgm_viz = false;
  sgm_cmd->add_option("--input", sgm_input, "sample directory with left.pfm/right.pfm (and gt.pfm)");
  sgm_cmd->add_option("--left", sgm_left, "left image");
  sgm_cmd->add_option("--right", sgm_right, "right image");
  sgm_cmd->add_option("--gt", sgm_gt, "ground-truth disparity PFM");
  sgm_cmd->add_flag("--viz", sgm_viz, "also write a pseudo-color PNG");

  auto* train_cmd = app.add_subcommand("train", "train the denoiser");
  add_common(train_cmd, train_c);
  std::string train_data, train_resume, train_cond, train_epochs, train_seed;
  train_cmd->add_option("--data", train_data, "dataset directory");
  train_cmd->add_option("--resume", train_resume, "checkpoint with optimizer state");
  train_cmd->add_option("--cond", train_cond, "conditioning, e.g. left+right+raw");
  train_cmd->add_option("--epochs", train_epochs, "total epochs");
  train_cmd->add_option("--seed", train_seed, "seed");

  auto* infer_cmd = app.add_subcommand("infer", "sample disparity with optional guidance");
  add_common(infer_cmd, infer_c);
  std::string infer_ckpt, infer_input, infer_data, infer_split = "test", infer_guidance, infer_s, infer_steps,
                                                    infer_seed;
  int infer_unc = 0;
  bool infer_snap = false, infer_pc = false;
  infer_cmd->add_option("--ckpt", infer_ckpt, "checkpoint");
  infer_cmd->add_option("--input", infer_input, "sample directory");
  infer_cmd->add_option("--data", infer_data, "dataset directory (all samples of --split)");
  infer_cmd->add_option("--split", infer_split, "train, test or all")->check(CLI::IsMember({"train", "test", "all"}));
  infer_cmd->add_option("--guidance", infer_guidance, "none, stereo or raw");
  infer_cmd->add_option("--s", infer_s, "guidance scale");
  infer_cmd->add_option("--steps", infer_steps, "reverse steps");
  infer_cmd->add_option("--seed", infer_seed, "seed");
  infer_cmd->add_option("--uncertainty", infer_unc, "number of runs for the variance map");
  infer_cmd->add_flag("--snapshots", infer_snap, "write intermediate states");
  infer_cmd->add_flag("--pointcloud", infer_pc, "write a PLY point cloud");

  auto* eval_cmd = app.add_subcommand("eval", "evaluate predictions against a dataset");
  add_common(eval_cmd, eval_c);
  std::string eval_pred, eval_gt, eval_region = "all", eval_split = "test";
  eval_cmd->add_option("--pred", eval_pred, "prediction directory (per-sample disp.pfm, or a dataset's raw.pfm)");
  eval_cmd->add_option("--gt", eval_gt, "dataset directory");
  eval_cmd->add_option("--region", eval_region, "all, diffuse, specular or transparent");
  eval_cmd->add_option("--split", eval_split, "train, test or all")->check(CLI::IsMember({"train", "test", "all"}));

  auto* pc_cmd = app.add_subcommand("pointcloud", "back-project a disparity map to PLY");
  add_common(pc_cmd, pc_c);
  std::string pc_disp, pc_valid, pc_color;
  pc_cmd->add_option("--disp", pc_disp, "disparity PFM");
  pc_cmd->add_option("--valid", pc_valid, "validity PGM");
  pc_cmd->add_option("--color", pc_color, "color image for the points");

  auto* viz_cmd = app.add_subcommand("viz", "pseudo-color a disparity map");
  add_common(viz_cmd, viz_c);
  std::string viz_disp, viz_valid;
  double viz_dmax = 0.0;
  viz_cmd->add_option("--disp", viz_disp, "disparity PFM");
  viz_cmd->add_option("--valid", viz_valid, "validity PGM");
  viz_cmd->add_option("--dmax", viz_dmax, "disparity mapped to the top color");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (gen->parsed()) {
      std::map<std::string, std::string> f;
      if (!gen_n.empty()) f["data.n"] = gen_n;
      if (!gen_seed.empty()) f["seed"] = gen_seed;
      if (!gen_size.empty()) {
        const auto x = gen_size.find('x');
        if (x == std::string::npos) fail(Errc::config_error, "--size expects WxH");
        f["scene.width"] = gen_size.substr(0, x);
        f["scene.height"] = gen_size.substr(x + 1);
      }
      const RunConfig cfg = resolve(gen_c, gen, f);
      return cmd_gen_data(cfg, run_dir(gen_c, cfg));
    }
    if (sgm_cmd->parsed()) {
      const RunConfig cfg = resolve(sgm_c, sgm_cmd, {});
      return cmd_sgm(cfg, run_dir(sgm_c, cfg), sgm_input, sgm_left, sgm_right, sgm_gt, sgm_viz);
    }
    if (train_cmd->parsed()) {
      std::map<std::string, std::string> f;
      if (!train_cond.empty()) f["model.cond"] = train_cond;
      if (!train_epochs.empty()) f["train.epochs"] = train_epochs;
      if (!train_seed.empty()) f["seed"] = train_seed;
      const RunConfig cfg = resolve(train_c, train_cmd, f);
      return cmd_train(cfg, run_dir(train_c, cfg), train_data, train_resume);
    }
    if (infer_cmd->parsed()) {
      std::map<std::string, std::string> f;
      if (!infer_guidance.empty()) f["guidance.mode"] = infer_guidance;
      if (!infer_s.empty()) f["guidance.s"] = infer_s;
      if (!infer_steps.empty()) f["sample.steps"] = infer_steps;
      if (!infer_seed.empty()) f["seed"] = infer_seed;
      if (infer_unc > 0) f["sample.chains"] = std::to_string(infer_unc);
      const RunConfig cfg = resolve(infer_c, infer_cmd, f);
      return cmd_infer(cfg, run_dir(infer_c, cfg), infer_ckpt, infer_input, infer_data, infer_split, infer_unc,
                       infer_snap, infer_pc);
    }
    if (eval_cmd->parsed()) {
      const RunConfig cfg = resolve(eval_c, eval_cmd, {});
      return cmd_eval(cfg, run_dir(eval_c, cfg), eval_pred, eval_gt, eval_region, eval_split);
    }
    if (pc_cmd->parsed()) {
      const RunConfig cfg = resolve(pc_c, pc_cmd, {});
      return cmd_pointcloud(cfg, run_dir(pc_c, cfg), pc_disp, pc_valid, pc_color);
    }
    if (viz_cmd->parsed()) {
      const RunConfig cfg = resolve(viz_c, viz_cmd, {});
      return cmd_viz(cfg, run_dir(viz_c, cfg), viz_disp, viz_valid, viz_dmax);
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error [%s]: %s\n", std::string(to_string(e.code())).c_str(), e.what());
    return exit_code_for(e.code());
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "error [io]: %s\n", e.what());
    return kIo;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kOther;
  }
  return kOther;
}
