#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <numeric>

#include "denoiser_fixtures.hpp"
#include "stereoroma/datagen.hpp"
#include "stereoroma/error.hpp"
#include "test_util.hpp"

using namespace stereoroma;
using namespace stereoroma::testing;

namespace {

// Parameter count of the U-Net built from its description, independently of
// the layout builder.
std::size_t hand_count(const DenoiserSpec& s) {
  const std::size_t E = s.time_embed_dim;
  auto width = [&](int l) -> std::size_t { return static_cast<std::size_t>(s.base_width) << std::min(l, 2); };
  auto conv = [](std::size_t cin, std::size_t cout, std::size_t k) { return cout * cin * k * k + cout; };
  auto block = [&](std::size_t cin, std::size_t cout) {
    std::size_t n = 2 * cin + conv(cin, cout, 3) + (E * cout + cout) + 2 * cout + conv(cout, cout, 3);
    if (cin != cout) n += conv(cin, cout, 1);
    return n;
  };
  std::size_t n = E * E + E;
  n += conv(static_cast<std::size_t>(s.in_channels()), width(0), 3);
  for (int l = 0; l < s.depth; ++l) n += block(width(l == 0 ? 0 : l - 1), width(l));
  n += block(width(s.depth - 1), width(s.depth));
  for (int l = 0; l < s.depth; ++l) n += block(width(l + 1) + width(l), width(l));
  n += 2 * width(0) + conv(width(0), 1, 3);
  return n;
}

std::vector<TrainingPair> toy_pairs(int n, int size) {
  SceneConfig cfg;
  cfg.width = cfg.height = size;
  cfg.d_max = 12.0;
  std::vector<TrainingPair> out;
  for (int i = 0; i < n; ++i) {
    auto s = make_sample(cfg, CorruptionConfig{}, 100 + i);
    out.push_back({s.frame, s.gt});
  }
  return out;
}

DenoiserSpec small_spec() {
  DenoiserSpec s;
  s.base_width = 4;
  s.depth = 2;
  s.time_embed_dim = 8;
  return s;
}

}  // namespace

TEST(DenoiserSpec, ConditioningChannels) {
  EXPECT_EQ(DenoiserSpec::cond_channels("left+right+raw"), 4);
  EXPECT_EQ(DenoiserSpec{.cond = "left+right+raw"}.in_channels(), 5);
  EXPECT_EQ(DenoiserSpec::cond_channels("left+right"), 2);
  EXPECT_EQ(DenoiserSpec::cond_channels("color+left+right+raw"), 7);
  EXPECT_EQ(DenoiserSpec::cond_channels("none"), 0);
  try {
    DenoiserSpec::cond_channels("left+depth");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::config_error);
  }
}

TEST(DenoiserSpec, ParamCountMatchesHandCount) {
  for (int depth = 1; depth <= 3; ++depth)
    for (int base : {2, 4, 8})
      for (const char* cond : {"left+right+raw", "left+right", "none"}) {
        DenoiserSpec s{.cond = cond, .base_width = base, .depth = depth, .time_embed_dim = 16};
        EXPECT_EQ(param_count(s), hand_count(s)) << "depth " << depth << " base " << base << " " << cond;
        const auto layout = param_layout(s);
        std::size_t next = 0;
        for (const auto& t : layout) {
          EXPECT_EQ(t.offset, next) << t.name;
          next += t.size();
        }
        EXPECT_EQ(next, param_count(s));
      }
}

TEST(DenoiserSpec, Validation) {
  EXPECT_THROW(param_count(DenoiserSpec{.base_width = 0}), Error);
  EXPECT_THROW(param_count(DenoiserSpec{.depth = 0}), Error);
  EXPECT_THROW(param_count(DenoiserSpec{.time_embed_dim = 7}), Error);
}

TEST(TimeEmbedding, ZeroAndBounds) {
  const auto e0 = time_embedding(0.0, 16);
  for (int i = 0; i < 8; ++i) {
    EXPECT_EQ(e0[2 * i], 0.0);
    EXPECT_EQ(e0[2 * i + 1], 1.0);
  }
  for (double t : {1.0, 17.0, 127.0})
    for (double v : time_embedding(t, 64)) EXPECT_LE(std::abs(v), 1.0);
  EXPECT_THROW(time_embedding(3.0, 7), Error);
}

TEST(TimeEmbedding, LowFrequenciesSeparateNeighbours) {
  const auto a = time_embedding(1.0, 64), b = time_embedding(2.0, 64);
  // The first frequencies move by at least 1e-3 per unit step.
  for (int i = 0; i < 8; ++i) {
    EXPECT_NE(a[2 * i], b[2 * i]) << i;
    EXPECT_NE(a[2 * i + 1], b[2 * i + 1]) << i;
  }
}

TEST(TimeEmbedding, SimilarityDecreasesWithDistance) {
  for (double t : {10.0, 40.0, 100.0}) {
    const auto e = time_embedding(t, 64);
    auto sim = [&](double dt) {
      const auto f = time_embedding(t + dt, 64);
      return std::inner_product(e.begin(), e.end(), f.begin(), 0.0);
    };
    EXPECT_GT(sim(1), sim(4)) << t;
    EXPECT_GT(sim(4), sim(16)) << t;
  }
}

TEST(DenoiserForward, ZeroInitGivesZeroOutput) {
  const auto spec = small_spec();
  const auto params = init_params(spec, 3);
  Rng rng(1);
  const auto ex = random_example(spec, 16, 16, rng);
  for (double v : denoiser_forward(params, spec, ex.x_t, ex.t, ex.cond).values) EXPECT_EQ(v, 0.0);
}

TEST(DenoiserForward, ShapesAndFiniteness) {
  const auto spec = small_spec();
  Rng rng(2);
  const auto p = random_params(spec, rng);
  DenoiserParams params;
  params.values.assign(p.begin(), p.end());
  for (auto [w, h] : {std::pair{32, 32}, std::pair{64, 48}}) {
    const auto ex = random_example(spec, w, h, rng);
    const auto out = denoiser_forward(params, spec, ex.x_t, ex.t, ex.cond);
    EXPECT_EQ(out.width, w);
    EXPECT_EQ(out.height, h);
    for (double v : out.values) EXPECT_TRUE(std::isfinite(v));
  }
}

TEST(DenoiserForward, PureFunction) {
  const auto spec = small_spec();
  Rng rng(4);
  const auto p = random_params(spec, rng);
  DenoiserParams params;
  params.values.assign(p.begin(), p.end());
  const auto a = random_example(spec, 16, 16, rng), b = random_example(spec, 16, 16, rng);
  const auto first = denoiser_forward(params, spec, a.x_t, a.t, a.cond);
  (void)denoiser_forward(params, spec, b.x_t, b.t, b.cond);
  EXPECT_EQ(denoiser_forward(params, spec, a.x_t, a.t, a.cond), first);
}

TEST(DenoiserForward, ShapeErrors) {
  const auto spec = small_spec();
  const auto params = init_params(spec, 0);
  Rng rng(5);
  auto ex = random_example(spec, 16, 16, rng);
  try {
    denoiser_forward(params, spec, FieldD(18, 16), 1, FeatureMap(4, 16, 18));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::dimension_mismatch);
  }
  try {
    denoiser_forward(params, spec, ex.x_t, 1, FeatureMap(3, 16, 16));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::dimension_mismatch);
  }
}

TEST(DenoiserBackward, MatchesFiniteDifferencesMse) {
  const auto r = check_denoiser_gradient(micro_spec(), 11, 8, 8, 2, LossKind::mse);
  // Roughly a tenth of the entries have gradients below the comparison floor
  // (deep time-embedding rows on an 8x8 input); the rest must all be checked.
  EXPECT_GT(r.compared, r.params * 3 / 4);
  EXPECT_LT(r.max_rel_error, 1e-3);
  EXPECT_LT(r.max_abs_error_small, 1e-8);
}

TEST(DenoiserBackward, MatchesFiniteDifferencesL1) {
  const auto r = check_denoiser_gradient(micro_spec("left+right"), 12, 8, 8, 1, LossKind::l1, 1e-6);
  EXPECT_GT(r.compared, r.params * 3 / 4);
  EXPECT_LT(r.max_rel_error, 1e-3);
}

TEST(DenoiserBackward, FloatPathTracksDoublePath) {
  const auto spec = micro_spec();
  Rng rng(13);
  std::vector<TrainingExample> ex{random_example(spec, 8, 8, rng), random_example(spec, 8, 8, rng)};
  const auto p = random_params(spec, rng);
  DenoiserParams params;
  params.values.assign(p.begin(), p.end());
  std::vector<double> pf(params.values.begin(), params.values.end());
  const auto g32 = denoiser_backward(params, spec, ex, LossKind::mse);
  const auto g64 = denoiser_backward_f64(pf, spec, ex, LossKind::mse);
  EXPECT_NEAR(g32.loss, g64.loss, 1e-5 * g64.loss);
  double diff = 0.0, norm = 0.0;
  for (std::size_t i = 0; i < pf.size(); ++i) {
    diff += (g32.grad[i] - g64.grad[i]) * (g32.grad[i] - g64.grad[i]);
    norm += g64.grad[i] * g64.grad[i];
  }
  EXPECT_LT(std::sqrt(diff / norm), 1e-4);
}

TEST(DenoiserBackward, ZeroOutputLossIsNoiseVariance) {
  const auto spec = small_spec();
  const auto params = init_params(spec, 0);
  Rng rng(14);
  std::vector<TrainingExample> batch;
  for (int i = 0; i < 8; ++i) batch.push_back(random_example(spec, 32, 32, rng));
  // 8192 unit-variance draws: std of the mean of eps^2 is sqrt(2/8192) ~ 0.016.
  EXPECT_NEAR(denoiser_backward(params, spec, batch, LossKind::mse).loss, 1.0, 0.05);
  // E|eps| = sqrt(2/pi).
  EXPECT_NEAR(denoiser_backward(params, spec, batch, LossKind::l1).loss, std::sqrt(2.0 / M_PI), 0.03);
}

TEST(DenoiserBackward, DuplicatedSampleKeepsGradient) {
  const auto spec = micro_spec();
  Rng rng(15);
  const auto ex = random_example(spec, 8, 8, rng);
  const auto p = random_params(spec, rng);
  const std::vector<TrainingExample> one{ex}, two{ex, ex};
  const auto a = denoiser_backward_f64(p, spec, one, LossKind::mse);
  const auto b = denoiser_backward_f64(p, spec, two, LossKind::mse);
  EXPECT_NEAR(a.loss, b.loss, 1e-14 * a.loss);
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(a.grad[i], b.grad[i], 1e-12 * (1.0 + std::abs(a.grad[i])));
}

TEST(DenoiserBackward, EmptyBatchRejected) {
  const auto spec = micro_spec();
  EXPECT_THROW(denoiser_backward(init_params(spec, 0), spec, {}, LossKind::mse), Error);
}

TEST(DenoiserBackward, NonFiniteLossSignalsDivergence) {
  const auto spec = micro_spec();
  Rng rng(16);
  auto ex = random_example(spec, 8, 8, rng);
  ex.eps.values[3] = std::numeric_limits<double>::infinity();
  try {
    denoiser_backward(init_params(spec, 0), spec, std::vector<TrainingExample>{ex}, LossKind::mse);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::divergence);
  }
}

TEST(Conditioning, ChannelOrderAndRawEncoding) {
  StereoFrame f;
  f.left = ImageF32(4, 2, 1, 0.25f);
  f.right = ImageF32(4, 2, 1, 1.0f);
  DisparityMap raw(4, 2, 48.0);
  raw.valid[1] = 0;
  f.raw = raw;
  const auto c = build_conditioning(f, "left+right+raw", NormSpec{.d_norm = 192.0});
  ASSERT_EQ(c.channels, 4);
  EXPECT_FLOAT_EQ(c.at(0, 0, 0), -0.5f);
  EXPECT_FLOAT_EQ(c.at(1, 0, 0), 1.0f);
  EXPECT_FLOAT_EQ(c.at(2, 0, 0), -0.5f);
  EXPECT_FLOAT_EQ(c.at(2, 0, 1), 0.0f);
  EXPECT_FLOAT_EQ(c.at(3, 0, 0), 1.0f);
  EXPECT_FLOAT_EQ(c.at(3, 0, 1), 0.0f);
  f.raw.reset();
  EXPECT_THROW(build_conditioning(f, "left+raw", NormSpec{}), Error);
}

TEST(Training, DeterministicAndLossDecreases) {
  const auto data = toy_pairs(6, 32);
  const auto spec = small_spec();
  const auto sched = make_schedule(ScheduleKind::cosine, 128);
  TrainConfig cfg{.epochs = 6, .batch_size = 2, .learning_rate = 1e-3, .crop_w = 32, .crop_h = 32, .seed = 9};
  const auto a = train(data, spec, sched, NormSpec{}, cfg);
  const auto b = train(data, spec, sched, NormSpec{}, cfg);
  EXPECT_EQ(a.params, b.params);
  EXPECT_EQ(a.loss_curve, b.loss_curve);
  ASSERT_EQ(a.loss_curve.size(), 6u);
  EXPECT_LT(a.loss_curve.back(), a.loss_curve.front());
  for (float v : a.params.values) EXPECT_TRUE(std::isfinite(v));
}

TEST(Training, ResumeReproducesUninterruptedRun) {
  const auto data = toy_pairs(4, 32);
  const auto spec = small_spec();
  const auto sched = make_schedule(ScheduleKind::cosine, 128);
  TrainConfig cfg{.epochs = 4, .batch_size = 2, .learning_rate = 1e-3, .crop_w = 16, .crop_h = 16, .seed = 5};
  const auto full = train(data, spec, sched, NormSpec{}, cfg);

  TempDir dir;
  TrainConfig half = cfg;
  half.epochs = 2;
  const auto first = train(data, spec, sched, NormSpec{}, half);
  Checkpoint ck{.spec = spec, .params = first.params, .optimizer = first.optimizer, .loss_curve = first.loss_curve};
  save_params(ck, dir / "half.ckpt");
  const auto loaded = load_params(dir / "half.ckpt", spec);
  const TrainResult state{loaded.params, *loaded.optimizer, loaded.loss_curve, false};
  const auto resumed = train(data, spec, sched, NormSpec{}, cfg, state);
  EXPECT_EQ(resumed.params, full.params);
  EXPECT_EQ(resumed.loss_curve, full.loss_curve);
}

TEST(Training, EpochCallbackAndValidation) {
  const auto data = toy_pairs(2, 16);
  const auto spec = small_spec();
  const auto sched = make_schedule(ScheduleKind::cosine, 32);
  std::vector<int> seen;
  TrainConfig cfg{.epochs = 2, .batch_size = 1, .crop_w = 16, .crop_h = 16};
  train(data, spec, sched, NormSpec{}, cfg, std::nullopt, [&](int e, double) { seen.push_back(e); });
  EXPECT_EQ(seen, (std::vector<int>{0, 1}));
  cfg.crop_w = 32;
  EXPECT_THROW(train(data, spec, sched, NormSpec{}, cfg), Error);
  cfg.crop_w = 16;
  cfg.batch_size = 0;
  EXPECT_THROW(train(data, spec, sched, NormSpec{}, cfg), Error);
  EXPECT_THROW(train({}, spec, sched, NormSpec{}, TrainConfig{}), Error);
}

class CheckpointFile : public ::testing::Test {
 protected:
  void SetUp() override {
    Rng rng(21);
    const auto p = random_params(spec_, rng);
    ck_.spec = spec_;
    ck_.schedule_kind = ScheduleKind::linear;
    ck_.schedule_T = 64;
    ck_.norm.d_norm = 32.0;
    ck_.params.values.assign(p.begin(), p.end());
    ck_.params.values[0] = -0.0f;
    ck_.params.values[1] = std::numeric_limits<float>::denorm_min();
    ck_.loss_curve = {0.9, 0.1 + 0.2, 1.0 / 3.0};
    ck_.notes = "rmsprop, zero final conv";
    save_params(ck_, path());
  }
  std::filesystem::path path() const { return dir_ / "m.ckpt"; }
  Errc load_error(const std::optional<DenoiserSpec>& expected = std::nullopt) {
    try {
      load_params(path(), expected);
    } catch (const Error& e) {
      return e.code();
    }
    ADD_FAILURE() << "load succeeded";
    return Errc::invalid_argument;
  }

  DenoiserSpec spec_ = micro_spec();
  Checkpoint ck_;
  TempDir dir_;
};

TEST_F(CheckpointFile, BitExactRoundTrip) {
  const auto back = load_params(path(), spec_);
  EXPECT_EQ(back.spec, spec_);
  EXPECT_EQ(back.schedule_kind, ScheduleKind::linear);
  EXPECT_EQ(back.schedule_T, 64);
  EXPECT_EQ(back.norm.d_norm, 32.0);
  EXPECT_EQ(back.loss_curve, ck_.loss_curve);
  EXPECT_EQ(back.notes, ck_.notes);
  ASSERT_EQ(back.params.values.size(), ck_.params.values.size());
  EXPECT_EQ(std::memcmp(back.params.values.data(), ck_.params.values.data(), 4 * ck_.params.values.size()), 0);
  EXPECT_FALSE(back.optimizer.has_value());
  save_params(back, dir_ / "again.ckpt");
  EXPECT_EQ(read_bytes(path()), read_bytes(dir_ / "again.ckpt"));
}

TEST_F(CheckpointFile, SpecMismatch) {
  EXPECT_EQ(load_error(micro_spec("left+right")), Errc::spec_mismatch);
}

TEST_F(CheckpointFile, BadMagic) {
  auto bytes = read_bytes(path());
  bytes[0] = 'X';
  write_bytes(path(), bytes);
  EXPECT_EQ(load_error(), Errc::bad_magic);
}

TEST_F(CheckpointFile, VersionMismatch) {
  auto bytes = read_bytes(path());
  bytes[4] = 7;
  write_bytes(path(), bytes);
  EXPECT_EQ(load_error(), Errc::version_mismatch);
}

TEST_F(CheckpointFile, Truncated) {
  auto bytes = read_bytes(path());
  bytes.resize(bytes.size() - 5);
  write_bytes(path(), bytes);
  EXPECT_EQ(load_error(), Errc::truncated_file);
  bytes.resize(3);
  write_bytes(path(), bytes);
  EXPECT_EQ(load_error(), Errc::truncated_file);
}

TEST_F(CheckpointFile, TrailingBytes) {
  auto bytes = read_bytes(path());
  bytes.push_back('!');
  write_bytes(path(), bytes);
  EXPECT_EQ(load_error(), Errc::size_mismatch);
}

TEST_F(CheckpointFile, Missing) {
  std::filesystem::remove(path());
  EXPECT_EQ(load_error(), Errc::missing_file);
}
