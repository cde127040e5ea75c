#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

#include "isnet/error.hpp"
#include "isnet/train.hpp"

namespace isnet {
namespace {

TrainConfig tiny(Variant v = Variant::isnet) {
  TrainConfig c;
  c.model.variant = v;
  c.model.channels = 8;
  c.model.seed = 3;
  c.batch = 2;
  c.crop = 16;
  c.iterations = 6;
  c.dataset.seed = 5;
  c.dataset.height = c.dataset.width = 16;
  c.dataset.train_count = 8;
  c.dataset.val_count = 4;
  return c;
}

std::map<std::string, Tensor<float>> by_name(const std::vector<NamedTensor>& records) {
  std::map<std::string, Tensor<float>> out;
  for (const auto& r : records) out[r.name] = r.value;
  return out;
}

TEST(Config, ParseAndFormatRoundTrip) {
  const TrainConfig c = parse_config(
      "# comment\n"
      "variant = slcm\n"
      "seed = 42   # trailing\n"
      "\n"
      "lr = 0.02\n"
      "channels = 16\n"
      "classes = 3\n"
      "precision = f64\n"
      "augment = false\n"
      "dataset.twin_gap = 0.05\n"
      "dataset.pair.2.1 = 1\n");
  EXPECT_EQ(c.model.variant, Variant::slcm);
  EXPECT_EQ(c.seed(), 42u);
  EXPECT_EQ(c.lr, 0.02);
  EXPECT_EQ(c.model.classes, 3u);
  EXPECT_EQ(c.dataset.classes, 3u);
  EXPECT_EQ(c.precision, Precision::f64);
  EXPECT_FALSE(c.augment);
  ASSERT_EQ(c.dataset.pairs.size(), 1u);
  EXPECT_EQ(c.dataset.pairs[0].a, 1);
  const std::string text = format_config(c);
  EXPECT_EQ(format_config(parse_config(text)), text);
  EXPECT_EQ(parse_config(format_config(tiny())).lr, tiny().lr);
}

TEST(Config, ErrorsNameTheLine) {
  auto message = [](std::string_view text) -> std::string {
    try {
      parse_config(text);
    } catch (const ConfigError& e) {
      return e.what();
    }
    return "no error";
  };
  EXPECT_NE(message("lr = 0.1\nlearning_rate = 2\n").find("line 2"), std::string::npos);
  EXPECT_NE(message("lr = 0.1\n\nlr = 0.2\n").find("duplicate key 'lr'"), std::string::npos);
  EXPECT_NE(message("batch = eight\n").find("line 1"), std::string::npos);
  EXPECT_NE(message("just words\n").find("key = value"), std::string::npos);
  EXPECT_THROW(parse_config("crop = 12\n"), ConfigError);
  EXPECT_THROW(parse_config("momentum = 1\n"), ConfigError);
  EXPECT_THROW(parse_config("variant = fcn\n"), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/isnet.cfg"), DataError);
}

TEST(PolyLr, EndpointsAndOracle) {
  EXPECT_EQ(poly_lr(0.01, 0, 100), 0.01);
  EXPECT_EQ(poly_lr(0.01, 100, 100), 0.0);
  for (std::size_t i = 0; i <= 50; i += 7) {
    const long double want = 0.01L * std::pow(1.0L - static_cast<long double>(i) / 50, 0.9L);
    EXPECT_NEAR(poly_lr(0.01, i, 50), static_cast<double>(want), 1e-15);
  }
  double prev = poly_lr(0.1, 0, 30);
  for (std::size_t i = 1; i <= 30; ++i) {
    const double now = poly_lr(0.1, i, 30);
    EXPECT_LT(now, prev);
    prev = now;
  }
  EXPECT_THROW(poly_lr(0.01, 5, 4), UsageError);
  EXPECT_THROW(poly_lr(0.01, 0, 0), UsageError);
}

TEST(Sgd, PlainStep) {
  Parameter<double> p("w", Tensor<double>({3}, {1, 2, 3}));
  p.grad = Tensor<double>({3}, {0.5, -1, 0});
  Tensor<double> v({3});
  sgd_step(p, v, 0.1, 0.0, 0.0);
  EXPECT_EQ(p.value, Tensor<double>({3}, {1 - 0.1 * 0.5, 2 + 0.1, 3}));
}

TEST(Sgd, MomentumRecurrenceOverTwoSteps) {
  const double lr = 0.05, m = 0.9, wd = 0.01;
  for (bool decay : {true, false}) {
    Parameter<double> p("w", Tensor<double>({2}, {0.7, -1.3}), true, decay);
    Tensor<double> v({2});
    const double g1[2] = {0.2, -0.4}, g2[2] = {-0.1, 0.3};
    const double d = decay ? wd : 0.0;
    double w[2] = {0.7, -1.3}, vel[2] = {0, 0};
    for (const double* g : {g1, g2}) {
      p.grad = Tensor<double>({2}, {g[0], g[1]});
      sgd_step(p, v, lr, m, wd);
      for (int i = 0; i < 2; ++i) {
        vel[i] = m * vel[i] + g[i] + d * w[i];
        w[i] -= lr * vel[i];
      }
    }
    for (int i = 0; i < 2; ++i) {
      EXPECT_NEAR(p.value[i], w[i], 1e-12);
      EXPECT_NEAR(v[i], vel[i], 1e-12);
    }
  }
}

TEST(Sgd, ShapeMismatch) {
  Parameter<double> p("w", Tensor<double>({3}));
  Tensor<double> v({2});
  EXPECT_THROW(sgd_step(p, v, 0.1, 0.9, 0.0), DimensionError);
}

TEST(Trainer, SingleIterationUpdatesOnce) {
  TrainConfig c = tiny();
  c.iterations = 1;
  const Datasets data = load_datasets(c);
  Trainer<float> t(c, data.train);
  const auto before = by_name(t.state());
  const StepResult s = t.step();
  EXPECT_EQ(s.iteration, 1u);
  EXPECT_EQ(s.lr, c.lr);
  EXPECT_TRUE(std::isfinite(s.loss));
  EXPECT_TRUE(t.done());
  EXPECT_THROW(t.step(), UsageError);
  const auto after = by_name(t.state());
  EXPECT_NE(before.at("fusion.head.conv.weight"), after.at("fusion.head.conv.weight"));
  EXPECT_EQ(unpack_u64(after.at("meta/iteration")), 1u);
}

TEST(Trainer, SameSeedSameRun) {
  const TrainConfig c = tiny();
  const Datasets data = load_datasets(c);
  const TrainResult a = train(c, data), b = train(c, data);
  ASSERT_EQ(a.log.size(), 6u);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(a.log[i].loss, b.log[i].loss);
  EXPECT_EQ(a.checkpoint, b.checkpoint);
  TrainConfig other = c;
  other.model.seed = 4;
  EXPECT_NE(train(other, data).log[0].loss, a.log[0].loss);
}

TEST(Trainer, ResumeContinuesBitwise) {
  const TrainConfig c = tiny();
  const Datasets data = load_datasets(c);
  Trainer<float> full(c, data.train);
  std::vector<double> losses;
  std::vector<NamedTensor> mid;
  while (!full.done()) {
    losses.push_back(full.step().loss);
    if (full.iteration() == 3) mid = decode_checkpoint(encode_checkpoint(full.state()));
  }
  Trainer<float> resumed(c, data.train);
  resumed.restore(mid);
  EXPECT_EQ(resumed.iteration(), 3u);
  for (std::size_t i = 3; i < 6; ++i) EXPECT_EQ(resumed.step().loss, losses[i]) << i;
  EXPECT_EQ(resumed.state(), full.state());
}

TEST(Trainer, RestoreRejectsOtherRuns) {
  const TrainConfig c = tiny();
  const Datasets data = load_datasets(c);
  Trainer<float> t(c, data.train);
  const auto state = t.state();
  TrainConfig seed = c;
  seed.model.seed = 9;
  Trainer<float> other_seed(seed, data.train);
  EXPECT_THROW(other_seed.restore(state), ConfigError);
  Trainer<float> other_variant(tiny(Variant::ilcm), data.train);
  EXPECT_THROW(other_variant.restore(state), ConfigError);
  auto missing = state;
  missing.pop_back();
  Trainer<float> again(c, data.train);
  EXPECT_THROW(again.restore(missing), FormatError);
}

TEST(Trainer, VariantsBuildOnlyTheirModules) {
  const TrainConfig c = tiny(Variant::baseline);
  Trainer<float> t(c, load_datasets(c).train);
  for (const auto& r : t.state()) {
    EXPECT_NE(r.name.find("ilcm."), 0u) << r.name;
    EXPECT_NE(r.name.find("slcm."), 0u) << r.name;
  }
  EXPECT_FALSE(t.model().ilcm);
  EXPECT_FALSE(t.model().slcm);
}

TEST(Trainer, SlcmHeadLearnsFromTheRegionLoss) {
  for (Variant v : {Variant::slcm, Variant::isnet}) {
    TrainConfig c = tiny(v);
    c.iterations = 2;
    Trainer<float> t(c, load_datasets(c).train);
    const Tensor<float> before = t.model().slcm->head.second.weight.value;
    t.step();
    EXPECT_NE(t.model().slcm->head.second.weight.value, before) << to_string(v);
    EXPECT_NE(t.model().slcm->head.second.weight.grad, Tensor<float>(before.shape()));
  }
}

TEST(Trainer, RejectsBadData) {
  const TrainConfig c = tiny();
  EXPECT_THROW(Trainer<float>(c, {}), DataError);
  TrainConfig three = tiny();
  three.model.classes = three.dataset.classes = 3;
  EXPECT_THROW(Trainer<float>(c, load_datasets(three).train), ConfigError);
}

TEST(Evaluate, DeterministicAndChecksClasses) {
  const TrainConfig c = tiny();
  const Datasets data = load_datasets(c);
  IsNet<float> model(c.model);
  init_params<float>(model, 1);
  const IouReport a = evaluate(model, data.val), b = evaluate(model, data.val, 1);
  EXPECT_EQ(a.mean, b.mean);
  TrainConfig three = tiny();
  three.model.classes = three.dataset.classes = 3;
  EXPECT_THROW(evaluate(model, load_datasets(three).val), ConfigError);
  EXPECT_THROW(evaluate(model, {}), DataError);
}

TEST(Train, WritesLogAndCheckpoints) {
  TrainConfig c = tiny();
  c.output_dir = (std::filesystem::temp_directory_path() / "isnet_test_train").string();
  std::filesystem::remove_all(c.output_dir);
  c.checkpoint_interval = 2;
  c.eval_interval = 3;
  std::ostringstream log;
  const TrainResult r = train(c, load_datasets(c), &log);
  ASSERT_TRUE(r.final_report);
  EXPECT_TRUE(r.log[2].miou);
  EXPECT_FALSE(r.log[1].miou);
  const std::filesystem::path dir = c.output_dir;
  EXPECT_TRUE(std::filesystem::exists(dir / "checkpoint_2.isnc"));
  EXPECT_TRUE(std::filesystem::exists(dir / "checkpoint_4.isnc"));
  EXPECT_FALSE(std::filesystem::exists(dir / "checkpoint_6.isnc"));
  EXPECT_EQ(load_checkpoint(dir / "final.isnc"), r.checkpoint);
  const ModelConfig m = model_from_checkpoint(r.checkpoint);
  EXPECT_EQ(m.channels, 8u);
  EXPECT_EQ(m.variant, Variant::isnet);
  std::filesystem::remove_all(dir);
}

TEST(LogRow, Formats) {
  EXPECT_EQ(format_log_row({3, 0.5, 0.25, std::nullopt}, Precision::f32), "3\t0.5\t0.25");
  EXPECT_EQ(format_log_row({3, 0.5, 0.25, 0.75}, Precision::f64), "3\t0.5\t0.25\t0.750000");
}

}  // namespace
}  // namespace isnet
