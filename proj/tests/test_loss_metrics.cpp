#include <gtest/gtest.h>

#include <cmath>

#include "isnet/blocks.hpp"
#include "isnet/error.hpp"
#include "isnet/loss.hpp"
#include "isnet/metrics.hpp"
#include "oracles.hpp"

namespace isnet {
namespace {

GroundTruth random_truth(std::mt19937_64& rng, std::size_t h, std::size_t w, std::size_t k, double ignore = 0) {
  GroundTruth gt;
  gt.height = h;
  gt.width = w;
  for (std::size_t i = 0; i < h * w; ++i)
    gt.labels.push_back(uniform01(rng) < ignore ? kIgnoreLabel : static_cast<std::uint8_t>(uniform_index(rng, k)));
  return gt;
}

// Mean -log softmax over non-ignored pixels of a [K,N] logit map.
double mean_ce(const std::vector<double>& logits, std::size_t k, const std::vector<std::uint8_t>& labels) {
  const std::size_t n = labels.size();
  long double total = 0;
  std::size_t valid = 0;
  for (std::size_t p = 0; p < n; ++p) {
    if (labels[p] == kIgnoreLabel) continue;
    std::vector<double> z(k);
    for (std::size_t c = 0; c < k; ++c) z[c] = logits[c * n + p];
    total += oracle::cross_entropy(z, labels[p]);
    ++valid;
  }
  return valid ? static_cast<double>(total / valid) : 0.0;
}

TEST(CrossEntropyPixel, Cases) {
  const std::vector<double> uniform(4, 0.7);
  EXPECT_NEAR(cross_entropy_pixel<double>(uniform, 2), std::log(4.0), 1e-15);
  const std::vector<double> sat{0, 1000, 0};
  EXPECT_LE(cross_entropy_pixel<double>(sat, 1), 1e-6);
  const std::vector<double> z{1, 2, 3};
  EXPECT_NEAR(cross_entropy_pixel<double>(z, 0), static_cast<double>(oracle::cross_entropy(z, 0)), 1e-12);
  EXPECT_EQ(cross_entropy_pixel<double>(z, kIgnoreLabel), 0.0);
  EXPECT_THROW(cross_entropy_pixel<double>(z, 3), DataError);
}

TEST(LossO, UniformSaturatedAndOracle) {
  std::mt19937_64 rng(1);
  GroundTruth gt = random_truth(rng, 4, 4, 2);
  Tape<double> tape;
  EXPECT_NEAR(loss_O(tape.constant(Tensor<double>({2, 4, 4})), gt).value().item(), std::log(2.0), 1e-15);

  Tensor<double> perfect({2, 4, 4}, -500);
  for (std::size_t p = 0; p < 16; ++p) perfect[gt.labels[p] * 16 + p] = 500;
  EXPECT_LE(loss_O(tape.constant(perfect), gt).value().item(), 1e-6);

  gt = random_truth(rng, 5, 3, 4, 0.2);
  const Tensor<double> o = oracle::random_tensor({4, 5, 3}, rng, -3, 3);
  EXPECT_NEAR(loss_O(tape.constant(o), gt).value().item(), mean_ce(o.storage(), 4, gt.labels), 1e-8);
}

TEST(LossO, ExtentAndLabelErrors) {
  Tape<double> tape;
  GroundTruth gt;
  gt.height = gt.width = 2;
  gt.labels = {0, 1, 2, 0};
  EXPECT_THROW(loss_O(tape.constant(Tensor<double>({3, 2, 3})), gt), DimensionError);
  EXPECT_THROW(loss_O(tape.constant(Tensor<double>({2, 2, 2})), gt), DataError);
}

TEST(LossD, UniformAllIgnoredAndOracle) {
  std::mt19937_64 rng(2);
  Tape<double> tape;
  GroundTruth gt = random_truth(rng, 16, 16, 4);
  EXPECT_NEAR(loss_D(tape.constant(Tensor<double>({4, 2, 2}, 0.3)), gt).value().item(), std::log(4.0), 1e-14);

  GroundTruth ignored = gt;
  std::fill(ignored.labels.begin(), ignored.labels.end(), kIgnoreLabel);
  const Var<double> d = tape.leaf(oracle::random_tensor({4, 2, 2}, rng));
  const Var<double> l = loss_D(d, ignored);
  EXPECT_EQ(l.value().item(), 0.0);
  tape.backward(l);
  const Tensor<double> g = d.grad();
  for (double v : g.data()) EXPECT_EQ(v, 0.0);

  const Tensor<double> dv = oracle::random_tensor({4, 2, 2}, rng, -2, 2);
  std::vector<double> up;
  for (std::size_t k = 0; k < 4; ++k) {
    const auto plane = oracle::upsample(std::vector<double>(dv.ptr() + 4 * k, dv.ptr() + 4 * k + 4), 2, 2, 8);
    up.insert(up.end(), plane.begin(), plane.end());
  }
  EXPECT_NEAR(loss_D(tape.constant(dv), gt).value().item(), mean_ce(up, 4, gt.labels), 1e-8);
  EXPECT_THROW(loss_D(tape.constant(Tensor<double>({4, 3, 2})), gt), DimensionError);
}

TEST(TotalLoss, Arithmetic) {
  EXPECT_DOUBLE_EQ(total_loss(1.0, 2.0, 0.4), 2.4);
  EXPECT_DOUBLE_EQ(total_loss(5.0, 2.0, 0.0), 2.0);
  EXPECT_THROW(total_loss(1.0, 2.0, -0.1), UsageError);
  Tape<double> tape;
  const Var<double> ld = tape.constant(Tensor<double>::scalar(1)), lo = tape.constant(Tensor<double>::scalar(2));
  EXPECT_DOUBLE_EQ(total_loss(ld, lo, 0.4).value().item(), 2.4);
}

TEST(TotalLoss, UniformLogitsApproachScaledLogK) {
  std::mt19937_64 rng(3);
  for (std::size_t k : {2, 4, 10}) {
    const GroundTruth gt = random_truth(rng, 16, 16, k);
    Tape<double> tape;
    const double l = total_loss(loss_D(tape.constant(Tensor<double>({k, 2, 2})), gt),
                                loss_O(tape.constant(Tensor<double>({k, 16, 16})), gt), 0.4)
                         .value()
                         .item();
    EXPECT_NEAR(l, 1.4 * std::log(static_cast<double>(k)), 1e-6);
  }
}

TEST(Metrics, HandComputedIou) {
  ConfusionMatrix cm(2);
  cm.add(0, 0, 3);
  cm.add(0, 1, 1);
  cm.add(1, 0, 1);
  cm.add(1, 1, 3);
  const IouReport r = miou(cm);
  EXPECT_DOUBLE_EQ(*r.per_class[0], 0.6);
  EXPECT_DOUBLE_EQ(*r.per_class[1], 0.6);
  EXPECT_DOUBLE_EQ(r.mean, 0.6);
}

TEST(Metrics, PerfectDisjointAndAbsent) {
  ConfusionMatrix perfect(3);
  perfect.add(0, 0, 5);
  perfect.add(2, 2, 7);
  IouReport r = miou(perfect);
  EXPECT_FALSE(r.per_class[1]);
  EXPECT_DOUBLE_EQ(r.mean, 1.0);

  ConfusionMatrix wrong(2);
  wrong.add(0, 1, 4);
  wrong.add(1, 0, 2);
  r = miou(wrong);
  EXPECT_DOUBLE_EQ(r.mean, 0.0);
  EXPECT_THROW(miou(ConfusionMatrix(3)), MetricError);
}

TEST(Metrics, AccumulateSkipsIgnoreAndChecks) {
  ConfusionMatrix cm(3);
  const std::vector<std::uint8_t> none;
  accumulate_confusion(none, none, cm);
  EXPECT_EQ(cm, ConfusionMatrix(3));
  const std::vector<std::uint8_t> pred{0, 2, 1}, gt{1, kIgnoreLabel, 1};
  accumulate_confusion(pred, gt, cm);
  EXPECT_EQ(cm.at(1, 0), 1u);
  EXPECT_EQ(cm.at(1, 1), 1u);
  EXPECT_EQ(cm.total(), 2u);
  EXPECT_THROW(accumulate_confusion(pred, std::vector<std::uint8_t>{1, 1}, cm), DimensionError);
  EXPECT_THROW(accumulate_confusion(pred, std::vector<std::uint8_t>{1, 3, 1}, cm), DataError);
}

TEST(Metrics, PartitionAndOrderInvariance) {
  std::mt19937_64 rng(4);
  std::vector<std::uint8_t> pred(300), gt(300);
  for (std::size_t i = 0; i < 300; ++i) {
    pred[i] = static_cast<std::uint8_t>(uniform_index(rng, 4));
    gt[i] = uniform01(rng) < 0.05 ? kIgnoreLabel : static_cast<std::uint8_t>(uniform_index(rng, 4));
  }
  ConfusionMatrix whole(4), forward(4), backward(4);
  accumulate_confusion(pred, gt, whole);
  const std::size_t cuts[] = {0, 17, 140, 141, 300};
  for (int i = 0; i < 4; ++i) {
    const std::span<const std::uint8_t> p(pred.data() + cuts[i], cuts[i + 1] - cuts[i]);
    const std::span<const std::uint8_t> g(gt.data() + cuts[i], cuts[i + 1] - cuts[i]);
    accumulate_confusion(p, g, forward);
  }
  for (int i = 3; i >= 0; --i) {
    ConfusionMatrix part(4);
    accumulate_confusion(std::span<const std::uint8_t>(pred.data() + cuts[i], cuts[i + 1] - cuts[i]),
                         std::span<const std::uint8_t>(gt.data() + cuts[i], cuts[i + 1] - cuts[i]), part);
    backward.merge(part);
  }
  EXPECT_EQ(whole, forward);
  EXPECT_EQ(whole, backward);
  const IouReport r = miou(whole);
  for (const auto& v : r.per_class)
    if (v) {
      EXPECT_GE(*v, 0.0);
      EXPECT_LE(*v, 1.0);
    }
}

TEST(Metrics, ReportFormats) {
  ConfusionMatrix cm(3);
  cm.add(0, 0, 1);
  cm.add(2, 2, 1);
  cm.add(2, 0, 1);
  const IouReport r = miou(cm);
  EXPECT_EQ(format_report_tsv(r), "0\t0.500000\n1\tnan\n2\t0.500000\nmIoU\t0.500000\n");
  EXPECT_NE(format_report(r).find("mIoU: 0.500000"), std::string::npos);
}

TEST(Metrics, ArgmaxLabelsTiesToSmallest) {
  const Tensor<float> logits({3, 1, 3}, {1, 5, 2, 1, 5, 3, 0, 1, 3});
  EXPECT_EQ(argmax_labels(logits), (std::vector<std::uint8_t>{0, 0, 1}));
}

TEST(Metrics, UntrainedHeadStaysNearChance) {
  // Random logits carry no information: mIoU stays well below 1/K + 0.1.
  std::mt19937_64 rng(5);
  const std::size_t k = 5, n = 4096;
  std::vector<std::uint8_t> gt(n);
  for (auto& g : gt) g = static_cast<std::uint8_t>(uniform_index(rng, k));
  const Tensor<double> logits = oracle::random_tensor({k, 64, 64}, rng);
  ConfusionMatrix cm(k);
  accumulate_confusion(argmax_labels(logits), gt, cm);
  EXPECT_LT(miou(cm).mean, 1.0 / k + 0.1);
}

}  // namespace
}  // namespace isnet
