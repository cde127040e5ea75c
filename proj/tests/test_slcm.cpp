#include <gtest/gtest.h>

#include <cmath>

#include "isnet/error.hpp"
#include "isnet/slcm.hpp"
#include "oracles.hpp"

namespace isnet {
namespace {

RegionAssignment assignment(std::size_t k, std::size_t h, std::size_t w, std::vector<std::uint32_t> labels) {
  RegionAssignment a;
  a.classes = k;
  a.height = h;
  a.width = w;
  a.labels = std::move(labels);
  return a;
}

Tensor<double> context_of(const Tensor<double>& r, const Tensor<double>& d) {
  Tape<double> tape;
  const std::vector<RegionAssignment> regions{group_regions(d)};
  return semantic_context(tape.constant(r), tape.constant(d), regions).value();
}

TEST(GroupRegions, ArgmaxAndTies) {
  const Tensor<double> d({2, 1, 2}, {1, 0.5, 0, 0.5});
  EXPECT_EQ(group_regions(d).labels, (std::vector<std::uint32_t>{0, 0}));
  const Tensor<double> e({3, 1, 1}, {0.2, 0.9, 0.9});
  EXPECT_EQ(group_regions(e).labels, (std::vector<std::uint32_t>{1}));
}

TEST(GroupRegions, ExhaustiveScanOracle) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor<double> d = oracle::random_tensor({3, 4, 4}, rng);
    // Quantize so ties actually occur.
    for (double& v : d.data()) v = std::round(v * 2) / 2;
    const RegionAssignment a = group_regions(d);
    for (std::size_t p = 0; p < 16; ++p) {
      std::size_t best = 0;
      for (std::size_t c = 0; c < 3; ++c)
        if (d[c * 16 + p] > d[best * 16 + p]) best = c;
      EXPECT_EQ(a.labels[p], best);
    }
  }
}

TEST(RegionRepresentation, SingleMemberIsThatPixel) {
  std::mt19937_64 rng(2);
  const Tensor<double> r = oracle::random_tensor({3, 1, 2}, rng);
  const auto a = assignment(2, 1, 2, {0, 1});
  const auto v = region_representation(r, Tensor<double>({2, 1, 2}, {4, -9, 1, 7}), a, 1);
  ASSERT_TRUE(v);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ((*v)[c], r[c * 2 + 1]);
}

TEST(RegionRepresentation, EqualLogitsGiveMean) {
  const Tensor<double> r({2, 1, 2}, {1, 3, -2, 6});
  const auto a = assignment(2, 1, 2, {1, 1});
  const auto v = region_representation(r, Tensor<double>({2, 1, 2}, {0, 0, 0.3, 0.3}), a, 1);
  ASSERT_TRUE(v);
  EXPECT_DOUBLE_EQ((*v)[0], 2);
  EXPECT_DOUBLE_EQ((*v)[1], 2);
  EXPECT_FALSE(region_representation(r, Tensor<double>({2, 1, 2}), a, 0));
}

TEST(RegionRepresentation, LogWeightsOneTwoFour) {
  const Tensor<double> r({2, 1, 3}, {7, 14, 21, 1, -1, 0.5});
  const Tensor<double> d({1, 1, 3}, {0, std::log(2.0), std::log(4.0)});
  const auto a = assignment(1, 1, 3, {0, 0, 0});
  const RegionRepr<double> rr = region_representations(r, d, a);
  ASSERT_EQ(rr.weights[0].size(), 3u);
  EXPECT_NEAR(rr.weights[0][0], 1.0 / 7, 1e-15);
  EXPECT_NEAR(rr.weights[0][1], 2.0 / 7, 1e-15);
  EXPECT_NEAR(rr.weights[0][2], 4.0 / 7, 1e-15);
  long double ch0 = (7.0L + 2 * 14 + 4 * 21) / 7, ch1 = (1.0L - 2 + 4 * 0.5L) / 7;
  EXPECT_NEAR(rr.vectors[0][0], static_cast<double>(ch0), 1e-10);
  EXPECT_NEAR(rr.vectors[0][1], static_cast<double>(ch1), 1e-10);
}

TEST(Scatter, SingleClassAndCheckerboard) {
  std::mt19937_64 rng(3);
  const Tensor<double> r = oracle::random_tensor({2, 2, 2}, rng);
  const Tensor<double> d = oracle::random_tensor({2, 2, 2}, rng);
  const auto one = assignment(2, 2, 2, {1, 1, 1, 1});
  const Tensor<double> c1 = scatter_regions(one, region_representations(r, d, one));
  for (std::size_t ch = 0; ch < 2; ++ch)
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(c1[ch * 4 + i], c1[ch * 4]);

  const auto board = assignment(2, 2, 2, {0, 1, 1, 0});
  const RegionRepr<double> rr = region_representations(r, d, board);
  const Tensor<double> c2 = scatter_regions(board, rr);
  for (std::size_t p = 0; p < 4; ++p)
    for (std::size_t ch = 0; ch < 2; ++ch) EXPECT_EQ(c2[ch * 4 + p], rr.vectors[board.labels[p]][ch]);
  EXPECT_NE(c2[0], c2[1]);
}

TEST(Scatter, MissingVectorIsInternalError) {
  RegionRepr<double> rr;
  rr.channels = 2;
  rr.vectors.resize(2);
  rr.vectors[0] = {1, 2};
  EXPECT_THROW(scatter_regions(assignment(2, 1, 2, {0, 1}), rr), InternalError);
}

TEST(SemanticContext, UniformLogitsGiveSpatialMean) {
  std::mt19937_64 rng(4);
  const Tensor<double> r = oracle::random_tensor({3, 3, 3}, rng);
  const Tensor<double> ctx = context_of(r, Tensor<double>({4, 3, 3}, 0.5));
  for (std::size_t c = 0; c < 3; ++c) {
    double mean = 0;
    for (std::size_t i = 0; i < 9; ++i) mean += r[c * 9 + i] / 9;
    for (std::size_t i = 0; i < 9; ++i) EXPECT_NEAR(ctx[c * 9 + i], mean, 1e-14);
  }
}

TEST(SemanticContext, ThreeOneSplit) {
  const Tensor<double> r({2, 2, 2}, {1, 2, 3, 4, -1, -2, -3, -4});
  // Pixel 3 is class 1; the others class 0 with class-0 logits 0, ln 3, 0.
  const Tensor<double> d({2, 2, 2}, {0, std::log(3.0), 0, -5, -1, -1, -1, 9});
  const Tensor<double> ctx = context_of(r, d);
  EXPECT_EQ(ctx[3], 4);
  EXPECT_EQ(ctx[7], -4);
  for (std::size_t p = 0; p < 3; ++p) {
    EXPECT_NEAR(ctx[p], (1 + 3 * 2 + 3) / 5.0, 1e-14);
    EXPECT_NEAR(ctx[4 + p], -(1 + 3 * 2 + 3) / 5.0, 1e-14);
  }
}

TEST(SemanticContext, RejectsMismatchedAssignments) {
  Tape<double> tape;
  const Var<double> r = tape.constant(Tensor<double>({2, 2, 2})), d = tape.constant(Tensor<double>({3, 2, 2}));
  EXPECT_THROW(semantic_context(r, d, {assignment(2, 2, 2, {0, 0, 0, 0})}), DimensionError);
  EXPECT_THROW(semantic_context(r, d, {}), DimensionError);
}

struct Instance {
  std::size_t c, hidden, k, h, w;
  Slcm<double> module;
  Tensor<double> r;
};

Instance random_instance(std::mt19937_64& rng, std::uint64_t seed) {
  const std::size_t c = oracle::random_extent(rng, 1, 8), hidden = oracle::random_extent(rng, 1, 8),
                    k = oracle::random_extent(rng, 2, 5), h = oracle::random_extent(rng, 1, 8),
                    w = oracle::random_extent(rng, 1, 8);
  Instance in{c, hidden, k, h, w, Slcm<double>("slcm", c, hidden, k), oracle::random_tensor({c, h, w}, rng)};
  init_params<double>(in.module, seed);
  in.module.head.first.bias.value = oracle::random_tensor({hidden}, rng);
  in.module.head.second.bias.value = oracle::random_tensor({k}, rng);
  return in;
}

TEST(SlcmForward, MatchesNaivePerPixelOracle) {
  std::mt19937_64 rng(5);
  for (std::uint64_t trial = 0; trial < 100; ++trial) {
    Instance in = random_instance(rng, trial);
    Tape<double> tape;
    Pass<double> pass{tape, false, nullptr};
    const SlcmOutput<double> out = in.module.forward(pass, tape.constant(in.r));
    const auto& head = in.module.head;
    const oracle::SlcmResult want =
        oracle::slcm(in.r, head.first.weight.value.storage(), head.first.bias.value.storage(),
                     head.second.weight.value.storage(), head.second.bias.value.storage(), in.hidden, in.k);
    for (std::size_t i = 0; i < want.d.size(); ++i) ASSERT_NEAR(out.distribution.value()[i], want.d[i], 1e-12);
    for (std::size_t p = 0; p < in.h * in.w; ++p) ASSERT_EQ(out.regions[0].labels[p], want.cls[p]);
    for (std::size_t i = 0; i < want.context.size(); ++i)
      ASSERT_NEAR(out.context.value()[i], want.context[i], 1e-10) << "trial " << trial;
  }
}

TEST(SlcmForward, Float32WithinOneMillionth) {
  std::mt19937_64 rng(6);
  for (std::uint64_t trial = 0; trial < 30; ++trial) {
    Instance in = random_instance(rng, trial);
    const Tensor<double> d = oracle::random_tensor({in.k, in.h, in.w}, rng, -3, 3);
    const std::vector<RegionAssignment> regions{group_regions(d)};
    Tape<float> tf;
    const Tensor<float> got =
        semantic_context(tf.constant(in.r.cast<float>()), tf.constant(d.cast<float>()), regions).value();
    const Tensor<double> want = context_of(in.r, d);
    for (std::size_t i = 0; i < want.size(); ++i) ASSERT_NEAR(got[i], want[i], 1e-6);
  }
}

TEST(SlcmProperties, SameClassIdentityAndConvexity) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t c = 4, k = 3, h = 5, w = 6, n = 30;
    const Tensor<double> r = oracle::random_tensor({c, h, w}, rng), d = oracle::random_tensor({k, h, w}, rng, -4, 4);
    const RegionAssignment a = group_regions(d);
    const RegionRepr<double> rr = region_representations(r, d, a);
    const Tensor<double> ctx = context_of(r, d);
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = 0; q < n; ++q)
        if (a.labels[p] == a.labels[q])
          for (std::size_t ch = 0; ch < c; ++ch) ASSERT_EQ(ctx[ch * n + p], ctx[ch * n + q]);
    for (std::size_t cl = 0; cl < k; ++cl) {
      if (!rr.present(cl)) {
        EXPECT_TRUE(rr.vectors[cl].empty());
        continue;
      }
      double total = 0;
      for (double wt : rr.weights[cl]) {
        EXPECT_GT(wt, 0);
        total += wt;
      }
      EXPECT_NEAR(total, 1, 1e-12);
      for (std::size_t ch = 0; ch < c; ++ch) {
        double lo = 1e300, hi = -1e300;
        for (std::size_t p = 0; p < n; ++p)
          if (a.labels[p] == cl) {
            lo = std::min(lo, r[ch * n + p]);
            hi = std::max(hi, r[ch * n + p]);
          }
        EXPECT_GE(rr.vectors[cl][ch], lo - 1e-12);
        EXPECT_LE(rr.vectors[cl][ch], hi + 1e-12);
      }
    }
  }
}

TEST(SlcmProperties, PermutationEquivariance) {
  std::mt19937_64 rng(8);
  Slcm<double> m("slcm", 4, 4, 3);
  init_params<double>(m, 8);
  const std::size_t n = 12;
  const Tensor<double> r = oracle::random_tensor({4, 3, 4}, rng);
  std::vector<std::size_t> perm{3, 8, 1, 11, 0, 6, 9, 2, 5, 10, 7, 4};
  Tensor<double> rp(r.shape());
  for (std::size_t ch = 0; ch < 4; ++ch)
    for (std::size_t i = 0; i < n; ++i) rp[ch * n + i] = r[ch * n + perm[i]];
  Tape<double> tape;
  Pass<double> pass{tape, false, nullptr};
  const Tensor<double> a = m.forward(pass, tape.constant(r)).context.value();
  const Tensor<double> b = m.forward(pass, tape.constant(rp)).context.value();
  for (std::size_t ch = 0; ch < 4; ++ch)
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(b[ch * n + i], a[ch * n + perm[i]], 1e-13);
}

TEST(SlcmForward, BatchMatchesPerSample) {
  std::mt19937_64 rng(9);
  Slcm<double> m("slcm", 3, 5, 4);
  init_params<double>(m, 9);
  const Tensor<double> r = oracle::random_tensor({2, 3, 4, 4}, rng);
  Tape<double> tape;
  Pass<double> pass{tape, false, nullptr};
  const SlcmOutput<double> both = m.forward(pass, tape.constant(r));
  ASSERT_EQ(both.regions.size(), 2u);
  for (std::size_t b = 0; b < 2; ++b) {
    Tensor<double> one({3, 4, 4});
    std::copy(r.ptr() + b * 48, r.ptr() + (b + 1) * 48, one.ptr());
    const Tensor<double> single = m.forward(pass, tape.constant(one)).context.value();
    for (std::size_t i = 0; i < 48; ++i) EXPECT_EQ(both.context.value()[b * 48 + i], single[i]);
  }
}

TEST(SlcmForward, ZeroHeadGivesBiasLogits) {
  Slcm<double> m("slcm", 3, 3, 2);
  m.head.second.bias.value = Tensor<double>({2}, {-1, 2});
  Tape<double> tape;
  Pass<double> pass{tape, false, nullptr};
  const SlcmOutput<double> out = m.forward(pass, tape.constant(Tensor<double>({3, 2, 2}, 1.0)));
  EXPECT_EQ(out.distribution.shape(), (Shape{2, 2, 2}));
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(out.distribution.value()[i], -1);
    EXPECT_EQ(out.distribution.value()[4 + i], 2);
  }
  EXPECT_THROW(m.forward(pass, tape.constant(Tensor<double>({2, 2, 2}))), DimensionError);
}

}  // namespace
}  // namespace isnet
