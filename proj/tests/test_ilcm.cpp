#include <gtest/gtest.h>

#include "isnet/error.hpp"
#include "isnet/ilcm.hpp"
#include "oracles.hpp"

namespace isnet {
namespace {

constexpr BlockOptions kLinear{false, false};

Tensor<double> forward(Ilcm<double>& m, const Tensor<double>& r, bool training = false) {
  Tape<double> tape;
  Pass<double> pass{tape, training, nullptr};
  return m.forward(pass, tape.constant(r)).value();
}

// [I_C | 0] or [0 | I_C] over the (G, R) concatenation.
void set_selector(Ilcm<double>& m, std::size_t c, bool pick_global) {
  Tensor<double> w({c, 2 * c});
  for (std::size_t i = 0; i < c; ++i) w.at({i, pick_global ? i : c + i}) = 1;
  m.fuse.conv.weight.value = w;
  m.fuse.conv.bias.value.fill(0);
}

TEST(GlobalContext, SummationOracle) {
  std::mt19937_64 rng(1);
  const Tensor<double> r = oracle::random_tensor({4, 3, 3}, rng);
  Tape<double> tape;
  const Tensor<double> g = global_context(tape.constant(r)).value();
  ASSERT_EQ(g.shape(), (Shape{4, 1, 1}));
  for (std::size_t c = 0; c < 4; ++c) {
    long double s = 0;
    for (std::size_t i = 0; i < 9; ++i) s += r[c * 9 + i];
    EXPECT_NEAR(g[c], static_cast<double>(s / 9), 1e-10);
  }
  EXPECT_EQ(global_context(tape.constant(Tensor<double>({2, 2, 2}))).value(), Tensor<double>({2, 1, 1}));
}

TEST(Ilcm, SelectorWeights) {
  std::mt19937_64 rng(2);
  const Tensor<double> r = oracle::random_tensor({3, 2, 4}, rng);
  Ilcm<double> m("ilcm", 3, kLinear);
  set_selector(m, 3, false);
  EXPECT_EQ(forward(m, r), r);
  set_selector(m, 3, true);
  const Tensor<double> g = forward(m, r);
  for (std::size_t c = 0; c < 3; ++c) {
    double mean = 0;
    for (std::size_t i = 0; i < 8; ++i) mean += r[c * 8 + i];
    mean /= 8;
    for (std::size_t i = 0; i < 8; ++i) {
      EXPECT_NEAR(g[c * 8 + i], mean, 1e-15);
      EXPECT_EQ(g[c * 8 + i], g[c * 8]);
    }
  }
}

TEST(Ilcm, PerPositionOracle) {
  std::mt19937_64 rng(3);
  const std::size_t c = 8, n = 4;
  Ilcm<double> m("ilcm", c, BlockOptions{false, true});
  init_params<double>(m, 3);
  m.fuse.conv.bias.value = oracle::random_tensor({c}, rng);
  const Tensor<double> r = oracle::random_tensor({c, 2, 2}, rng);
  const Tensor<double> got = forward(m, r);
  std::vector<double> mean(c, 0);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t p = 0; p < n; ++p) mean[ch] += r[ch * n + p] / n;
  const auto& w = m.fuse.conv.weight.value;
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t o = 0; o < c; ++o) {
      double acc = m.fuse.conv.bias.value[o];
      for (std::size_t i = 0; i < c; ++i) acc += w.at({o, i}) * mean[i] + w.at({o, c + i}) * r[i * n + p];
      EXPECT_NEAR(got[o * n + p], std::max(acc, 0.0), 1e-6);
    }
}

TEST(Ilcm, PermutationEquivariance) {
  std::mt19937_64 rng(4);
  const std::size_t c = 5, n = 12;
  Ilcm<double> m("ilcm", c);
  init_params<double>(m, 4);
  const Tensor<double> r = oracle::random_tensor({c, 3, 4}, rng);
  std::vector<std::size_t> perm{7, 2, 11, 0, 5, 9, 1, 4, 10, 3, 8, 6};
  Tensor<double> rp(r.shape());
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < n; ++i) rp[ch * n + i] = r[ch * n + perm[i]];
  // Inference mode: running statistics make the block per-position.
  const Tensor<double> a = forward(m, r), b = forward(m, rp);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(b[ch * n + i], a[ch * n + perm[i]], 1e-14);
}

TEST(Ilcm, ConstantInputGivesConstantOutput) {
  Ilcm<double> m("ilcm", 4);
  init_params<double>(m, 5);
  Tensor<double> r({4, 3, 3});
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t i = 0; i < 9; ++i) r[c * 9 + i] = 0.25 * c - 0.3;
  const Tensor<double> y = forward(m, r);
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t i = 0; i < 9; ++i) EXPECT_EQ(y[c * 9 + i], y[c * 9]);
}

TEST(Ilcm, GradientReachesBothPaths) {
  // With the R half of the weights zeroed, every gradient to R flows
  // through the pooled context; with the G half zeroed, only directly.
  std::mt19937_64 rng(6);
  const Tensor<double> r = oracle::random_tensor({2, 2, 2}, rng);
  for (bool global : {true, false}) {
    Ilcm<double> m("ilcm", 2, kLinear);
    set_selector(m, 2, global);
    Tape<double> tape;
    Pass<double> pass{tape, false, nullptr};
    const Var<double> x = tape.leaf(r);
    const Tensor<double> w({2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
    tape.backward(sum(mul(m.forward(pass, x), tape.constant(w))));
    const Tensor<double> g = x.grad();
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t i = 0; i < 4; ++i) {
        const double want = global ? (w[c * 4] + w[c * 4 + 1] + w[c * 4 + 2] + w[c * 4 + 3]) / 4 : w[c * 4 + i];
        EXPECT_NEAR(g[c * 4 + i], want, 1e-15);
      }
  }
}

TEST(Ilcm, ChannelMismatch) {
  Ilcm<double> m("ilcm", 4);
  EXPECT_THROW(forward(m, Tensor<double>({3, 2, 2})), DimensionError);
  EXPECT_EQ(m.fuse.conv.in_channels(), 8u);
}

}  // namespace
}  // namespace isnet
