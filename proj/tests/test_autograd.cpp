#include <gtest/gtest.h>

#include "isnet/error.hpp"
#include "isnet/grad_check.hpp"
#include "isnet/ops.hpp"
#include "oracles.hpp"

namespace isnet {
namespace {

TEST(Backward, SumGivesOnes) {
  Tape<double> tape;
  const Var<double> x = tape.leaf(Tensor<double>({2, 3}, 4.0));
  tape.backward(sum(x));
  const Tensor<double> g = x.grad();
  for (double v : g.data()) EXPECT_EQ(v, 1.0);
}

TEST(Backward, SquareAtThree) {
  Tape<double> tape;
  const Var<double> x = tape.leaf(Tensor<double>::scalar(3));
  tape.backward(mul(x, x));
  EXPECT_EQ(x.grad().item(), 6.0);
}

TEST(Backward, NonScalarLossIsUsageError) {
  Tape<double> tape;
  const Var<double> x = tape.leaf(Tensor<double>({2}));
  EXPECT_THROW(tape.backward(x), UsageError);
}

TEST(Backward, VisitsNodesInReverseOrder) {
  Tape<double> tape;
  const Var<double> x = tape.leaf(Tensor<double>({3}, 1.0));
  const Var<double> a = relu(x);
  const Var<double> b = scale(a, 2.0);
  const Var<double> c = add(b, a);
  const Var<double> l = sum(c);
  tape.backward(l);
  const std::vector<std::size_t> want{l.id(), c.id(), b.id(), a.id()};
  EXPECT_EQ(tape.backward_trace(), want);
  const Tensor<double> g = x.grad();
  for (double v : g.data()) EXPECT_EQ(v, 3.0);
}

TEST(Backward, ParametersAccumulateIntoGrad) {
  Parameter<double> p("w", Tensor<double>({2}, 1.5));
  for (int i = 0; i < 2; ++i) {
    Tape<double> tape;
    tape.backward(sum(mul(tape.parameter(p), tape.constant(Tensor<double>({2}, {2, 3})))));
  }
  EXPECT_EQ(p.grad.storage(), (std::vector<double>{4, 6}));
}

TEST(GradCheck, SumOfSquares) {
  std::mt19937_64 rng(1);
  const auto rep = grad_check([](Tape<double>&, const std::vector<Var<double>>& in) { return sum(mul(in[0], in[0])); },
                              {oracle::random_tensor({3, 4}, rng)});
  EXPECT_LE(rep.max_rel_error, 1e-9);
  EXPECT_EQ(rep.components, 12u);
}

TEST(GradCheck, SoftmaxCrossEntropy) {
  std::mt19937_64 rng(2);
  std::vector<std::uint8_t> labels(12);
  for (auto& l : labels) l = static_cast<std::uint8_t>(uniform_index(rng, 4));
  const auto rep = grad_check(
      [&](Tape<double>&, const std::vector<Var<double>>& in) { return cross_entropy(in[0], labels); },
      {oracle::random_tensor({4, 3, 4}, rng, -3, 3)});
  EXPECT_LE(rep.max_rel_error, 1e-6);
}

TEST(GradCheck, DetectsAWrongGradient) {
  // A deliberately broken op: forward x^2, backward claims 3x.
  std::mt19937_64 rng(3);
  const auto rep = grad_check(
      [](Tape<double>& tape, const std::vector<Var<double>>& in) {
        Var<double> x = in[0];
        Tensor<double> y = x.value();
        for (double& v : y.data()) v *= v;
        Var<double> out = tape.record(std::move(y), {x}, [x](const Tensor<double>& g) {
          Tensor<double>& gx = x.tape().grad_slot(x);
          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += 3 * x.value()[i] * g[i];
        });
        return sum(out);
      },
      {oracle::random_tensor({5}, rng, 0.5, 1.0)});
  EXPECT_GT(rep.max_rel_error, 0.1);
}

// Every differentiable primitive composed into one scalar.
TEST(GradCheck, PrimitiveComposition) {
  std::mt19937_64 rng(4);
  Parameter<double> gamma("bn.gamma", oracle::random_tensor({3}, rng, 0.5, 1.5));
  Parameter<double> beta("bn.beta", oracle::random_tensor({3}, rng));
  Parameter<double> rm("bn.running_mean", Tensor<double>({3}), false), rv("bn.running_var", Tensor<double>({3}, 1.0), false);
  RunningStats<double> stats{&rm, &rv};
  const Tensor<double> w3 = oracle::random_tensor({3, 2, 3, 3}, rng), wm = oracle::random_tensor({2, 3, 3}, rng);
  const auto rep = grad_check(
      [&](Tape<double>& tape, const std::vector<Var<double>>& in) {
        Var<double> x = conv2d(in[0], in[1], 2, 1);  // [2,3,4,4]
        x = batch_norm(x, tape.parameter(gamma), tape.parameter(beta), stats, true);
        x = relu(add(x, expand_spatial(mean_spatial(x), 4, 4)));
        Var<double> flat = reshape(x, {2, 3, 16});
        Var<double> m = matmul(softmax_last(flat), permute(flat, {0, 2, 1}));  // [2,3,3]
        Var<double> u = upsample_bilinear(slice_channels(x, 1, 2), 2);
        Var<double> c = concat_channels<double>({u, scale(u, -0.5)});
        return add(sum(mul(m, tape.constant(wm))), sum(mul(c, c)));
      },
      {oracle::random_tensor({2, 2, 8, 8}, rng), w3}, {&gamma, &beta}, 1e-5, GradCheckFloor{1e-12, 1e-3});
  EXPECT_LE(rep.max_rel_error, 1e-5) << rep.worst;
}

}  // namespace
}  // namespace isnet
