#include "isnet/gradcheck_suite.hpp"

#include <algorithm>
#include <limits>

#include "isnet/error.hpp"
#include "isnet/fusion.hpp"
#include "isnet/loss.hpp"
#include "isnet/random.hpp"

namespace isnet {

namespace {

constexpr double kEps = 1e-5;
constexpr double kTolerance = 1e-5;
constexpr double kMargin = 10 * kEps;
// Components smaller than 1e-3 of the largest gradient in a check are held to
// an absolute bound of kTolerance * 1e-3 * largest.
constexpr GradCheckFloor kFloor{1e-12, 1e-3};
constexpr std::size_t kMaxAttempts = 64;

Tensor<double> random_tensor(const Shape& shape, std::mt19937_64& rng, double scale = 1.0) {
  Tensor<double> t(shape);
  for (double& v : t.data()) v = scale * (2 * uniform01(rng) - 1);
  return t;
}

template <typename Module>
std::vector<Parameter<double>*> trainable_of(Module& m) {
  std::vector<Parameter<double>*> out;
  m.visit([&](Parameter<double>& p) {
    if (p.trainable) out.push_back(&p);
  });
  return out;
}

// Generic probe points: zero-initialized offsets leave dead-ReLU positions
// with exactly tied logits, so biases and normalization affine terms are
// drawn at random too.
template <typename Module>
void randomize_offsets(Module& m, std::uint64_t seed) {
  std::mt19937_64 rng = make_rng(seed, 0x0FF5E7);
  m.visit([&](Parameter<double>& p) {
    if (!p.trainable) return;
    const bool scale = p.name.ends_with(".gamma");
    if (!scale && !p.name.ends_with(".bias") && !p.name.ends_with(".beta")) return;
    for (double& v : p.value.data()) v = scale ? 0.5 + uniform01(rng) : uniform01(rng) - 0.5;
  });
}

// Scalar probe sum(y * w) with a fixed random weighting.
Var<double> weighted_sum(Var<double> y, const Tensor<double>& w) { return sum(mul(y, y.tape().constant(w))); }

GradCheckCase make_case(std::string module, std::string name, GradCheckReport r, std::size_t attempts = 1,
                        double margin = 0) {
  GradCheckCase c;
  c.module = std::move(module);
  c.name = std::move(name);
  c.report = std::move(r);
  c.tolerance = kTolerance;
  c.attempts = attempts;
  c.margin = margin;
  return c;
}

void ilcm_cases(std::uint64_t seed, std::vector<GradCheckCase>& out) {
  std::mt19937_64 rng = make_rng(seed, 0x11C);
  Ilcm<double> m("ilcm", 8);
  init_params<double>(m, seed);
  randomize_offsets(m, seed);
  // Batch 2: with a single sample, batch statistics cancel the spatially
  // constant global-context block exactly and its weights get no gradient.
  const Tensor<double> r = random_tensor({2, 8, 8, 8}, rng);
  const Tensor<double> w = random_tensor({2, 8, 8, 8}, rng);
  const auto rep = grad_check(
      [&](Tape<double>& tape, const std::vector<Var<double>>& in) {
        Pass<double> pass{tape, true, nullptr};
        return weighted_sum(m.forward(pass, in[0]), w);
      },
      {r}, trainable_of(m), kEps, kFloor);
  out.push_back(make_case("ilcm", "ilcm_forward B=2 C=8 8x8", rep));
}

void slcm_cases(std::uint64_t seed, std::vector<GradCheckCase>& out) {
  Slcm<double> m("slcm", 8, 8, 3);
  init_params<double>(m, seed);
  randomize_offsets(m, seed);
  // Draw instances until every position's argmax leads by more than 10 eps.
  for (std::size_t attempt = 1; attempt <= kMaxAttempts; ++attempt) {
    std::mt19937_64 rng = make_rng(seed, 0x51C, attempt);
    const Tensor<double> r = random_tensor({8, 16, 16}, rng);
    std::vector<RegionAssignment> regions;
    double margin;
    {
      Tape<double> tape;
      Pass<double> pass{tape, true, nullptr};
      const Var<double> d = m.predict_distribution(pass, tape.constant(r));
      margin = min_argmax_margin(d.value());
      if (margin <= kMargin) continue;
      regions = group_regions_batch(d.value());
    }
    const Tensor<double> wc = random_tensor({8, 16, 16}, rng);
    const Tensor<double> wd = random_tensor({3, 16, 16}, rng);
    const auto rep = grad_check(
        [&](Tape<double>& tape, const std::vector<Var<double>>& in) {
          Pass<double> pass{tape, true, nullptr};
          SlcmOutput<double> s = m.forward(pass, in[0], &regions);
          return add(weighted_sum(s.context, wc), weighted_sum(s.distribution, wd));
        },
        {r}, trainable_of(m), kEps, kFloor);
    out.push_back(make_case("slcm", "slcm_forward C=8 K=3 16x16", rep, attempt, margin));
    return;
  }
  throw InternalError("no slcm probe point with a sufficient argmax margin");
}

void fusion_cases(std::uint64_t seed, std::vector<GradCheckCase>& out) {
  {
    std::mt19937_64 rng = make_rng(seed, 0xF51);
    const Tensor<double> r = random_tensor({8, 8, 8}, rng), ctx = random_tensor({8, 8, 8}, rng);
    const Tensor<double> w = random_tensor({8, 8, 8}, rng);
    const auto rep = grad_check(
        [&](Tape<double>&, const std::vector<Var<double>>& in) {
          return weighted_sum(attend(similarity(in[0], in[1]), in[1]), w);
        },
        {r, ctx}, {}, kEps, kFloor);
    out.push_back(make_case("fusion", "similarity+attend C=8 8x8", rep));
  }
  {
    std::mt19937_64 rng = make_rng(seed, 0xF52);
    FusionHead<double> head("fusion", 8, 3, 2, 0.1);
    init_params<double>(head, seed);
    randomize_offsets(head, seed);
    const Tensor<double> r = random_tensor({8, 4, 4}, rng), il = random_tensor({8, 4, 4}, rng),
                         sl = random_tensor({8, 4, 4}, rng);
    const Tensor<double> w = random_tensor({3, 32, 32}, rng);
    const auto rep = grad_check(
        [&](Tape<double>& tape, const std::vector<Var<double>>& in) {
          Pass<double> pass{tape, true, nullptr};
          return weighted_sum(head.classify(pass, head.augment(pass, in[0], in[1], in[2])), w);
        },
        {r, il, sl}, trainable_of(head), kEps, kFloor);
    out.push_back(make_case("fusion", "augment+classify C=8 K=3 4x4", rep));
  }
  {
    ModelConfig cfg;
    cfg.channels = 8;
    cfg.classes = 3;
    cfg.seed = seed;
    IsNet<double> model(cfg);
    randomize_offsets(model, seed);
    for (std::size_t attempt = 1; attempt <= kMaxAttempts; ++attempt) {
      std::mt19937_64 rng = make_rng(seed, 0xF53, attempt);
      const Tensor<double> img = random_tensor({3, 16, 16}, rng);
      GroundTruth gt;
      gt.height = gt.width = 16;
      for (std::size_t i = 0; i < 256; ++i) gt.labels.push_back(static_cast<std::uint8_t>(uniform_index(rng, 3)));
      std::vector<RegionAssignment> regions;
      double margin;
      {
        Tape<double> tape;
        Pass<double> pass{tape, true, nullptr};
        const ForwardResult<double> f = model.forward(pass, tape.constant(img));
        margin = min_argmax_margin(f.distribution.value());
        if (margin <= kMargin) continue;
        regions = f.regions;
      }
      const auto rep = grad_check(
          [&](Tape<double>& tape, const std::vector<Var<double>>& in) {
            Pass<double> pass{tape, true, nullptr};
            ForwardResult<double> f = model.forward(pass, in[0], &regions);
            return total_loss(loss_D(f.distribution, gt), loss_O(f.output, gt), cfg.alpha);
          },
          {img}, model.trainable(), kEps, kFloor);
      out.push_back(make_case("fusion", "isnet_forward+loss C=8 K=3 16x16", rep, attempt, margin));
      return;
    }
    throw InternalError("no isnet probe point with a sufficient argmax margin");
  }
}

void loss_cases(std::uint64_t seed, std::vector<GradCheckCase>& out) {
  std::mt19937_64 rng = make_rng(seed, 0x1055);
  auto labels = [&](std::size_t n, std::size_t k) {
    GroundTruth gt;
    for (std::size_t i = 0; i < n; ++i)
      gt.labels.push_back(uniform01(rng) < 0.1 ? kIgnoreLabel : static_cast<std::uint8_t>(uniform_index(rng, k)));
    return gt;
  };
  {
    GroundTruth gt = labels(64, 3);
    gt.height = gt.width = 8;
    const Tensor<double> o = random_tensor({3, 8, 8}, rng, 3.0);
    const auto rep = grad_check([&](Tape<double>&, const std::vector<Var<double>>& in) { return loss_O(in[0], gt); },
                                {o}, {}, kEps, kFloor);
    out.push_back(make_case("loss", "loss_O K=3 8x8", rep));
  }
  {
    GroundTruth gt = labels(256, 3);
    gt.height = gt.width = 16;
    const Tensor<double> d = random_tensor({3, 2, 2}, rng, 3.0);
    const auto rep = grad_check([&](Tape<double>&, const std::vector<Var<double>>& in) { return loss_D(in[0], gt); },
                                {d}, {}, kEps, kFloor);
    out.push_back(make_case("loss", "loss_D K=3 2x2->16x16", rep));
  }
  {
    // Shared upstream features feed both heads.
    GroundTruth gt = labels(256, 3);
    gt.height = gt.width = 16;
    const Tensor<double> x = random_tensor({4, 2, 2}, rng), w1 = random_tensor({3, 4}, rng),
                         w2 = random_tensor({3, 4}, rng);
    const auto rep = grad_check(
        [&](Tape<double>&, const std::vector<Var<double>>& in) {
          const Var<double> ld = loss_D(conv1x1(in[0], in[1]), gt);
          const Var<double> lo = loss_O(upsample8x(conv1x1(in[0], in[2])), gt);
          return total_loss(ld, lo, 0.4);
        },
        {x, w1, w2}, {}, kEps, kFloor);
    out.push_back(make_case("loss", "total_loss alpha=0.4 shared input", rep));
  }
}

}  // namespace

double min_argmax_margin(const Tensor<double>& logits) {
  const Planes p = as_planes(logits.shape(), "min_argmax_margin");
  double margin = std::numeric_limits<double>::infinity();
  for (std::size_t b = 0; b < p.batch; ++b)
    for (std::size_t i = 0; i < p.area(); ++i) {
      double first = -std::numeric_limits<double>::infinity(), second = first;
      for (std::size_t c = 0; c < p.channels; ++c) {
        const double v = logits[b * p.per_sample() + c * p.area() + i];
        if (v > first) {
          second = first;
          first = v;
        } else if (v > second) {
          second = v;
        }
      }
      margin = std::min(margin, first - second);
    }
  return margin;
}

std::vector<GradCheckCase> run_gradcheck_suite(std::string_view module, std::uint64_t seed) {
  const bool all = module == "all";
  if (!all && module != "ilcm" && module != "slcm" && module != "fusion" && module != "loss")
    throw UsageError("unknown gradcheck module '" + std::string(module) + "' (all, ilcm, slcm, fusion, loss)");
  std::vector<GradCheckCase> out;
  if (all || module == "ilcm") ilcm_cases(seed, out);
  if (all || module == "slcm") slcm_cases(seed, out);
  if (all || module == "fusion") fusion_cases(seed, out);
  if (all || module == "loss") loss_cases(seed, out);
  return out;
}

}  // namespace isnet
