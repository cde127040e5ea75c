#include "isnet/profiler.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>

#include "isnet/error.hpp"
#include "isnet/fusion.hpp"
#include "isnet/random.hpp"

namespace isnet {

std::string_view to_string(CostGroup g) {
  switch (g) {
    case CostGroup::ilcm: return "ilcm";
    case CostGroup::slcm: return "slcm";
    default: return "shared";
  }
}

std::uint64_t CostReport::params() const {
  std::uint64_t n = 0;
  for (const auto& l : layers) n += l.params;
  return n;
}

std::uint64_t CostReport::flops() const {
  std::uint64_t n = 0;
  for (const auto& l : layers) n += l.flops;
  return n;
}

std::uint64_t CostReport::params(CostGroup g) const {
  std::uint64_t n = 0;
  for (const auto& l : layers)
    if (l.group == g) n += l.params;
  return n;
}

std::uint64_t CostReport::flops(CostGroup g) const {
  std::uint64_t n = 0;
  for (const auto& l : layers)
    if (l.group == g) n += l.flops;
  return n;
}

CostReport count_flops(const ModelConfig& config, const Shape& input) {
  config.validate();
  const Planes p = as_planes(input, "count_flops");
  const bool features = config.feature_channels != 0;
  const std::size_t want = features ? config.feature_channels : config.in_channels;
  if (p.channels != want)
    throw DimensionError("count_flops: input " + to_string(input) + " has " + std::to_string(p.channels) +
                         " channels, the graph expects " + std::to_string(want));
  if (!features && (p.height % 8 || p.width % 8))
    throw UsageError("count_flops: image extents must be multiples of 8");

  CostReport r;
  r.probe = input;
  const std::uint64_t b = p.batch, c = config.channels, k = config.classes, hid = config.hidden();
  const bool norm = config.norm;
  const std::uint64_t bn_params = norm ? 2 * c : 0;
  auto add = [&](std::string name, CostGroup g, std::uint64_t params, std::uint64_t fl) {
    r.layers.push_back({std::move(name), g, params, fl});
  };
  // conv1x1 (+ normalization) + ReLU producing c channels.
  auto block = [&](const std::string& name, CostGroup g, std::uint64_t in, std::uint64_t positions) {
    const std::uint64_t out = c * positions;
    add(name, g, in * c + (norm ? bn_params : c),
        flops::conv1x1(in, c, positions, !norm) + (norm ? flops::batch_norm(out) : 0) + flops::relu(out));
  };

  std::uint64_t n;
  if (features) {
    n = static_cast<std::uint64_t>(p.height) * p.width;
    block("bottleneck", CostGroup::shared, p.channels, b * n);
  } else {
    std::uint64_t in = p.channels, h = p.height, w = p.width;
    for (int i = 0; i < 3; ++i) {
      h /= 2;
      w /= 2;
      const std::uint64_t out = config.width(i), pos = b * h * w;
      add("backbone.block" + std::to_string(i + 1), CostGroup::shared, in * out * 9 + 2 * out,
          flops::conv2d(in, out, 3, pos) + flops::batch_norm(out * pos) + flops::relu(out * pos));
      in = out;
    }
    n = h * w;
  }
  const std::uint64_t bn = b * n;

  auto attention = [&](const std::string& prefix, CostGroup g) {
    add(prefix + ".similarity", g, 0,
        b * flops::matmul(n, c, n) + flops::elementwise(b * n * n) + flops::softmax(b * n * n));
    add(prefix + ".attend", g, 0, b * flops::matmul(c, n, n));
  };

  std::uint64_t contexts = 0;
  if (uses_ilcm(config.variant)) {
    ++contexts;
    add("ilcm.pool", CostGroup::ilcm, 0, flops::mean(c * bn));
    block("ilcm.fuse", CostGroup::ilcm, 2 * c, bn);
    attention("ilcm", CostGroup::ilcm);
  }
  if (uses_slcm(config.variant)) {
    ++contexts;
    add("slcm.head", CostGroup::slcm, c * hid + hid + hid * k + k,
        flops::conv1x1(c, hid, bn, true) + flops::relu(hid * bn) + flops::conv1x1(hid, k, bn, true));
    add("slcm.regions", CostGroup::slcm, 0, flops::elementwise(k * bn));
    add("slcm.pooling", CostGroup::slcm, 0, flops::softmax(bn) + 2 * c * bn);
    attention("slcm", CostGroup::slcm);
  }
  if (contexts) {
    // The transform's input blocks are attributed to the context they read.
    if (uses_ilcm(config.variant))
      add("fusion.transform[il]", CostGroup::ilcm, c * c, flops::conv1x1(c, c, bn, false));
    if (uses_slcm(config.variant))
      add("fusion.transform[sl]", CostGroup::slcm, c * c, flops::conv1x1(c, c, bn, false));
    add("fusion.transform[r]", CostGroup::shared, c * c + (norm ? bn_params : c),
        flops::conv1x1(c, c, bn, !norm) + (norm ? flops::batch_norm(c * bn) : 0) + flops::relu(c * bn));
  }
  add("fusion.head", CostGroup::shared, c * k + k, flops::conv1x1(c, k, bn, true));
  return r;
}

double timing_probe(const ModelConfig& config, const Shape& input, std::size_t repetitions, std::size_t warmup) {
  if (repetitions == 0) throw UsageError("timing_probe needs at least one repetition");
  IsNet<float> model(config);
  std::mt19937_64 rng = make_rng(config.seed, 0x7141);
  Tensor<float> x(input);
  for (float& v : x.data()) v = static_cast<float>(uniform01(rng) * 2 - 1);
  std::vector<double> times;
  for (std::size_t i = 0; i < warmup + repetitions; ++i) {
    Tape<float> tape;
    Pass<float> pass{tape, false, nullptr};
    const auto t0 = std::chrono::steady_clock::now();
    model.forward(pass, tape.constant(x));
    const auto t1 = std::chrono::steady_clock::now();
    if (i >= warmup) times.push_back(std::chrono::duration<double>(t1 - t0).count());
  }
  std::sort(times.begin(), times.end());
  const std::size_t m = times.size();
  return m % 2 ? times[m / 2] : 0.5 * (times[m / 2 - 1] + times[m / 2]);
}

ModelConfig profile_config() {
  ModelConfig c;
  c.channels = 512;
  c.classes = 150;
  c.feature_channels = 2048;
  c.variant = Variant::isnet;
  return c;
}

namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string row(std::string_view name, double params_m, double flops_g) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-24.*s %12.4f %14.4f\n", static_cast<int>(name.size()), name.data(), params_m,
                flops_g);
  return buf;
}

}  // namespace

std::string format_profile(const CostReport& r) {
  std::string out = "probe " + to_string(r.probe) + ", FLOP convention v" + std::to_string(flops::kConventionVersion) +
                    "\n";
  char head[128];
  std::snprintf(head, sizeof head, "%-24s %12s %14s\n", "module", "params (M)", "FLOPs (G)");
  out += head;
  for (const auto& l : r.layers) out += row(l.name, l.params / 1e6, l.flops / 1e9);
  out += "\n";
  for (CostGroup g : {CostGroup::shared, CostGroup::ilcm, CostGroup::slcm})
    out += row(std::string("[") + std::string(to_string(g)) + "]", r.params(g) / 1e6, r.flops(g) / 1e9);
  out += row("total", r.params() / 1e6, r.flops() / 1e9);
  if (r.seconds) out += "measured forward: " + fmt("%.6f", *r.seconds) + " s\n";
  out += "\nreference (published, not recomputed)\n";
  for (const auto& ref : kReferenceRows) out += row(ref.name, ref.params_m, ref.flops_g);
  return out;
}

std::string format_profile_tsv(const CostReport& r) {
  std::string out = "module\tgroup\tparams\tflops\n";
  for (const auto& l : r.layers)
    out += l.name + "\t" + std::string(to_string(l.group)) + "\t" + std::to_string(l.params) + "\t" +
           std::to_string(l.flops) + "\n";
  out += "total\tall\t" + std::to_string(r.params()) + "\t" + std::to_string(r.flops()) + "\n";
  for (const auto& ref : kReferenceRows)
    out += "ref:" + std::string(ref.name) + "\treference\t" + fmt("%.0f", ref.params_m * 1e6) + "\t" +
           fmt("%.0f", ref.flops_g * 1e9) + "\n";
  return out;
}

}  // namespace isnet
