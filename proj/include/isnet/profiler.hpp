#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "isnet/blocks.hpp"

namespace isnet {

// FLOP convention (version 1). Multiplies and adds count separately.
namespace flops {
inline constexpr int kConventionVersion = 1;
// [m,k] x [k,n]
inline std::uint64_t matmul(std::uint64_t m, std::uint64_t k, std::uint64_t n) { return 2 * m * k * n; }
inline std::uint64_t conv1x1(std::uint64_t in, std::uint64_t out, std::uint64_t positions, bool bias) {
  return 2 * in * out * positions + (bias ? out * positions : 0);
}
inline std::uint64_t conv2d(std::uint64_t in, std::uint64_t out, std::uint64_t kernel, std::uint64_t positions) {
  return 2 * in * kernel * kernel * out * positions;
}
inline std::uint64_t softmax(std::uint64_t elements) { return 5 * elements; }
inline std::uint64_t elementwise(std::uint64_t elements) { return elements; }
inline std::uint64_t mean(std::uint64_t elements) { return elements; }
// Inference-time normalization: one multiply and one add per element.
inline std::uint64_t batch_norm(std::uint64_t elements) { return 2 * elements; }
inline std::uint64_t relu(std::uint64_t elements) { return elements; }
}  // namespace flops

// Which variant-specific addition a cost belongs to.
enum class CostGroup { shared, ilcm, slcm };
std::string_view to_string(CostGroup g);

struct LayerCost {
  std::string name;
  CostGroup group = CostGroup::shared;
  std::uint64_t params = 0;
  std::uint64_t flops = 0;
};

struct CostReport {
  Shape probe;
  std::vector<LayerCost> layers;
  std::optional<double> seconds;  // measured median, when a timing probe ran

  std::uint64_t params() const;
  std::uint64_t flops() const;
  std::uint64_t params(CostGroup g) const;
  std::uint64_t flops(CostGroup g) const;
};

// Symbolic traversal of the network described by `config` on `input`
// ([B,C,H,W] or [C,H,W]; a feature map when feature_channels is set, an
// image otherwise). No tensor math runs. DimensionError/UsageError when the
// shape does not fit the graph.
CostReport count_flops(const ModelConfig& config, const Shape& input);

// Exact trainable element count of any module exposing visit().
template <typename T, typename Module>
std::uint64_t count_params(Module& module) {
  std::uint64_t n = 0;
  module.visit([&](Parameter<T>& p) {
    if (p.trainable) n += p.value.size();
  });
  return n;
}

// Median wall time in seconds of `repetitions` inference forwards after
// `warmup` unmeasured ones, on random input of the given shape.
double timing_probe(const ModelConfig& config, const Shape& input, std::size_t repetitions, std::size_t warmup = 1);

// The configuration used for the complexity comparison: 2048-channel
// features reduced to C = 512 by a 1x1 bottleneck, K = 150.
ModelConfig profile_config();
inline const Shape kProfileProbe{1, 2048, 128, 128};

struct ReferenceRow {
  std::string_view name;
  double params_m;
  double flops_g;
};

// Published complexity figures for context heads at the probe shape.
inline constexpr ReferenceRow kReferenceRows[] = {
    {"ASPP", 42.21, 674.47},   {"PPM", 23.07, 309.45},  {"CCNet", 23.92, 397.38}, {"DANet", 23.92, 392.02},
    {"ANN", 20.32, 335.24},    {"DNL", 24.12, 395.25},  {"APCNet", 30.46, 413.12}, {"OCRNet", 14.82, 237.45},
    {"ILCM", 10.36, 169.77},   {"SLCM", 10.10, 165.47}, {"ILCM+SLCM", 11.02, 180.60},
};

// Smallest competitor (excluding the ILCM/SLCM rows).
inline constexpr double kSmallestCompetitorParamsM = 14.82;
inline constexpr double kSmallestCompetitorFlopsG = 237.45;

// Plain-text table of the report with the reference rows appended.
std::string format_profile(const CostReport& report);
// Tab-separated: module, params, flops rows then totals and reference rows.
std::string format_profile_tsv(const CostReport& report);

}  // namespace isnet
