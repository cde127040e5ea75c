#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

#include "isnet/ops.hpp"

namespace isnet {

// Per-forward context shared by all layers.
template <typename T>
struct Pass {
  Tape<T>& tape;
  bool training = false;
  std::mt19937_64* rng = nullptr;  // dropout source; null disables dropout
};

enum class Variant { baseline, ilcm, slcm, isnet };

std::string_view to_string(Variant v);
Variant parse_variant(std::string_view name);
inline bool uses_ilcm(Variant v) { return v == Variant::ilcm || v == Variant::isnet; }
inline bool uses_slcm(Variant v) { return v == Variant::slcm || v == Variant::isnet; }

struct ModelConfig {
  std::size_t channels = 64;    // C
  std::size_t classes = 5;      // K
  std::size_t aux_hidden = 0;   // first aux-head layer width; 0 means C
  std::size_t in_channels = 3;  // image channels
  // Backbone block widths; 0 entries default to C/4, C/2, C.
  std::size_t backbone_widths[3] = {0, 0, 0};
  // When nonzero the model consumes a [feature_channels,h,w] feature map
  // through a 1x1 bottleneck block instead of running the image backbone.
  std::size_t feature_channels = 0;
  double alpha = 0.4;
  double dropout = 0.1;
  std::uint64_t seed = 0;
  Variant variant = Variant::isnet;
  bool norm = true;
  std::size_t attention_cap = 16384;

  std::size_t hidden() const { return aux_hidden ? aux_hidden : channels; }
  std::size_t width(int block) const;
  void validate() const;
};

template <typename T>
class Conv1x1 {
 public:
  Conv1x1() = default;
  Conv1x1(const std::string& name, std::size_t in, std::size_t out, bool bias = true);

  Var<T> forward(Pass<T>& pass, Var<T> x);

  std::size_t in_channels() const { return weight.value.dim(1); }
  std::size_t out_channels() const { return weight.value.dim(0); }
  bool has_bias() const { return with_bias_; }

  template <typename F>
  void visit(F&& f) {
    f(weight);
    if (with_bias_) f(bias);
  }

  Parameter<T> weight;  // [out, in]
  Parameter<T> bias;    // [out]

 private:
  bool with_bias_ = true;
};

template <typename T>
class BatchNorm {
 public:
  BatchNorm() = default;
  BatchNorm(const std::string& name, std::size_t channels);

  Var<T> forward(Pass<T>& pass, Var<T> x);

  template <typename F>
  void visit(F&& f) {
    f(gamma);
    f(beta);
    f(running_mean);
    f(running_var);
  }

  Parameter<T> gamma, beta, running_mean, running_var;
};

struct BlockOptions {
  bool norm = true;
  bool relu = true;
};

// 1x1 conv -> optional normalization -> optional ReLU. The conv carries a
// bias only when normalization is off.
template <typename T>
class ConvBlock1x1 {
 public:
  ConvBlock1x1() = default;
  ConvBlock1x1(const std::string& name, std::size_t in, std::size_t out, BlockOptions opts = {});

  Var<T> forward(Pass<T>& pass, Var<T> x);

  template <typename F>
  void visit(F&& f) {
    conv.visit(f);
    if (opts_.norm) norm.visit(f);
  }

  const BlockOptions& options() const { return opts_; }

  Conv1x1<T> conv;
  BatchNorm<T> norm;

 private:
  BlockOptions opts_;
};

// 3x3 stride-2 conv -> normalization -> ReLU.
template <typename T>
class DownBlock {
 public:
  DownBlock() = default;
  DownBlock(const std::string& name, std::size_t in, std::size_t out);

  Var<T> forward(Pass<T>& pass, Var<T> x);

  template <typename F>
  void visit(F&& f) {
    f(weight);
    norm.visit(f);
  }

  Parameter<T> weight;  // [out, in, 3, 3]
  BatchNorm<T> norm;
};

// Three stride-2 blocks: [3,H,W] -> [C,H/8,W/8].
template <typename T>
class ToyBackbone {
 public:
  ToyBackbone() = default;
  ToyBackbone(const std::string& name, const ModelConfig& config);

  Var<T> forward(Pass<T>& pass, Var<T> image);

  template <typename F>
  void visit(F&& f) {
    for (auto& b : blocks) b.visit(f);
  }

  DownBlock<T> blocks[3];
};

// Two stacked 1x1 convs with a ReLU between; C -> hidden -> K.
template <typename T>
class HeadAux {
 public:
  HeadAux() = default;
  HeadAux(const std::string& name, std::size_t in, std::size_t hidden, std::size_t classes);

  Var<T> forward(Pass<T>& pass, Var<T> x);

  template <typename F>
  void visit(F&& f) {
    first.visit(f);
    second.visit(f);
  }

  Conv1x1<T> first, second;
};

// Dropout followed by a 1x1 conv to K classes.
template <typename T>
class HeadMain {
 public:
  HeadMain() = default;
  HeadMain(const std::string& name, std::size_t in, std::size_t classes, double dropout);

  Var<T> forward(Pass<T>& pass, Var<T> x);

  template <typename F>
  void visit(F&& f) {
    conv.visit(f);
  }

  Conv1x1<T> conv;
  double rate = 0.1;
};

template <typename T>
Var<T> upsample8x(Var<T> x) {
  return upsample_bilinear(x, 8);
}

// Fills one parameter from the fan-in scaled uniform law U(-b, b),
// b = sqrt(6 / fan_in), for weights; zeros biases and shifts; ones scales.
template <typename T>
void init_parameter(Parameter<T>& p, std::mt19937_64& rng);

// Deterministic initialization of every parameter a module visits.
template <typename T, typename Module>
void init_params(Module& module, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  module.visit([&](Parameter<T>& p) { init_parameter(p, rng); });
}

}  // namespace isnet
