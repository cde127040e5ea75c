#include "isnet/blocks.hpp"

#include <cmath>

#include "isnet/error.hpp"
#include "isnet/random.hpp"

namespace isnet {

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::baseline: return "baseline";
    case Variant::ilcm: return "ilcm";
    case Variant::slcm: return "slcm";
    case Variant::isnet: return "isnet";
  }
  return "?";
}

Variant parse_variant(std::string_view name) {
  if (name == "baseline") return Variant::baseline;
  if (name == "ilcm") return Variant::ilcm;
  if (name == "slcm") return Variant::slcm;
  if (name == "isnet") return Variant::isnet;
  throw ConfigError("unknown variant '" + std::string(name) + "' (expected baseline|ilcm|slcm|isnet)");
}

std::size_t ModelConfig::width(int block) const {
  if (backbone_widths[block]) return backbone_widths[block];
  if (block == 2) return channels;
  const std::size_t w = block == 0 ? channels / 4 : channels / 2;
  return w < 4 ? 4 : w;
}

void ModelConfig::validate() const {
  if (channels == 0 || classes < 2 || in_channels == 0)
    throw ConfigError("model extents must be positive and classes >= 2");
  if (classes > 255) throw ConfigError("at most 255 classes are supported (255 is the ignore label)");
  if (alpha < 0) throw ConfigError("alpha must be non-negative");
  if (dropout < 0 || dropout >= 1) throw ConfigError("dropout must lie in [0,1)");
}

namespace {

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

template <typename T>
void init_parameter(Parameter<T>& p, std::mt19937_64& rng) {
  if (ends_with(p.name, ".gamma") || ends_with(p.name, ".running_var")) {
    p.value.fill(T{1});
  } else if (ends_with(p.name, ".weight")) {
    std::size_t fan_in = 1;
    for (std::size_t i = 1; i < p.value.rank(); ++i) fan_in *= p.value.dim(i);
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] = static_cast<T>((2 * uniform01(rng) - 1) * bound);
  } else {
    p.value.fill(T{0});
  }
  p.zero_grad();
}

template <typename T>
Conv1x1<T>::Conv1x1(const std::string& name, std::size_t in, std::size_t out, bool bias)
    : weight(name + ".weight", Tensor<T>({out, in})), bias(name + ".bias", Tensor<T>({out}), true, false),
      with_bias_(bias) {}

template <typename T>
Var<T> Conv1x1<T>::forward(Pass<T>& pass, Var<T> x) {
  Var<T> w = pass.tape.parameter(weight);
  return with_bias_ ? conv1x1(x, w, pass.tape.parameter(bias)) : conv1x1(x, w);
}

template <typename T>
BatchNorm<T>::BatchNorm(const std::string& name, std::size_t channels)
    : gamma(name + ".gamma", Tensor<T>({channels}, T{1}), true, false),
      beta(name + ".beta", Tensor<T>({channels}), true, false),
      running_mean(name + ".running_mean", Tensor<T>({channels}), false, false),
      running_var(name + ".running_var", Tensor<T>({channels}, T{1}), false, false) {}

template <typename T>
Var<T> BatchNorm<T>::forward(Pass<T>& pass, Var<T> x) {
  RunningStats<T> stats;
  stats.mean = &running_mean;
  stats.var = &running_var;
  return batch_norm(x, pass.tape.parameter(gamma), pass.tape.parameter(beta), stats, pass.training);
}

template <typename T>
ConvBlock1x1<T>::ConvBlock1x1(const std::string& name, std::size_t in, std::size_t out, BlockOptions opts)
    : conv(name + ".conv", in, out, !opts.norm), opts_(opts) {
  if (opts.norm) norm = BatchNorm<T>(name + ".bn", out);
}

template <typename T>
Var<T> ConvBlock1x1<T>::forward(Pass<T>& pass, Var<T> x) {
  Var<T> y = conv.forward(pass, x);
  if (opts_.norm) y = norm.forward(pass, y);
  if (opts_.relu) y = relu(y);
  return y;
}

template <typename T>
DownBlock<T>::DownBlock(const std::string& name, std::size_t in, std::size_t out)
    : weight(name + ".conv.weight", Tensor<T>({out, in, 3, 3})), norm(name + ".bn", out) {}

template <typename T>
Var<T> DownBlock<T>::forward(Pass<T>& pass, Var<T> x) {
  return relu(norm.forward(pass, conv2d(x, pass.tape.parameter(weight), 2, 1)));
}

template <typename T>
ToyBackbone<T>::ToyBackbone(const std::string& name, const ModelConfig& config) {
  std::size_t in = config.in_channels;
  for (int i = 0; i < 3; ++i) {
    blocks[i] = DownBlock<T>(name + ".block" + std::to_string(i + 1), in, config.width(i));
    in = config.width(i);
  }
}

template <typename T>
Var<T> ToyBackbone<T>::forward(Pass<T>& pass, Var<T> image) {
  const Planes p = as_planes(image.shape(), "backbone");
  if (p.height % 8 != 0 || p.width % 8 != 0)
    throw UsageError("backbone input extents " + to_string(image.shape()) +
                     " must be multiples of 8; pad or crop the image first");
  Var<T> x = image;
  for (auto& b : blocks) x = b.forward(pass, x);
  return x;
}

template <typename T>
HeadAux<T>::HeadAux(const std::string& name, std::size_t in, std::size_t hidden, std::size_t classes)
    : first(name + ".conv1", in, hidden), second(name + ".conv2", hidden, classes) {}

template <typename T>
Var<T> HeadAux<T>::forward(Pass<T>& pass, Var<T> x) {
  return second.forward(pass, relu(first.forward(pass, x)));
}

template <typename T>
HeadMain<T>::HeadMain(const std::string& name, std::size_t in, std::size_t classes, double dropout)
    : conv(name + ".conv", in, classes), rate(dropout) {}

template <typename T>
Var<T> HeadMain<T>::forward(Pass<T>& pass, Var<T> x) {
  if (pass.training && pass.rng && rate > 0) x = dropout(x, rate, pass.rng);
  return conv.forward(pass, x);
}

#define ISNET_BLOCKS(T)                                                   \
  template void init_parameter<T>(Parameter<T>&, std::mt19937_64&);     \
  template class Conv1x1<T>;                                              \
  template class BatchNorm<T>;                                            \
  template class ConvBlock1x1<T>;                                         \
  template class DownBlock<T>;                                            \
  template class ToyBackbone<T>;                                          \
  template class HeadAux<T>;                                              \
  template class HeadMain<T>;

ISNET_BLOCKS(float)
ISNET_BLOCKS(double)

#undef ISNET_BLOCKS

}  // namespace isnet
