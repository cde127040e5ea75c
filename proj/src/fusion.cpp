#include "isnet/fusion.hpp"

#include <cmath>

#include "isnet/error.hpp"

namespace isnet {

template <typename T>
Var<T> similarity(Var<T> r, Var<T> ctx, std::size_t cap) {
  if (r.shape() != ctx.shape())
    throw DimensionError("similarity: shape mismatch " + to_string(r.shape()) + " vs " + to_string(ctx.shape()));
  const Planes p = as_planes(r.shape(), "similarity");
  const std::size_t n = p.area();
  if (n > cap)
    throw UsageError("similarity over " + std::to_string(n) + " positions exceeds the attention cap of " +
                     std::to_string(cap) + " (an N x N matrix would be allocated)");
  const Shape flat{p.batch, p.channels, n};
  Var<T> scores = matmul(reshape(r, flat), reshape(ctx, flat), true, false);
  Var<T> s = softmax_last(scale(scores, static_cast<T>(1.0 / std::sqrt(static_cast<double>(p.channels)))));
  return r.shape().size() == 3 ? reshape(s, Shape{n, n}) : s;
}

template <typename T>
Var<T> attend(Var<T> s, Var<T> ctx) {
  const Planes p = as_planes(ctx.shape(), "attend");
  const std::size_t n = p.area();
  const Shape expect = ctx.shape().size() == 3 ? Shape{n, n} : Shape{p.batch, n, n};
  if (s.shape() != expect)
    throw DimensionError("attend: similarity " + to_string(s.shape()) + " does not match context " +
                         to_string(ctx.shape()));
  // [C,N] x S^T keeps the channel-major layout: column i mixes ctx columns
  // with the weights of row i of S.
  Var<T> ctx_flat = reshape(ctx, Shape{p.batch, p.channels, n});
  Var<T> s3 = reshape(s, Shape{p.batch, n, n});
  return reshape(matmul(ctx_flat, s3, false, true), ctx.shape());
}

template <typename T>
FusionHead<T>::FusionHead(const std::string& name, std::size_t channels, std::size_t classes,
                          std::size_t context_inputs, double dropout, BlockOptions opts)
    : head(name + ".head", channels, classes, dropout), context_inputs_(context_inputs) {
  if (context_inputs_ > 0) transform = ConvBlock1x1<T>(name + ".transform", (context_inputs + 1) * channels, channels, opts);
}

template <typename T>
Var<T> FusionHead<T>::augment(Pass<T>& pass, Var<T> r, std::optional<Var<T>> il_attended,
                              std::optional<Var<T>> sl_attended) {
  std::vector<Var<T>> parts;
  if (il_attended) parts.push_back(*il_attended);
  if (sl_attended) parts.push_back(*sl_attended);
  if (parts.size() != context_inputs_)
    throw UsageError("fusion head built for " + std::to_string(context_inputs_) + " contexts, given " +
                     std::to_string(parts.size()));
  if (!has_transform()) return r;
  for (const Var<T>& v : parts)
    if (v.shape() != r.shape())
      throw DimensionError("augment: context " + to_string(v.shape()) + " vs representation " + to_string(r.shape()));
  parts.push_back(r);
  return transform.forward(pass, concat_channels(parts));
}

template <typename T>
Var<T> FusionHead<T>::classify(Pass<T>& pass, Var<T> x) {
  return upsample8x(head.forward(pass, x));
}

template <typename T>
IsNet<T>::IsNet(const ModelConfig& config) : config_(config) {
  config_.validate();
  const std::size_t c = config_.channels;
  BlockOptions opts;
  opts.norm = config_.norm;
  if (config_.feature_channels)
    bottleneck = std::make_unique<ConvBlock1x1<T>>("bottleneck", config_.feature_channels, c, opts);
  else
    backbone = std::make_unique<ToyBackbone<T>>("backbone", config_);
  if (uses_ilcm(config_.variant)) ilcm = std::make_unique<Ilcm<T>>("ilcm", c, opts);
  if (uses_slcm(config_.variant)) slcm = std::make_unique<Slcm<T>>("slcm", c, config_.hidden(), config_.classes);
  const std::size_t contexts = (ilcm ? 1 : 0) + (slcm ? 1 : 0);
  fusion = FusionHead<T>("fusion", c, config_.classes, contexts, config_.dropout, opts);
  init_params<T>(*this, config_.seed);
}

template <typename T>
ForwardResult<T> IsNet<T>::forward(Pass<T>& pass, Var<T> input, const std::vector<RegionAssignment>* fixed_regions) {
  Var<T> r = bottleneck ? bottleneck->forward(pass, input) : backbone->forward(pass, input);
  return forward_features(pass, r, fixed_regions);
}

template <typename T>
ForwardResult<T> IsNet<T>::forward_features(Pass<T>& pass, Var<T> r,
                                            const std::vector<RegionAssignment>* fixed_regions) {
  ForwardResult<T> out;
  out.features = r;
  std::optional<Var<T>> il, sl;
  if (ilcm) {
    out.image_context = ilcm->forward(pass, r);
    out.sim_il = similarity(r, out.image_context, config_.attention_cap);
    out.att_il = attend(out.sim_il, out.image_context);
    il = out.att_il;
  }
  if (slcm) {
    SlcmOutput<T> s = slcm->forward(pass, r, fixed_regions);
    out.semantic_context = s.context;
    out.distribution = s.distribution;
    out.regions = std::move(s.regions);
    out.sim_sl = similarity(r, out.semantic_context, config_.attention_cap);
    out.att_sl = attend(out.sim_sl, out.semantic_context);
    sl = out.att_sl;
  }
  out.augmented = fusion.augment(pass, r, il, sl);
  out.output = fusion.classify(pass, out.augmented);
  return out;
}

template <typename T>
std::vector<Parameter<T>*> IsNet<T>::parameters() {
  std::vector<Parameter<T>*> out;
  visit([&](Parameter<T>& p) { out.push_back(&p); });
  return out;
}

template <typename T>
std::vector<Parameter<T>*> IsNet<T>::trainable() {
  std::vector<Parameter<T>*> out;
  visit([&](Parameter<T>& p) {
    if (p.trainable) out.push_back(&p);
  });
  return out;
}

template <typename T>
std::size_t IsNet<T>::parameter_count() {
  std::size_t n = 0;
  visit([&](Parameter<T>& p) {
    if (p.trainable) n += p.value.size();
  });
  return n;
}

#define ISNET_FUSION(T)                                               \
  template Var<T> similarity<T>(Var<T>, Var<T>, std::size_t);         \
  template Var<T> attend<T>(Var<T>, Var<T>);                          \
  template class FusionHead<T>;                                       \
  template class IsNet<T>;

ISNET_FUSION(float)
ISNET_FUSION(double)

#undef ISNET_FUSION

}  // namespace isnet
