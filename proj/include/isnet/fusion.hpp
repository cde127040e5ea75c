#pragma once

#include <memory>
#include <optional>

#include "isnet/ilcm.hpp"
#include "isnet/slcm.hpp"

namespace isnet {

inline constexpr std::size_t kDefaultAttentionCap = 16384;

// Row-softmaxed scaled dot products between pixel representations and a
// context tensor: S = softmax(R^T ctx / sqrt(C)), one row per query pixel.
// [C,h,w] inputs give [N,N]; [B,C,h,w] inputs give [B,N,N]. Rejects
// N > cap.
template <typename T>
Var<T> similarity(Var<T> r, Var<T> ctx, std::size_t cap = kDefaultAttentionCap);

// R' = reshape(S * ctx) back to the layout of ctx.
template <typename T>
Var<T> attend(Var<T> s, Var<T> ctx);

// Transform A over the concatenated contexts plus the main head H.
template <typename T>
class FusionHead {
 public:
  FusionHead() = default;
  // `context_inputs` counts the attended contexts concatenated ahead of R
  // (0 for the baseline, which skips A entirely).
  FusionHead(const std::string& name, std::size_t channels, std::size_t classes, std::size_t context_inputs,
             double dropout, BlockOptions opts = {});

  // R_aug = A(R'_il (+) R'_sl (+) R) with absent contexts left out.
  Var<T> augment(Pass<T>& pass, Var<T> r, std::optional<Var<T>> il_attended, std::optional<Var<T>> sl_attended);
  // O = upsample8x(H(x)), raw logits.
  Var<T> classify(Pass<T>& pass, Var<T> x);

  bool has_transform() const { return context_inputs_ > 0; }

  template <typename F>
  void visit(F&& f) {
    if (has_transform()) transform.visit(f);
    head.visit(f);
  }

  ConvBlock1x1<T> transform;
  HeadMain<T> head;

 private:
  std::size_t context_inputs_ = 0;
};

template <typename T>
struct ForwardResult {
  Var<T> features;          // R
  Var<T> image_context;     // R_il
  Var<T> semantic_context;  // R_sl
  Var<T> distribution;      // D
  Var<T> sim_il, sim_sl;    // S_il, S_sl
  Var<T> att_il, att_sl;    // R'_il, R'_sl
  Var<T> augmented;         // R_aug
  Var<T> output;            // O
  std::vector<RegionAssignment> regions;
};

// The complete network for one variant. Modules excluded by the variant are
// not constructed.
template <typename T>
class IsNet {
 public:
  explicit IsNet(const ModelConfig& config);

  IsNet(const IsNet&) = delete;
  IsNet& operator=(const IsNet&) = delete;

  // image: [3,H,W] or [B,3,H,W]; with feature_channels set, a feature map.
  ForwardResult<T> forward(Pass<T>& pass, Var<T> input, const std::vector<RegionAssignment>* fixed_regions = nullptr);

  // Runs the context modules and head on already computed features R.
  ForwardResult<T> forward_features(Pass<T>& pass, Var<T> r,
                                    const std::vector<RegionAssignment>* fixed_regions = nullptr);

  const ModelConfig& config() const { return config_; }

  template <typename F>
  void visit(F&& f) {
    if (bottleneck) bottleneck->visit(f);
    if (backbone) backbone->visit(f);
    if (ilcm) ilcm->visit(f);
    if (slcm) slcm->visit(f);
    fusion.visit(f);
  }

  std::vector<Parameter<T>*> parameters();
  std::vector<Parameter<T>*> trainable();
  std::size_t parameter_count();

  std::unique_ptr<ConvBlock1x1<T>> bottleneck;
  std::unique_ptr<ToyBackbone<T>> backbone;
  std::unique_ptr<Ilcm<T>> ilcm;
  std::unique_ptr<Slcm<T>> slcm;
  FusionHead<T> fusion;

 private:
  ModelConfig config_;
};

}  // namespace isnet
