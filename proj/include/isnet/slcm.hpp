#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "isnet/blocks.hpp"

namespace isnet {

// Hard class regions of one [K,h,w] logit map: labels[i*w+j] is the argmax
// over classes, ties resolved to the smallest class index.
struct RegionAssignment {
  std::size_t classes = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint32_t> labels;

  std::size_t positions() const { return height * width; }
  std::vector<std::size_t> counts() const;
};

template <typename T>
RegionAssignment group_regions(const Tensor<T>& logits);

// One assignment per sample of a [B,K,h,w] (or [K,h,w]) logit map.
template <typename T>
std::vector<RegionAssignment> group_regions_batch(const Tensor<T>& logits);

// Pooled representation of every present class of one sample.
template <typename T>
struct RegionRepr {
  std::size_t channels = 0;
  std::vector<std::size_t> counts;       // N_ck per class
  std::vector<std::vector<T>> vectors;   // [K][C]; empty for absent classes
  std::vector<std::vector<T>> weights;   // [K][N_ck]; members in raster order

  bool present(std::size_t c) const { return c < counts.size() && counts[c] > 0; }
};

// Region vector of class c: members weighted by the softmax of their class-c
// logits. Empty regions yield nullopt.
template <typename T>
std::optional<std::vector<T>> region_representation(const Tensor<T>& r, const Tensor<T>& d,
                                                    const RegionAssignment& a, std::size_t c);

template <typename T>
RegionRepr<T> region_representations(const Tensor<T>& r, const Tensor<T>& d, const RegionAssignment& a);

// R_sl[:,i,j] = vector of the class assigned to (i,j). Throws InternalError
// when an assigned class has no vector.
template <typename T>
Tensor<T> scatter_regions(const RegionAssignment& a, const RegionRepr<T>& reprs);

// Differentiable R_sl for [C,h,w] or [B,C,h,w] features and matching logits,
// with the assignments held constant.
template <typename T>
Var<T> semantic_context(Var<T> r, Var<T> d, const std::vector<RegionAssignment>& regions);

template <typename T>
struct SlcmOutput {
  Var<T> context;       // R_sl
  Var<T> distribution;  // D, raw logits
  std::vector<RegionAssignment> regions;
};

// Semantic-level context: D = H'(R), argmax regions, pooled region vectors
// scattered back per pixel.
template <typename T>
class Slcm {
 public:
  Slcm() = default;
  Slcm(const std::string& name, std::size_t channels, std::size_t hidden, std::size_t classes);

  Var<T> predict_distribution(Pass<T>& pass, Var<T> r);

  // A non-null `fixed` replaces the argmax assignment (used to hold regions
  // constant under finite-difference probes).
  SlcmOutput<T> forward(Pass<T>& pass, Var<T> r, const std::vector<RegionAssignment>* fixed = nullptr);

  template <typename F>
  void visit(F&& f) {
    head.visit(f);
  }

  HeadAux<T> head;
};

}  // namespace isnet
