#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "isnet/ops.hpp"

namespace isnet {

// Label maps for a batch: batch * height * width entries in [0,K) or 255.
struct GroundTruth {
  std::size_t batch = 1;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> labels;

  std::size_t pixels() const { return batch * height * width; }
  // DimensionError if the label count disagrees with the extents, DataError
  // for an entry outside [0,K) that is not the ignore label.
  void validate(std::size_t classes) const;
};

// -log softmax(logits)[target] for one pixel; 0 for the ignore label.
template <typename T>
T cross_entropy_pixel(std::span<const T> logits, std::uint8_t target);

// Mean pixel cross entropy of upsample8x(d) against gt, d: [B,K,h,w] or
// [K,h,w] raw logits.
template <typename T>
Var<T> loss_D(Var<T> d, const GroundTruth& gt);

// Mean pixel cross entropy of full-resolution logits o against gt.
template <typename T>
Var<T> loss_O(Var<T> o, const GroundTruth& gt);

// alpha * l_d + l_o; UsageError for negative alpha.
template <typename T>
Var<T> total_loss(Var<T> l_d, Var<T> l_o, double alpha);

template <typename T>
T total_loss(T l_d, T l_o, double alpha);

}  // namespace isnet
