#include "isnet/loss.hpp"

#include <algorithm>
#include <cmath>

#include "isnet/blocks.hpp"
#include "isnet/error.hpp"

namespace isnet {

void GroundTruth::validate(std::size_t classes) const {
  if (labels.size() != pixels())
    throw DimensionError("ground truth holds " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(batch) + "x" + std::to_string(height) + "x" + std::to_string(width));
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] != kIgnoreLabel && labels[i] >= classes)
      throw DataError("label " + std::to_string(labels[i]) + " at pixel " + std::to_string(i) + " out of range for " +
                      std::to_string(classes) + " classes");
}

template <typename T>
T cross_entropy_pixel(std::span<const T> logits, std::uint8_t target) {
  if (target == kIgnoreLabel) return T{0};
  if (target >= logits.size())
    throw DataError("target " + std::to_string(target) + " out of range for " + std::to_string(logits.size()) +
                    " classes");
  const T mx = *std::max_element(logits.begin(), logits.end());
  T s = 0;
  for (T v : logits) s += std::exp(v - mx);
  return mx + std::log(s) - logits[target];
}

namespace {

template <typename T>
void check_extents(const Shape& shape, const GroundTruth& gt, const char* what) {
  const Planes p = as_planes(shape, what);
  if (p.batch != gt.batch || p.height != gt.height || p.width != gt.width)
    throw DimensionError(std::string(what) + ": logits " + to_string(shape) + " vs ground truth " +
                         std::to_string(gt.batch) + "x" + std::to_string(gt.height) + "x" + std::to_string(gt.width));
}

}  // namespace

template <typename T>
Var<T> loss_D(Var<T> d, const GroundTruth& gt) {
  const Planes p = as_planes(d.shape(), "loss_D");
  if (p.batch != gt.batch || 8 * p.height != gt.height || 8 * p.width != gt.width)
    throw DimensionError("loss_D: distribution " + to_string(d.shape()) + " is not 1/8 of ground truth " +
                         std::to_string(gt.height) + "x" + std::to_string(gt.width));
  return loss_O(upsample8x(d), gt);
}

template <typename T>
Var<T> loss_O(Var<T> o, const GroundTruth& gt) {
  check_extents<T>(o.shape(), gt, "loss_O");
  return cross_entropy(o, std::span<const std::uint8_t>(gt.labels));
}

template <typename T>
Var<T> total_loss(Var<T> l_d, Var<T> l_o, double alpha) {
  if (!(alpha >= 0)) throw UsageError("alpha must be non-negative");
  return add(scale(l_d, static_cast<T>(alpha)), l_o);
}

template <typename T>
T total_loss(T l_d, T l_o, double alpha) {
  if (!(alpha >= 0)) throw UsageError("alpha must be non-negative");
  return static_cast<T>(alpha) * l_d + l_o;
}

#define ISNET_LOSS(T)                                                      \
  template T cross_entropy_pixel<T>(std::span<const T>, std::uint8_t);     \
  template Var<T> loss_D<T>(Var<T>, const GroundTruth&);                   \
  template Var<T> loss_O<T>(Var<T>, const GroundTruth&);                   \
  template Var<T> total_loss<T>(Var<T>, Var<T>, double);                   \
  template T total_loss<T>(T, T, double);

ISNET_LOSS(float)
ISNET_LOSS(double)

#undef ISNET_LOSS

}  // namespace isnet
