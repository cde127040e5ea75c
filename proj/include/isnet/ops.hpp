#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "isnet/tape.hpp"

namespace isnet {

// Differentiable operations on tape variables. Spatial ops accept either
// [C,H,W] or [B,C,H,W] and preserve the rank they were given.

template <typename T>
Var<T> add(Var<T> a, Var<T> b);
template <typename T>
Var<T> sub(Var<T> a, Var<T> b);
template <typename T>
Var<T> mul(Var<T> a, Var<T> b);
template <typename T>
Var<T> scale(Var<T> a, T factor);
template <typename T>
Var<T> relu(Var<T> a);
// Sum of all elements, as a scalar.
template <typename T>
Var<T> sum(Var<T> a);

// Rank-2 [m,k]x[k,n] or batched rank-3 [B,m,k]x[B,k,n]; the transpose
// flags reinterpret the trailing two axes of an operand.
template <typename T>
Var<T> matmul(Var<T> a, Var<T> b, bool trans_a = false, bool trans_b = false);

// Softmax over the last axis with max subtraction.
template <typename T>
Var<T> softmax_last(Var<T> x);
template <typename T>
Var<T> log_softmax_last(Var<T> x);

// Per-channel mean over the two trailing axes: [..,C,H,W] -> [..,C,1,1].
template <typename T>
Var<T> mean_spatial(Var<T> x);
// Broadcast [..,C,1,1] to [..,C,H,W]; the gradient is the spatial sum.
template <typename T>
Var<T> expand_spatial(Var<T> x, std::size_t height, std::size_t width);

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& parts);
template <typename T>
Var<T> slice_channels(Var<T> x, std::size_t begin, std::size_t count);

template <typename T>
Var<T> reshape(Var<T> x, Shape shape);
// out.shape[i] = in.shape[axes[i]].
template <typename T>
Var<T> permute(Var<T> x, const std::vector<std::size_t>& axes);

// Per-position affine map; weight [Co,Ci], optional bias [Co].
template <typename T>
Var<T> conv1x1(Var<T> x, Var<T> weight, Var<T> bias = {});

// Square-kernel convolution without bias; weight [Co,Ci,k,k].
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> weight, std::size_t stride, std::size_t pad);

template <typename T>
struct RunningStats {
  Parameter<T>* mean = nullptr;
  Parameter<T>* var = nullptr;
  T momentum = T(0.1);
  T eps = T(1e-5);
};

// Per-channel normalization with batch statistics (training) or running
// statistics (inference). Training updates the running statistics.
template <typename T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, const RunningStats<T>& stats, bool training);

// Inverted dropout; identity when rng is null or rate is 0.
template <typename T>
Var<T> dropout(Var<T> x, double rate, std::mt19937_64* rng);

// Bilinear resize by an integer factor, half-pixel centers.
template <typename T>
Var<T> upsample_bilinear(Var<T> x, std::size_t factor);

inline constexpr std::uint8_t kIgnoreLabel = 255;

// Mean pixel cross entropy of [B,K,H,W] (or [K,H,W]) logits against
// B*H*W labels, skipping kIgnoreLabel. An all-ignored batch yields 0.
template <typename T>
Var<T> cross_entropy(Var<T> logits, std::span<const std::uint8_t> labels);

}  // namespace isnet
