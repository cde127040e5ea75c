#pragma once

// Scalar reference implementations written straight from the definitions.
// They share no code with the library beyond Tensor storage.

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include "isnet/random.hpp"
#include "isnet/tensor.hpp"

namespace oracle {

using isnet::Shape;
using isnet::Tensor;

inline Tensor<double> random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  Tensor<double> t(shape);
  for (double& v : t.data()) v = lo + (hi - lo) * isnet::uniform01(rng);
  return t;
}

inline std::size_t random_extent(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return lo + isnet::uniform_index(rng, hi - lo + 1);
}

// [m,k] x [k,n], triple loop in long double.
inline std::vector<double> matmul(const std::vector<double>& a, const std::vector<double>& b, std::size_t m,
                                  std::size_t k, std::size_t n) {
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      long double s = 0;
      for (std::size_t t = 0; t < k; ++t) s += static_cast<long double>(a[i * k + t]) * b[t * n + j];
      out[i * n + j] = static_cast<double>(s);
    }
  return out;
}

// S[i][j] = exp(z_ij) / sum_j' exp(z_ij'), z_ij = sum_c r[c,i] ctx[c,j] / sqrt(C).
// r and ctx are [C,N] channel-major.
inline std::vector<double> similarity(const Tensor<double>& r, const Tensor<double>& ctx) {
  const std::size_t c = r.dim(0), n = r.size() / c;
  std::vector<long double> z(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      long double dot = 0;
      for (std::size_t ch = 0; ch < c; ++ch) dot += static_cast<long double>(r[ch * n + i]) * ctx[ch * n + j];
      z[i * n + j] = dot / std::sqrt(static_cast<long double>(c));
    }
  std::vector<double> s(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    long double peak = -std::numeric_limits<long double>::infinity();
    for (std::size_t j = 0; j < n; ++j) peak = std::max(peak, z[i * n + j]);
    long double total = 0;
    for (std::size_t j = 0; j < n; ++j) total += std::exp(z[i * n + j] - peak);
    for (std::size_t j = 0; j < n; ++j) s[i * n + j] = static_cast<double>(std::exp(z[i * n + j] - peak) / total);
  }
  return s;
}

// out[c,i] = sum_j S[i][j] ctx[c,j].
inline std::vector<double> attend(const std::vector<double>& s, const Tensor<double>& ctx) {
  const std::size_t c = ctx.dim(0), n = ctx.size() / c;
  std::vector<double> out(c * n);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < n; ++i) {
      long double acc = 0;
      for (std::size_t j = 0; j < n; ++j) acc += static_cast<long double>(s[i * n + j]) * ctx[ch * n + j];
      out[ch * n + i] = static_cast<double>(acc);
    }
  return out;
}

// Per-position affine map y = W x + b over a [Ci,N] map; W is [Co,Ci].
inline std::vector<double> affine(const std::vector<double>& w, const std::vector<double>& b,
                                  const std::vector<double>& x, std::size_t ci, std::size_t co, std::size_t n) {
  std::vector<double> y(co * n);
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t o = 0; o < co; ++o) {
      long double acc = b.empty() ? 0 : b[o];
      for (std::size_t i = 0; i < ci; ++i) acc += static_cast<long double>(w[o * ci + i]) * x[i * n + p];
      y[o * n + p] = static_cast<double>(acc);
    }
  return y;
}

struct SlcmResult {
  std::vector<double> d;         // [K,N] logits
  std::vector<std::size_t> cls;  // argmax per pixel
  std::vector<double> context;   // [C,N]
};

// Naive semantic-level context for one sample: per-pixel two-layer head,
// per-pixel argmax (first maximum wins), then for every pixel p the
// softmax-weighted mean over all pixels q sharing p's class, using the
// class logit of q. Recomputed per pixel on purpose.
inline SlcmResult slcm(const Tensor<double>& r, const std::vector<double>& w1, const std::vector<double>& b1,
                       const std::vector<double>& w2, const std::vector<double>& b2, std::size_t hidden,
                       std::size_t k) {
  const std::size_t c = r.dim(0), n = r.size() / c;
  SlcmResult out;
  std::vector<double> h = affine(w1, b1, std::vector<double>(r.storage()), c, hidden, n);
  for (double& v : h) v = v > 0 ? v : 0;
  out.d = affine(w2, b2, h, hidden, k, n);
  out.cls.resize(n);
  for (std::size_t p = 0; p < n; ++p) {
    std::size_t best = 0;
    for (std::size_t cl = 1; cl < k; ++cl)
      if (out.d[cl * n + p] > out.d[best * n + p]) best = cl;
    out.cls[p] = best;
  }
  out.context.assign(c * n, 0);
  for (std::size_t p = 0; p < n; ++p) {
    const std::size_t cl = out.cls[p];
    long double peak = -std::numeric_limits<long double>::infinity();
    for (std::size_t q = 0; q < n; ++q)
      if (out.cls[q] == cl) peak = std::max<long double>(peak, out.d[cl * n + q]);
    long double total = 0;
    for (std::size_t q = 0; q < n; ++q)
      if (out.cls[q] == cl) total += std::exp(static_cast<long double>(out.d[cl * n + q]) - peak);
    for (std::size_t ch = 0; ch < c; ++ch) {
      long double acc = 0;
      for (std::size_t q = 0; q < n; ++q)
        if (out.cls[q] == cl) acc += std::exp(static_cast<long double>(out.d[cl * n + q]) - peak) * r[ch * n + q];
      out.context[ch * n + p] = static_cast<double>(acc / total);
    }
  }
  return out;
}

// -log softmax(z)[t] in long double.
inline long double cross_entropy(const std::vector<double>& z, std::size_t t) {
  long double peak = -std::numeric_limits<long double>::infinity();
  for (double v : z) peak = std::max<long double>(peak, v);
  long double total = 0;
  for (double v : z) total += std::exp(static_cast<long double>(v) - peak);
  return std::log(total) + peak - z[t];
}

// Bilinear x f resize of one [h,w] plane with half-pixel centres and edge
// clamping, from the closed-form weights.
inline std::vector<double> upsample(const std::vector<double>& x, std::size_t h, std::size_t w, std::size_t f) {
  auto axis = [f](std::size_t o, std::size_t in, std::size_t& i0, std::size_t& i1, double& t) {
    double src = (static_cast<double>(o) + 0.5) / static_cast<double>(f) - 0.5;
    if (src < 0) src = 0;
    i0 = static_cast<std::size_t>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    i1 = i0 + 1 < in ? i0 + 1 : in - 1;
    t = src - static_cast<double>(i0);
  };
  std::vector<double> out(h * f * w * f);
  for (std::size_t y = 0; y < h * f; ++y)
    for (std::size_t xo = 0; xo < w * f; ++xo) {
      std::size_t y0, y1, x0, x1;
      double ty, tx;
      axis(y, h, y0, y1, ty);
      axis(xo, w, x0, x1, tx);
      out[y * w * f + xo] = (1 - ty) * ((1 - tx) * x[y0 * w + x0] + tx * x[y0 * w + x1]) +
                            ty * ((1 - tx) * x[y1 * w + x0] + tx * x[y1 * w + x1]);
    }
  return out;
}

}  // namespace oracle
