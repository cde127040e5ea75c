#include "kernels.hpp"

#include <algorithm>
#include <cmath>

namespace isnet::kernels {

namespace {

template <typename T>
T dot(const T* x, const T* y, std::size_t n) {
  T s = 0;
#pragma omp simd reduction(+ : s)
  for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

// C[m,n] += A[m,k] * B[k,n]; A row stride lda, element stride a_step.
template <typename T>
void gemm_rows(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t a_row, std::size_t a_col,
               const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * a_row + p * a_col];
      const T* brow = b + p * n;
#pragma omp simd
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

template <typename T>
void transpose(std::size_t rows, std::size_t cols, const T* src, T* dst) {
  constexpr std::size_t tile = 32;
  for (std::size_t i0 = 0; i0 < rows; i0 += tile)
    for (std::size_t j0 = 0; j0 < cols; j0 += tile) {
      const std::size_t i1 = std::min(rows, i0 + tile), j1 = std::min(cols, j0 + tile);
      for (std::size_t i = i0; i < i1; ++i)
        for (std::size_t j = j0; j < j1; ++j) dst[j * rows + i] = src[i * cols + j];
    }
}

template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
          bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, T{0});
  if (trans_b) {
    if (!trans_a) {
      // Row-by-row dot products over the shared k axis.
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) c[i * n + j] += dot(a + i * k, b + j * k, k);
      return;
    }
    std::vector<T> bt(k * n);
    transpose(n, k, b, bt.data());
    gemm_rows(m, n, k, a, std::size_t{1}, m, bt.data(), c);
    return;
  }
  if (trans_a)
    gemm_rows(m, n, k, a, std::size_t{1}, m, b, c);
  else
    gemm_rows(m, n, k, a, k, std::size_t{1}, b, c);
}

template <typename T>
void im2col(const T* x, std::size_t channels, std::size_t height, std::size_t width, std::size_t kernel,
            std::size_t stride, std::size_t pad, std::size_t out_h, std::size_t out_w, T* cols) {
  const std::size_t area = out_h * out_w;
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t ky = 0; ky < kernel; ++ky)
      for (std::size_t kx = 0; kx < kernel; ++kx) {
        T* row = cols + ((c * kernel + ky) * kernel + kx) * area;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
          T* dst = row + oy * out_w;
          if (iy < 0 || iy >= static_cast<long>(height)) {
            std::fill(dst, dst + out_w, T{0});
            continue;
          }
          const T* src = x + (c * height + static_cast<std::size_t>(iy)) * width;
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
            dst[ox] = (ix < 0 || ix >= static_cast<long>(width)) ? T{0} : src[ix];
          }
        }
      }
}

template <typename T>
void col2im(const T* cols, std::size_t channels, std::size_t height, std::size_t width, std::size_t kernel,
            std::size_t stride, std::size_t pad, std::size_t out_h, std::size_t out_w, T* dx) {
  const std::size_t area = out_h * out_w;
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t ky = 0; ky < kernel; ++ky)
      for (std::size_t kx = 0; kx < kernel; ++kx) {
        const T* row = cols + ((c * kernel + ky) * kernel + kx) * area;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
          if (iy < 0 || iy >= static_cast<long>(height)) continue;
          T* dst = dx + (c * height + static_cast<std::size_t>(iy)) * width;
          const T* src = row + oy * out_w;
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
            if (ix >= 0 && ix < static_cast<long>(width)) dst[ix] += src[ox];
          }
        }
      }
}

LerpAxis lerp_axis(std::size_t in, std::size_t out) {
  LerpAxis ax;
  ax.lo.resize(out);
  ax.hi.resize(out);
  ax.frac.resize(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    std::size_t lo = static_cast<std::size_t>(std::floor(src));
    if (lo > in - 1) lo = in - 1;
    const std::size_t hi = std::min(lo + 1, in - 1);
    ax.lo[i] = lo;
    ax.hi[i] = hi;
    ax.frac[i] = hi == lo ? 0.0 : src - static_cast<double>(lo);
  }
  return ax;
}

template <typename T>
void resize_plane(const T* in, std::size_t in_h, std::size_t in_w, const LerpAxis& ay, const LerpAxis& ax, T* out,
                  std::vector<T>& scratch) {
  const std::size_t out_w = ax.lo.size(), out_h = ay.lo.size();
  scratch.resize(in_h * out_w);
  for (std::size_t y = 0; y < in_h; ++y) {
    const T* row = in + y * in_w;
    T* dst = scratch.data() + y * out_w;
    for (std::size_t x = 0; x < out_w; ++x) {
      const T v0 = row[ax.lo[x]], v1 = row[ax.hi[x]];
      dst[x] = v0 + static_cast<T>(ax.frac[x]) * (v1 - v0);
    }
  }
  for (std::size_t y = 0; y < out_h; ++y) {
    const T* r0 = scratch.data() + ay.lo[y] * out_w;
    const T* r1 = scratch.data() + ay.hi[y] * out_w;
    const T f = static_cast<T>(ay.frac[y]);
    T* dst = out + y * out_w;
    for (std::size_t x = 0; x < out_w; ++x) dst[x] = r0[x] + f * (r1[x] - r0[x]);
  }
}

template <typename T>
void resize_plane_backward(const T* gout, std::size_t in_h, std::size_t in_w, const LerpAxis& ay, const LerpAxis& ax,
                           T* gin, std::vector<T>& scratch) {
  const std::size_t out_w = ax.lo.size(), out_h = ay.lo.size();
  scratch.assign(in_h * out_w, T{0});
  for (std::size_t y = 0; y < out_h; ++y) {
    T* r0 = scratch.data() + ay.lo[y] * out_w;
    T* r1 = scratch.data() + ay.hi[y] * out_w;
    const T f = static_cast<T>(ay.frac[y]);
    const T* g = gout + y * out_w;
    for (std::size_t x = 0; x < out_w; ++x) {
      r0[x] += (T{1} - f) * g[x];
      r1[x] += f * g[x];
    }
  }
  for (std::size_t y = 0; y < in_h; ++y) {
    const T* g = scratch.data() + y * out_w;
    T* dst = gin + y * in_w;
    for (std::size_t x = 0; x < out_w; ++x) {
      const T f = static_cast<T>(ax.frac[x]);
      dst[ax.lo[x]] += (T{1} - f) * g[x];
      dst[ax.hi[x]] += f * g[x];
    }
  }
}

#define ISNET_KERNELS(T)                                                                                            \
  template void gemm<T>(bool, bool, std::size_t, std::size_t, std::size_t, const T*, const T*, T*, bool);          \
  template void transpose<T>(std::size_t, std::size_t, const T*, T*);                                             \
  template void im2col<T>(const T*, std::size_t, std::size_t, std::size_t, std::size_t, std::size_t, std::size_t, \
                          std::size_t, std::size_t, T*);                                                          \
  template void col2im<T>(const T*, std::size_t, std::size_t, std::size_t, std::size_t, std::size_t, std::size_t, \
                          std::size_t, std::size_t, T*);                                                          \
  template void resize_plane<T>(const T*, std::size_t, std::size_t, const LerpAxis&, const LerpAxis&, T*,         \
                                std::vector<T>&);                                                                 \
  template void resize_plane_backward<T>(const T*, std::size_t, std::size_t, const LerpAxis&, const LerpAxis&, T*, \
                                         std::vector<T>&);

ISNET_KERNELS(float)
ISNET_KERNELS(double)

#undef ISNET_KERNELS

}  // namespace isnet::kernels
