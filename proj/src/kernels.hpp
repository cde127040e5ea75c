#pragma once

// Dense inner loops shared by the differentiable ops. Internal header.

#include <cstddef>
#include <vector>

namespace isnet::kernels {

// C (+)= op(A) * op(B), op(A) is [m,k], op(B) is [k,n], all row-major.
// A is stored [m,k] (or [k,m] when trans_a), B is stored [k,n] (or [n,k]).
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
          bool accumulate);

template <typename T>
void transpose(std::size_t rows, std::size_t cols, const T* src, T* dst);

// Patch matrix [C*kh*kw, Ho*Wo] of one [C,H,W] plane set.
template <typename T>
void im2col(const T* x, std::size_t channels, std::size_t height, std::size_t width, std::size_t kernel,
            std::size_t stride, std::size_t pad, std::size_t out_h, std::size_t out_w, T* cols);

// Adjoint of im2col: scatters-adds patch gradients back into dx.
template <typename T>
void col2im(const T* cols, std::size_t channels, std::size_t height, std::size_t width, std::size_t kernel,
            std::size_t stride, std::size_t pad, std::size_t out_h, std::size_t out_w, T* dx);

// Per-axis sampling table for bilinear resize with half-pixel centers
// (align-corners disabled): out[i] = in[lo] + frac * (in[hi] - in[lo]).
struct LerpAxis {
  std::vector<std::size_t> lo;
  std::vector<std::size_t> hi;
  std::vector<double> frac;
};

LerpAxis lerp_axis(std::size_t in, std::size_t out);

template <typename T>
void resize_plane(const T* in, std::size_t in_h, std::size_t in_w, const LerpAxis& ay, const LerpAxis& ax, T* out,
                  std::vector<T>& scratch);

template <typename T>
void resize_plane_backward(const T* gout, std::size_t in_h, std::size_t in_w, const LerpAxis& ay, const LerpAxis& ax,
                           T* gin, std::vector<T>& scratch);

}  // namespace isnet::kernels
