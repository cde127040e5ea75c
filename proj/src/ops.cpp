#include "isnet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "isnet/error.hpp"
#include "isnet/random.hpp"
#include "kernels.hpp"

namespace isnet {

namespace {

template <typename T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
}

template <typename T>
void accumulate(Tensor<T>& dst, const Tensor<T>& src) {
  T* d = dst.ptr();
  const T* s = src.ptr();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

// Replaces the trailing two extents of a [..,C,H,W] shape.
Shape with_spatial(const Shape& s, std::size_t h, std::size_t w) {
  Shape out = s;
  out[out.size() - 2] = h;
  out[out.size() - 1] = w;
  return out;
}

}  // namespace

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same_shape(a, b, "add");
  Tensor<T> out = a.value();
  accumulate(out, b.value());
  return a.tape().record(std::move(out), {a, b}, [a, b](const Tensor<T>& g) {
    Tape<T>& t = a.tape();
    if (a.requires_grad()) accumulate(t.grad_slot(a), g);
    if (b.requires_grad()) accumulate(t.grad_slot(b), g);
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  require_same_shape(a, b, "sub");
  Tensor<T> out = a.value();
  const Tensor<T>& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](const Tensor<T>& g) {
    Tape<T>& t = a.tape();
    if (a.requires_grad()) accumulate(t.grad_slot(a), g);
    if (b.requires_grad()) {
      Tensor<T>& gb = t.grad_slot(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same_shape(a, b, "mul");
  Tensor<T> out = a.value();
  const Tensor<T>& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](const Tensor<T>& g) {
    Tape<T>& t = a.tape();
    if (a.requires_grad()) {
      Tensor<T>& ga = t.grad_slot(a);
      const Tensor<T>& bv = b.value();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (b.requires_grad()) {
      Tensor<T>& gb = t.grad_slot(b);
      const Tensor<T>& av = a.value();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

template <typename T>
Var<T> scale(Var<T> a, T factor) {
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= factor;
  return a.tape().record(std::move(out), {a}, [a, factor](const Tensor<T>& g) {
    Tensor<T>& ga = a.tape().grad_slot(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += factor * g[i];
  });
}

template <typename T>
Var<T> relu(Var<T> a) {
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] > T{0} ? out[i] : T{0};
  return a.tape().record(std::move(out), {a}, [a](const Tensor<T>& g) {
    Tensor<T>& ga = a.tape().grad_slot(a);
    const Tensor<T>& av = a.value();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (av[i] > T{0}) ga[i] += g[i];
  });
}

template <typename T>
Var<T> sum(Var<T> a) {
  const Tensor<T>& av = a.value();
  double s = 0;
  for (std::size_t i = 0; i < av.size(); ++i) s += av[i];
  return a.tape().record(Tensor<T>::scalar(static_cast<T>(s)), {a}, [a](const Tensor<T>& g) {
    Tensor<T>& ga = a.tape().grad_slot(a);
    const T gv = g[0];
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gv;
  });
}

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b, bool trans_a, bool trans_b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  const bool batched = sa.size() == 3;
  if ((sa.size() != 2 && sa.size() != 3) || sb.size() != sa.size() || (batched && sa[0] != sb[0]))
    throw DimensionError("matmul: incompatible operands " + to_string(sa) + " and " + to_string(sb));
  const std::size_t batch = batched ? sa[0] : 1;
  const std::size_t r = sa.size();
  const std::size_t m = trans_a ? sa[r - 1] : sa[r - 2];
  const std::size_t ka = trans_a ? sa[r - 2] : sa[r - 1];
  const std::size_t kb = trans_b ? sb[r - 1] : sb[r - 2];
  const std::size_t n = trans_b ? sb[r - 2] : sb[r - 1];
  if (ka != kb)
    throw DimensionError("matmul: inner extents differ for " + to_string(sa) + " and " + to_string(sb));
  const std::size_t k = ka;
  Shape out_shape = batched ? Shape{batch, m, n} : Shape{m, n};
  Tensor<T> out(out_shape);
  for (std::size_t bi = 0; bi < batch; ++bi)
    kernels::gemm(trans_a, trans_b, m, n, k, a.value().ptr() + bi * m * k, b.value().ptr() + bi * k * n,
                  out.ptr() + bi * m * n, false);
  return a.tape().record(std::move(out), {a, b}, [=](const Tensor<T>& g) {
    Tape<T>& t = a.tape();
    const T* av = a.value().ptr();
    const T* bv = b.value().ptr();
    if (a.requires_grad()) {
      T* ga = t.grad_slot(a).ptr();
      for (std::size_t bi = 0; bi < batch; ++bi) {
        const T* gp = g.ptr() + bi * m * n;
        const T* bp = bv + bi * k * n;
        T* dst = ga + bi * m * k;
        if (!trans_a)  // dA[m,k] = G op(B)^T
          kernels::gemm(false, !trans_b, m, k, n, gp, bp, dst, true);
        else  // dA[k,m] = op(B) G^T
          kernels::gemm(trans_b, true, k, m, n, bp, gp, dst, true);
      }
    }
    if (b.requires_grad()) {
      T* gb = t.grad_slot(b).ptr();
      for (std::size_t bi = 0; bi < batch; ++bi) {
        const T* gp = g.ptr() + bi * m * n;
        const T* ap = av + bi * m * k;
        T* dst = gb + bi * k * n;
        if (!trans_b)  // dB[k,n] = op(A)^T G
          kernels::gemm(!trans_a, false, k, n, m, ap, gp, dst, true);
        else  // dB[n,k] = G^T op(A)
          kernels::gemm(true, trans_a, n, k, m, gp, ap, dst, true);
      }
    }
  });
}

template <typename T>
Var<T> softmax_last(Var<T> x) {
  const Tensor<T>& xv = x.value();
  if (xv.rank() == 0) throw DimensionError("softmax_last needs at least one axis");
  const std::size_t n = xv.shape().back();
  const std::size_t rows = xv.size() / n;
  Tensor<T> out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv.ptr() + r * n;
    T* o = out.ptr() + r * n;
    const T mx = *std::max_element(in, in + n);
    T s = 0;
    for (std::size_t i = 0; i < n; ++i) s += (o[i] = std::exp(in[i] - mx));
    const T inv = T{1} / s;
    for (std::size_t i = 0; i < n; ++i) o[i] *= inv;
  }
  const std::size_t id = x.tape().size();
  return x.tape().record(std::move(out), {x}, [x, n, rows, id](const Tensor<T>& g) {
    const Tensor<T>& y = x.tape().value(id);
    Tensor<T>& gx = x.tape().grad_slot(x);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* yr = y.ptr() + r * n;
      const T* gr = g.ptr() + r * n;
      T dotp = 0;
      for (std::size_t i = 0; i < n; ++i) dotp += gr[i] * yr[i];
      T* d = gx.ptr() + r * n;
      for (std::size_t i = 0; i < n; ++i) d[i] += yr[i] * (gr[i] - dotp);
    }
  });
}

template <typename T>
Var<T> log_softmax_last(Var<T> x) {
  const Tensor<T>& xv = x.value();
  if (xv.rank() == 0) throw DimensionError("log_softmax_last needs at least one axis");
  const std::size_t n = xv.shape().back();
  const std::size_t rows = xv.size() / n;
  Tensor<T> out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv.ptr() + r * n;
    T* o = out.ptr() + r * n;
    const T mx = *std::max_element(in, in + n);
    T s = 0;
    for (std::size_t i = 0; i < n; ++i) s += std::exp(in[i] - mx);
    const T lse = mx + std::log(s);
    for (std::size_t i = 0; i < n; ++i) o[i] = in[i] - lse;
  }
  const std::size_t id = x.tape().size();
  return x.tape().record(std::move(out), {x}, [x, n, rows, id](const Tensor<T>& g) {
    const Tensor<T>& y = x.tape().value(id);
    Tensor<T>& gx = x.tape().grad_slot(x);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* yr = y.ptr() + r * n;
      const T* gr = g.ptr() + r * n;
      T gs = 0;
      for (std::size_t i = 0; i < n; ++i) gs += gr[i];
      T* d = gx.ptr() + r * n;
      for (std::size_t i = 0; i < n; ++i) d[i] += gr[i] - std::exp(yr[i]) * gs;
    }
  });
}

template <typename T>
Var<T> mean_spatial(Var<T> x) {
  const Planes p = as_planes(x.shape(), "mean_spatial");
  const std::size_t area = p.area();
  const std::size_t planes = p.batch * p.channels;
  Tensor<T> out(with_spatial(x.shape(), 1, 1));
  const T* xv = x.value().ptr();
  for (std::size_t q = 0; q < planes; ++q) {
    T s = 0;
    for (std::size_t i = 0; i < area; ++i) s += xv[q * area + i];
    out[q] = s / static_cast<T>(area);
  }
  return x.tape().record(std::move(out), {x}, [x, area, planes](const Tensor<T>& g) {
    T* gx = x.tape().grad_slot(x).ptr();
    for (std::size_t q = 0; q < planes; ++q) {
      const T v = g[q] / static_cast<T>(area);
      for (std::size_t i = 0; i < area; ++i) gx[q * area + i] += v;
    }
  });
}

template <typename T>
Var<T> expand_spatial(Var<T> x, std::size_t height, std::size_t width) {
  const Planes p = as_planes(x.shape(), "expand_spatial");
  if (p.height != 1 || p.width != 1)
    throw DimensionError("expand_spatial expects unit spatial extents, got " + to_string(x.shape()));
  const std::size_t area = height * width;
  const std::size_t planes = p.batch * p.channels;
  Tensor<T> out(with_spatial(x.shape(), height, width));
  for (std::size_t q = 0; q < planes; ++q) std::fill(out.ptr() + q * area, out.ptr() + (q + 1) * area, x.value()[q]);
  return x.tape().record(std::move(out), {x}, [x, area, planes](const Tensor<T>& g) {
    Tensor<T>& gx = x.tape().grad_slot(x);
    for (std::size_t q = 0; q < planes; ++q) {
      T s = 0;
      for (std::size_t i = 0; i < area; ++i) s += g[q * area + i];
      gx[q] += s;
    }
  });
}

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw UsageError("concat_channels needs at least one operand");
  const Shape& first = parts.front().shape();
  const Planes p0 = as_planes(first, "concat_channels");
  std::size_t channels = 0;
  for (const Var<T>& v : parts) {
    const Planes p = as_planes(v.shape(), "concat_channels");
    if (v.shape().size() != first.size() || p.batch != p0.batch || p.height != p0.height || p.width != p0.width)
      throw DimensionError("concat_channels: spatial mismatch " + to_string(first) + " vs " + to_string(v.shape()));
    channels += p.channels;
  }
  Shape out_shape = first;
  out_shape[out_shape.size() - 3] = channels;
  Tensor<T> out(out_shape);
  const std::size_t area = p0.area();
  for (std::size_t b = 0; b < p0.batch; ++b) {
    std::size_t offset = 0;
    for (const Var<T>& v : parts) {
      const std::size_t c = v.shape()[v.shape().size() - 3];
      const T* src = v.value().ptr() + b * c * area;
      std::copy(src, src + c * area, out.ptr() + (b * channels + offset) * area);
      offset += c;
    }
  }
  return parts.front().tape().record(std::move(out), parts, [parts, channels, area, batch = p0.batch](const Tensor<T>& g) {
    std::size_t offset = 0;
    for (const Var<T>& v : parts) {
      const std::size_t c = v.shape()[v.shape().size() - 3];
      if (v.requires_grad()) {
        T* gv = v.tape().grad_slot(v).ptr();
        for (std::size_t b = 0; b < batch; ++b) {
          const T* src = g.ptr() + (b * channels + offset) * area;
          T* dst = gv + b * c * area;
          for (std::size_t i = 0; i < c * area; ++i) dst[i] += src[i];
        }
      }
      offset += c;
    }
  });
}

template <typename T>
Var<T> slice_channels(Var<T> x, std::size_t begin, std::size_t count) {
  const Planes p = as_planes(x.shape(), "slice_channels");
  if (count == 0 || begin + count > p.channels)
    throw DimensionError("slice_channels: range [" + std::to_string(begin) + "," + std::to_string(begin + count) +
                         ") outside " + to_string(x.shape()));
  Shape out_shape = x.shape();
  out_shape[out_shape.size() - 3] = count;
  Tensor<T> out(out_shape);
  const std::size_t area = p.area();
  for (std::size_t b = 0; b < p.batch; ++b) {
    const T* src = x.value().ptr() + (b * p.channels + begin) * area;
    std::copy(src, src + count * area, out.ptr() + b * count * area);
  }
  return x.tape().record(std::move(out), {x}, [x, p, begin, count, area](const Tensor<T>& g) {
    T* gx = x.tape().grad_slot(x).ptr();
    for (std::size_t b = 0; b < p.batch; ++b) {
      T* dst = gx + (b * p.channels + begin) * area;
      const T* src = g.ptr() + b * count * area;
      for (std::size_t i = 0; i < count * area; ++i) dst[i] += src[i];
    }
  });
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
  Tensor<T> out = x.value().reshaped(std::move(shape));
  return x.tape().record(std::move(out), {x}, [x](const Tensor<T>& g) { accumulate(x.tape().grad_slot(x), g); });
}

template <typename T>
Var<T> permute(Var<T> x, const std::vector<std::size_t>& axes) {
  const Shape& in = x.shape();
  const std::size_t r = in.size();
  std::vector<bool> seen(r, false);
  if (axes.size() != r) throw DimensionError("permute: axis list does not match rank of " + to_string(in));
  for (std::size_t a : axes) {
    if (a >= r || seen[a]) throw DimensionError("permute: invalid axis list for " + to_string(in));
    seen[a] = true;
  }
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = in[axes[i]];
  // Input stride associated with each output axis.
  std::vector<std::size_t> in_stride(r, 1), src_stride(r);
  for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * in[i];
  for (std::size_t i = 0; i < r; ++i) src_stride[i] = in_stride[axes[i]];
  const std::size_t n = x.value().size();
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t o = 0; o < n; ++o) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < r; ++i) off += idx[i] * src_stride[i];
    map[o] = off;
    for (std::size_t i = r; i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  Tensor<T> out(out_shape);
  for (std::size_t o = 0; o < n; ++o) out[o] = x.value()[map[o]];
  return x.tape().record(std::move(out), {x}, [x, map = std::move(map)](const Tensor<T>& g) {
    Tensor<T>& gx = x.tape().grad_slot(x);
    for (std::size_t o = 0; o < map.size(); ++o) gx[map[o]] += g[o];
  });
}

template <typename T>
Var<T> conv1x1(Var<T> x, Var<T> weight, Var<T> bias) {
  const Planes p = as_planes(x.shape(), "conv1x1");
  const Shape& ws = weight.shape();
  if (ws.size() != 2 || ws[1] != p.channels)
    throw DimensionError("conv1x1: weight " + to_string(ws) + " does not accept input " + to_string(x.shape()));
  const std::size_t co = ws[0], ci = ws[1], area = p.area();
  if (bias.valid() && bias.shape() != Shape{co})
    throw DimensionError("conv1x1: bias " + to_string(bias.shape()) + " for " + std::to_string(co) + " outputs");
  Shape out_shape = x.shape();
  out_shape[out_shape.size() - 3] = co;
  Tensor<T> out(out_shape);
  for (std::size_t b = 0; b < p.batch; ++b) {
    T* o = out.ptr() + b * co * area;
    if (bias.valid())
      for (std::size_t c = 0; c < co; ++c) std::fill(o + c * area, o + (c + 1) * area, bias.value()[c]);
    kernels::gemm(false, false, co, area, ci, weight.value().ptr(), x.value().ptr() + b * ci * area, o,
                  bias.valid());
  }
  std::vector<Var<T>> inputs{x, weight};
  if (bias.valid()) inputs.push_back(bias);
  return x.tape().record(std::move(out), inputs, [=](const Tensor<T>& g) {
    Tape<T>& t = x.tape();
    for (std::size_t b = 0; b < p.batch; ++b) {
      const T* gp = g.ptr() + b * co * area;
      const T* xp = x.value().ptr() + b * ci * area;
      if (weight.requires_grad()) kernels::gemm(false, true, co, ci, area, gp, xp, t.grad_slot(weight).ptr(), true);
      if (x.requires_grad())
        kernels::gemm(true, false, ci, area, co, weight.value().ptr(), gp, t.grad_slot(x).ptr() + b * ci * area,
                      true);
      if (bias.valid() && bias.requires_grad()) {
        Tensor<T>& gb = t.grad_slot(bias);
        for (std::size_t c = 0; c < co; ++c) {
          T s = 0;
          for (std::size_t i = 0; i < area; ++i) s += gp[c * area + i];
          gb[c] += s;
        }
      }
    }
  });
}

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> weight, std::size_t stride, std::size_t pad) {
  const Planes p = as_planes(x.shape(), "conv2d");
  const Shape& ws = weight.shape();
  if (ws.size() != 4 || ws[1] != p.channels || ws[2] != ws[3])
    throw DimensionError("conv2d: weight " + to_string(ws) + " does not accept input " + to_string(x.shape()));
  const std::size_t co = ws[0], ci = ws[1], k = ws[2];
  if (stride == 0 || p.height + 2 * pad < k || p.width + 2 * pad < k)
    throw DimensionError("conv2d: kernel larger than padded input " + to_string(x.shape()));
  const std::size_t oh = (p.height + 2 * pad - k) / stride + 1;
  const std::size_t ow = (p.width + 2 * pad - k) / stride + 1;
  const std::size_t oarea = oh * ow, rows = ci * k * k;
  Shape out_shape = x.shape();
  out_shape[out_shape.size() - 3] = co;
  out_shape[out_shape.size() - 2] = oh;
  out_shape[out_shape.size() - 1] = ow;
  Tensor<T> out(out_shape);
  std::vector<T> cols(rows * oarea);
  for (std::size_t b = 0; b < p.batch; ++b) {
    kernels::im2col(x.value().ptr() + b * p.per_sample(), ci, p.height, p.width, k, stride, pad, oh, ow, cols.data());
    kernels::gemm(false, false, co, oarea, rows, weight.value().ptr(), cols.data(), out.ptr() + b * co * oarea,
                  false);
  }
  return x.tape().record(std::move(out), {x, weight}, [=](const Tensor<T>& g) {
    Tape<T>& t = x.tape();
    std::vector<T> buf(rows * oarea);
    for (std::size_t b = 0; b < p.batch; ++b) {
      const T* gp = g.ptr() + b * co * oarea;
      if (weight.requires_grad()) {
        kernels::im2col(x.value().ptr() + b * p.per_sample(), ci, p.height, p.width, k, stride, pad, oh, ow,
                        buf.data());
        kernels::gemm(false, true, co, rows, oarea, gp, buf.data(), t.grad_slot(weight).ptr(), true);
      }
      if (x.requires_grad()) {
        kernels::gemm(true, false, rows, oarea, co, weight.value().ptr(), gp, buf.data(), false);
        kernels::col2im(buf.data(), ci, p.height, p.width, k, stride, pad, oh, ow,
                        t.grad_slot(x).ptr() + b * p.per_sample());
      }
    }
  });
}

template <typename T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, const RunningStats<T>& stats, bool training) {
  const Planes p = as_planes(x.shape(), "batch_norm");
  const std::size_t c = p.channels, area = p.area(), count = p.batch * area;
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c})
    throw DimensionError("batch_norm: affine parameters do not match " + std::to_string(c) + " channels");
  if (!stats.mean || !stats.var) throw UsageError("batch_norm: running statistics not bound");
  std::vector<T> mean(c), inv_std(c);
  const T* xv = x.value().ptr();
  if (training) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s = 0;
      for (std::size_t b = 0; b < p.batch; ++b) {
        const T* src = xv + (b * c + ch) * area;
        for (std::size_t i = 0; i < area; ++i) s += src[i];
      }
      const double mu = s / static_cast<double>(count);
      double ss = 0;
      for (std::size_t b = 0; b < p.batch; ++b) {
        const T* src = xv + (b * c + ch) * area;
        for (std::size_t i = 0; i < area; ++i) ss += (src[i] - mu) * (src[i] - mu);
      }
      const double var = ss / static_cast<double>(count);
      mean[ch] = static_cast<T>(mu);
      inv_std[ch] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(stats.eps)));
      const double unbiased = count > 1 ? ss / static_cast<double>(count - 1) : var;
      T& rm = stats.mean->value[ch];
      T& rv = stats.var->value[ch];
      rm = static_cast<T>((1 - stats.momentum) * rm + stats.momentum * mu);
      rv = static_cast<T>((1 - stats.momentum) * rv + stats.momentum * unbiased);
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] = stats.mean->value[ch];
      inv_std[ch] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(stats.var->value[ch] + stats.eps)));
    }
  }
  Tensor<T> out(x.shape());
  for (std::size_t b = 0; b < p.batch; ++b)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T* src = xv + (b * c + ch) * area;
      T* dst = out.ptr() + (b * c + ch) * area;
      const T gm = gamma.value()[ch] * inv_std[ch], bt = beta.value()[ch], mu = mean[ch];
      for (std::size_t i = 0; i < area; ++i) dst[i] = (src[i] - mu) * gm + bt;
    }
  return x.tape().record(std::move(out), {x, gamma, beta}, [=](const Tensor<T>& g) {
    Tape<T>& t = x.tape();
    const T* xv = x.value().ptr();
    for (std::size_t ch = 0; ch < c; ++ch) {
      // Channel sums of dy and dy*xhat.
      double sg = 0, sgx = 0;
      for (std::size_t b = 0; b < p.batch; ++b) {
        const T* src = xv + (b * c + ch) * area;
        const T* gp = g.ptr() + (b * c + ch) * area;
        for (std::size_t i = 0; i < area; ++i) {
          sg += gp[i];
          sgx += gp[i] * (src[i] - mean[ch]) * inv_std[ch];
        }
      }
      if (gamma.requires_grad()) t.grad_slot(gamma)[ch] += static_cast<T>(sgx);
      if (beta.requires_grad()) t.grad_slot(beta)[ch] += static_cast<T>(sg);
      if (!x.requires_grad()) continue;
      T* gx = t.grad_slot(x).ptr();
      const T gm = gamma.value()[ch] * inv_std[ch];
      for (std::size_t b = 0; b < p.batch; ++b) {
        const T* src = xv + (b * c + ch) * area;
        const T* gp = g.ptr() + (b * c + ch) * area;
        T* dst = gx + (b * c + ch) * area;
        if (training) {
          const T mg = static_cast<T>(sg / static_cast<double>(count));
          const T mgx = static_cast<T>(sgx / static_cast<double>(count));
          for (std::size_t i = 0; i < area; ++i) {
            const T xhat = (src[i] - mean[ch]) * inv_std[ch];
            dst[i] += gm * (gp[i] - mg - xhat * mgx);
          }
        } else {
          for (std::size_t i = 0; i < area; ++i) dst[i] += gm * gp[i];
        }
      }
    }
  });
}

template <typename T>
Var<T> dropout(Var<T> x, double rate, std::mt19937_64* rng) {
  if (rate < 0 || rate >= 1) throw UsageError("dropout rate must lie in [0,1)");
  if (!rng || rate == 0) return x;
  const T s = static_cast<T>(1.0 / (1.0 - rate));
  std::vector<T> mask(x.value().size());
  for (T& m : mask) m = uniform01(*rng) >= rate ? s : T{0};
  Tensor<T> out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return x.tape().record(std::move(out), {x}, [x, mask = std::move(mask)](const Tensor<T>& g) {
    Tensor<T>& gx = x.tape().grad_slot(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
  });
}

template <typename T>
Var<T> upsample_bilinear(Var<T> x, std::size_t factor) {
  const Planes p = as_planes(x.shape(), "upsample_bilinear");
  if (factor == 0) throw UsageError("upsample factor must be positive");
  const std::size_t oh = p.height * factor, ow = p.width * factor;
  const kernels::LerpAxis ay = kernels::lerp_axis(p.height, oh);
  const kernels::LerpAxis ax = kernels::lerp_axis(p.width, ow);
  const std::size_t planes = p.batch * p.channels;
  Tensor<T> out(with_spatial(x.shape(), oh, ow));
  std::vector<T> scratch;
  for (std::size_t q = 0; q < planes; ++q)
    kernels::resize_plane(x.value().ptr() + q * p.area(), p.height, p.width, ay, ax, out.ptr() + q * oh * ow,
                          scratch);
  return x.tape().record(std::move(out), {x}, [=](const Tensor<T>& g) {
    T* gx = x.tape().grad_slot(x).ptr();
    std::vector<T> buf;
    for (std::size_t q = 0; q < planes; ++q)
      kernels::resize_plane_backward(g.ptr() + q * oh * ow, p.height, p.width, ay, ax, gx + q * p.area(), buf);
  });
}

template <typename T>
Var<T> cross_entropy(Var<T> logits, std::span<const std::uint8_t> labels) {
  const Planes p = as_planes(logits.shape(), "cross_entropy");
  const std::size_t k = p.channels, area = p.area();
  if (labels.size() != p.batch * area)
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                         to_string(logits.shape()));
  const T* lv = logits.value().ptr();
  std::size_t valid = 0;
  double total = 0;
  // Softmax probabilities cached for the backward pass.
  std::vector<T> prob(logits.value().size(), T{0});
  for (std::size_t b = 0; b < p.batch; ++b)
    for (std::size_t i = 0; i < area; ++i) {
      const std::uint8_t y = labels[b * area + i];
      if (y == kIgnoreLabel) continue;
      if (y >= k)
        throw DataError("label " + std::to_string(y) + " out of range for " + std::to_string(k) + " classes");
      const T* base = lv + b * k * area + i;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t c = 0; c < k; ++c) mx = std::max(mx, base[c * area]);
      T s = 0;
      for (std::size_t c = 0; c < k; ++c) s += std::exp(base[c * area] - mx);
      const T lse = mx + std::log(s);
      total += static_cast<double>(lse - base[y * area]);
      T* pr = prob.data() + b * k * area + i;
      for (std::size_t c = 0; c < k; ++c) pr[c * area] = std::exp(base[c * area] - lse);
      ++valid;
    }
  const T loss = valid ? static_cast<T>(total / static_cast<double>(valid)) : T{0};
  std::vector<std::uint8_t> lab(labels.begin(), labels.end());
  return logits.tape().record(
      Tensor<T>::scalar(loss), {logits},
      [logits, p, k, area, valid, prob = std::move(prob), lab = std::move(lab)](const Tensor<T>& g) {
        if (valid == 0) return;
        T* gl = logits.tape().grad_slot(logits).ptr();
        const T w = g[0] / static_cast<T>(valid);
        for (std::size_t b = 0; b < p.batch; ++b)
          for (std::size_t i = 0; i < area; ++i) {
            const std::uint8_t y = lab[b * area + i];
            if (y == kIgnoreLabel) continue;
            const std::size_t base = b * k * area + i;
            for (std::size_t c = 0; c < k; ++c)
              gl[base + c * area] += w * (prob[base + c * area] - (c == y ? T{1} : T{0}));
          }
      });
}

#define ISNET_OPS(T)                                                                          \
  template Var<T> add(Var<T>, Var<T>);                                                        \
  template Var<T> sub(Var<T>, Var<T>);                                                        \
  template Var<T> mul(Var<T>, Var<T>);                                                        \
  template Var<T> scale(Var<T>, T);                                                           \
  template Var<T> relu(Var<T>);                                                               \
  template Var<T> sum(Var<T>);                                                                \
  template Var<T> matmul(Var<T>, Var<T>, bool, bool);                                         \
  template Var<T> softmax_last(Var<T>);                                                       \
  template Var<T> log_softmax_last(Var<T>);                                                   \
  template Var<T> mean_spatial(Var<T>);                                                       \
  template Var<T> expand_spatial(Var<T>, std::size_t, std::size_t);                           \
  template Var<T> concat_channels(const std::vector<Var<T>>&);                                \
  template Var<T> slice_channels(Var<T>, std::size_t, std::size_t);                           \
  template Var<T> reshape(Var<T>, Shape);                                                     \
  template Var<T> permute(Var<T>, const std::vector<std::size_t>&);                           \
  template Var<T> conv1x1(Var<T>, Var<T>, Var<T>);                                            \
  template Var<T> conv2d(Var<T>, Var<T>, std::size_t, std::size_t);                           \
  template Var<T> batch_norm(Var<T>, Var<T>, Var<T>, const RunningStats<T>&, bool);           \
  template Var<T> dropout(Var<T>, double, std::mt19937_64*);                                  \
  template Var<T> upsample_bilinear(Var<T>, std::size_t);                                     \
  template Var<T> cross_entropy(Var<T>, std::span<const std::uint8_t>);

ISNET_OPS(float)
ISNET_OPS(double)

#undef ISNET_OPS

}  // namespace isnet
