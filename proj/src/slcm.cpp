#include "isnet/slcm.hpp"

#include <cmath>
#include <limits>

#include "isnet/error.hpp"

namespace isnet {

std::vector<std::size_t> RegionAssignment::counts() const {
  std::vector<std::size_t> n(classes, 0);
  for (std::uint32_t l : labels) ++n[l];
  return n;
}

namespace {

template <typename T>
RegionAssignment assign_plane(const T* logits, std::size_t k, std::size_t h, std::size_t w) {
  RegionAssignment a;
  a.classes = k;
  a.height = h;
  a.width = w;
  const std::size_t n = h * w;
  a.labels.assign(n, 0);
  for (std::size_t p = 0; p < n; ++p) {
    T best = logits[p];
    std::uint32_t arg = 0;
    for (std::size_t c = 1; c < k; ++c)
      if (logits[c * n + p] > best) {
        best = logits[c * n + p];
        arg = static_cast<std::uint32_t>(c);
      }
    a.labels[p] = arg;
  }
  return a;
}

void check_assignment(const RegionAssignment& a, std::size_t k, std::size_t h, std::size_t w) {
  if (a.classes != k || a.height != h || a.width != w || a.labels.size() != h * w)
    throw DimensionError("region assignment does not match logits of " + std::to_string(k) + " classes over " +
                         std::to_string(h) + "x" + std::to_string(w));
}

// Pools one sample. r: [C,N], d: [K,N]. Writes per-pixel pooling weights
// (weight of each pixel inside its own region) and per-class vectors [K,C].
template <typename T>
void pool_sample(const T* r, const T* d, std::size_t c_dim, std::size_t k, std::size_t n,
                 const std::vector<std::uint32_t>& labels, T* weight, T* vectors, std::vector<std::size_t>& counts) {
  std::vector<T> peak(k, -std::numeric_limits<T>::infinity());
  std::vector<T> total(k, T{0});
  counts.assign(k, 0);
  for (std::size_t p = 0; p < n; ++p) {
    const std::uint32_t c = labels[p];
    ++counts[c];
    peak[c] = std::max(peak[c], d[c * n + p]);
  }
  for (std::size_t p = 0; p < n; ++p) {
    const std::uint32_t c = labels[p];
    weight[p] = std::exp(d[c * n + p] - peak[c]);
    total[c] += weight[p];
  }
  for (std::size_t p = 0; p < n; ++p) weight[p] /= total[labels[p]];
  std::fill(vectors, vectors + k * c_dim, T{0});
  for (std::size_t ch = 0; ch < c_dim; ++ch) {
    const T* row = r + ch * n;
    for (std::size_t p = 0; p < n; ++p) vectors[labels[p] * c_dim + ch] += weight[p] * row[p];
  }
}

}  // namespace

template <typename T>
RegionAssignment group_regions(const Tensor<T>& logits) {
  if (logits.rank() != 3) throw DimensionError("group_regions expects [K,h,w], got " + to_string(logits.shape()));
  return assign_plane(logits.ptr(), logits.dim(0), logits.dim(1), logits.dim(2));
}

template <typename T>
std::vector<RegionAssignment> group_regions_batch(const Tensor<T>& logits) {
  const Planes p = as_planes(logits.shape(), "group_regions");
  std::vector<RegionAssignment> out;
  out.reserve(p.batch);
  for (std::size_t b = 0; b < p.batch; ++b)
    out.push_back(assign_plane(logits.ptr() + b * p.per_sample(), p.channels, p.height, p.width));
  return out;
}

template <typename T>
RegionRepr<T> region_representations(const Tensor<T>& r, const Tensor<T>& d, const RegionAssignment& a) {
  if (r.rank() != 3 || d.rank() != 3 || r.dim(1) != d.dim(1) || r.dim(2) != d.dim(2))
    throw DimensionError("region pooling expects [C,h,w] features and [K,h,w] logits, got " + to_string(r.shape()) +
                         " and " + to_string(d.shape()));
  const std::size_t c_dim = r.dim(0), k = d.dim(0), n = r.dim(1) * r.dim(2);
  check_assignment(a, k, r.dim(1), r.dim(2));
  std::vector<T> weight(n), vectors(k * c_dim);
  RegionRepr<T> out;
  out.channels = c_dim;
  pool_sample(r.ptr(), d.ptr(), c_dim, k, n, a.labels, weight.data(), vectors.data(), out.counts);
  out.vectors.resize(k);
  out.weights.resize(k);
  for (std::size_t c = 0; c < k; ++c)
    if (out.counts[c]) out.vectors[c].assign(vectors.begin() + c * c_dim, vectors.begin() + (c + 1) * c_dim);
  for (std::size_t p = 0; p < n; ++p) out.weights[a.labels[p]].push_back(weight[p]);
  return out;
}

template <typename T>
std::optional<std::vector<T>> region_representation(const Tensor<T>& r, const Tensor<T>& d,
                                                    const RegionAssignment& a, std::size_t c) {
  if (c >= a.classes) throw UsageError("class index " + std::to_string(c) + " out of range");
  RegionRepr<T> all = region_representations(r, d, a);
  if (!all.present(c)) return std::nullopt;
  return std::move(all.vectors[c]);
}

template <typename T>
Tensor<T> scatter_regions(const RegionAssignment& a, const RegionRepr<T>& reprs) {
  const std::size_t c_dim = reprs.channels, n = a.positions();
  Tensor<T> out({c_dim, a.height, a.width});
  for (std::size_t p = 0; p < n; ++p) {
    const std::uint32_t c = a.labels[p];
    if (c >= reprs.vectors.size() || reprs.vectors[c].size() != c_dim)
      throw InternalError("no region vector for assigned class " + std::to_string(c));
    for (std::size_t ch = 0; ch < c_dim; ++ch) out[ch * n + p] = reprs.vectors[c][ch];
  }
  return out;
}

template <typename T>
Var<T> semantic_context(Var<T> r, Var<T> d, const std::vector<RegionAssignment>& regions) {
  const Planes pr = as_planes(r.shape(), "semantic_context");
  const Planes pd = as_planes(d.shape(), "semantic_context");
  if (r.shape().size() != d.shape().size() || pr.batch != pd.batch || pr.height != pd.height ||
      pr.width != pd.width)
    throw DimensionError("semantic_context: features " + to_string(r.shape()) + " and logits " +
                         to_string(d.shape()) + " disagree");
  if (regions.size() != pr.batch)
    throw DimensionError("semantic_context: " + std::to_string(regions.size()) + " assignments for batch " +
                         std::to_string(pr.batch));
  const std::size_t c_dim = pr.channels, k = pd.channels, n = pr.area();
  for (const auto& a : regions) check_assignment(a, k, pr.height, pr.width);

  std::vector<T> weight(pr.batch * n), vectors(pr.batch * k * c_dim);
  std::vector<std::size_t> counts;
  Tensor<T> out(r.shape());
  for (std::size_t b = 0; b < pr.batch; ++b) {
    const std::vector<std::uint32_t>& labels = regions[b].labels;
    T* vec = vectors.data() + b * k * c_dim;
    pool_sample(r.value().ptr() + b * c_dim * n, d.value().ptr() + b * k * n, c_dim, k, n, labels,
                weight.data() + b * n, vec, counts);
    T* o = out.ptr() + b * c_dim * n;
    for (std::size_t ch = 0; ch < c_dim; ++ch)
      for (std::size_t p = 0; p < n; ++p) o[ch * n + p] = vec[labels[p] * c_dim + ch];
  }

  return r.tape().record(
      std::move(out), {r, d},
      [r, d, regions, c_dim, k, n, batch = pr.batch, weight = std::move(weight),
       vectors = std::move(vectors)](const Tensor<T>& g) {
        Tape<T>& t = r.tape();
        std::vector<T> gvec(k * c_dim);
        for (std::size_t b = 0; b < batch; ++b) {
          const std::vector<std::uint32_t>& labels = regions[b].labels;
          const T* gp = g.ptr() + b * c_dim * n;
          const T* rp = r.value().ptr() + b * c_dim * n;
          const T* w = weight.data() + b * n;
          const T* vec = vectors.data() + b * k * c_dim;
          // Gradient reaching each region vector: sum over its pixels.
          std::fill(gvec.begin(), gvec.end(), T{0});
          for (std::size_t ch = 0; ch < c_dim; ++ch)
            for (std::size_t p = 0; p < n; ++p) gvec[labels[p] * c_dim + ch] += gp[ch * n + p];
          if (r.requires_grad()) {
            T* gr = t.grad_slot(r).ptr() + b * c_dim * n;
            for (std::size_t ch = 0; ch < c_dim; ++ch)
              for (std::size_t p = 0; p < n; ++p) gr[ch * n + p] += w[p] * gvec[labels[p] * c_dim + ch];
          }
          if (d.requires_grad()) {
            T* gd = t.grad_slot(d).ptr() + b * k * n;
            // dL/dz_p = w_p * (r_p - v_c) . g_c for the region c of pixel p.
            std::vector<T> dots(n, T{0});
            for (std::size_t ch = 0; ch < c_dim; ++ch)
              for (std::size_t p = 0; p < n; ++p) {
                const std::size_t c = labels[p];
                dots[p] += (rp[ch * n + p] - vec[c * c_dim + ch]) * gvec[c * c_dim + ch];
              }
            for (std::size_t p = 0; p < n; ++p) gd[labels[p] * n + p] += w[p] * dots[p];
          }
        }
      });
}

template <typename T>
Slcm<T>::Slcm(const std::string& name, std::size_t channels, std::size_t hidden, std::size_t classes)
    : head(name + ".head", channels, hidden, classes) {}

template <typename T>
Var<T> Slcm<T>::predict_distribution(Pass<T>& pass, Var<T> r) {
  const Planes p = as_planes(r.shape(), "predict_distribution");
  if (p.channels != head.first.in_channels())
    throw DimensionError("slcm: expected " + std::to_string(head.first.in_channels()) + " channels, got " +
                         to_string(r.shape()));
  return head.forward(pass, r);
}

template <typename T>
SlcmOutput<T> Slcm<T>::forward(Pass<T>& pass, Var<T> r, const std::vector<RegionAssignment>* fixed) {
  SlcmOutput<T> out;
  out.distribution = predict_distribution(pass, r);
  out.regions = fixed ? *fixed : group_regions_batch(out.distribution.value());
  out.context = semantic_context(r, out.distribution, out.regions);
  return out;
}

#define ISNET_SLCM(T)                                                                                          \
  template RegionAssignment group_regions<T>(const Tensor<T>&);                                               \
  template std::vector<RegionAssignment> group_regions_batch<T>(const Tensor<T>&);                            \
  template RegionRepr<T> region_representations<T>(const Tensor<T>&, const Tensor<T>&,                        \
                                                   const RegionAssignment&);                                  \
  template std::optional<std::vector<T>> region_representation<T>(const Tensor<T>&, const Tensor<T>&,         \
                                                                   const RegionAssignment&, std::size_t);     \
  template Tensor<T> scatter_regions<T>(const RegionAssignment&, const RegionRepr<T>&);                       \
  template Var<T> semantic_context<T>(Var<T>, Var<T>, const std::vector<RegionAssignment>&);                  \
  template class Slcm<T>;

ISNET_SLCM(float)
ISNET_SLCM(double)

#undef ISNET_SLCM

}  // namespace isnet
