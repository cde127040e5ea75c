#include "isnet/ilcm.hpp"

#include "isnet/error.hpp"

namespace isnet {

template <typename T>
Ilcm<T>::Ilcm(const std::string& name, std::size_t channels, BlockOptions opts)
    : fuse(name + ".fuse", 2 * channels, channels, opts) {}

template <typename T>
Var<T> Ilcm<T>::forward(Pass<T>& pass, Var<T> r) {
  const Planes p = as_planes(r.shape(), "ilcm");
  if (p.channels != channels())
    throw DimensionError("ilcm: expected " + std::to_string(channels()) + " channels, got " + to_string(r.shape()));
  Var<T> repeated = expand_spatial(global_context(r), p.height, p.width);
  return fuse.forward(pass, concat_channels<T>({repeated, r}));
}

template class Ilcm<float>;
template class Ilcm<double>;

}  // namespace isnet
