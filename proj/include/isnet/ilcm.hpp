#pragma once

#include "isnet/blocks.hpp"

namespace isnet {

// Channel-wise spatial mean G of a [..,C,h,w] map, shape [..,C,1,1].
template <typename T>
Var<T> global_context(Var<T> r) {
  return mean_spatial(r);
}

// Image-level context: R_il = F(repeat(G) (+) R), with F a 1x1 block 2C -> C.
// Any map [C,h,w] -> [C,h,w] with this forward signature may stand in.
template <typename T>
class Ilcm {
 public:
  Ilcm() = default;
  Ilcm(const std::string& name, std::size_t channels, BlockOptions opts = {});

  Var<T> forward(Pass<T>& pass, Var<T> r);

  std::size_t channels() const { return fuse.conv.out_channels(); }

  template <typename F>
  void visit(F&& f) {
    fuse.visit(f);
  }

  ConvBlock1x1<T> fuse;
};

}  // namespace isnet
