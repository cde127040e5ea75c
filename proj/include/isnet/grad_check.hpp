#pragma once

#include <functional>
#include <string>
#include <vector>

#include "isnet/tape.hpp"

namespace isnet {

struct GradCheckReport {
  double max_rel_error = 0;
  std::size_t components = 0;
  std::string worst;  // "<target>[<index>]" of the worst component
  double worst_analytic = 0;
  double worst_numeric = 0;
  double scale = 0;  // largest numeric gradient magnitude
};

// Lower bound of the relative-error denominator: max(absolute, relative *
// largest numeric gradient). Keeps structurally zero or tiny components from
// turning finite-difference round-off into large relative error.
struct GradCheckFloor {
  double absolute = 1e-12;
  double relative = 0;
};

// Builds a scalar loss from leaf variables standing for `inputs`.
using GradFn = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>& inputs)>;

// Compares reverse-mode gradients against central differences for every
// component of `inputs` and of `params`. Relative error per component is
// |a - n| / max(|a|, |n|, floor).
GradCheckReport grad_check(const GradFn& fn, std::vector<Tensor<double>> inputs,
                           const std::vector<Parameter<double>*>& params = {}, double eps = 1e-5,
                           GradCheckFloor floor = {});

}  // namespace isnet
