#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "isnet/grad_check.hpp"

namespace isnet {

struct GradCheckCase {
  std::string module;  // ilcm | slcm | fusion | loss
  std::string name;
  GradCheckReport report;
  double tolerance = 1e-5;
  std::size_t attempts = 1;  // instances drawn until the argmax margin held
  double margin = 0;         // smallest argmax margin at the probe point (0 if none)

  bool pass() const { return report.max_rel_error <= tolerance; }
};

// Smallest gap between the largest and second largest class logit over all
// positions of [K,h,w] or [B,K,h,w] logits.
double min_argmax_margin(const Tensor<double>& logits);

// Float64 finite-difference checks (eps = 1e-5) of every differentiable
// module on small random instances. `module` is all, ilcm, slcm, fusion or
// loss; anything else is a UsageError.
std::vector<GradCheckCase> run_gradcheck_suite(std::string_view module, std::uint64_t seed = 1);

}  // namespace isnet
