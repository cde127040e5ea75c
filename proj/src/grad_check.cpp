#include "isnet/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace isnet {

namespace {

double evaluate(const GradFn& fn, const std::vector<Tensor<double>>& inputs) {
  Tape<double> tape;
  std::vector<Var<double>> leaves;
  leaves.reserve(inputs.size());
  for (const auto& t : inputs) leaves.push_back(tape.constant(t));
  return fn(tape, leaves).value().item();
}

struct Probe {
  std::string where;
  double analytic, numeric;
};

}  // namespace

GradCheckReport grad_check(const GradFn& fn, std::vector<Tensor<double>> inputs,
                           const std::vector<Parameter<double>*>& params, double eps, GradCheckFloor floor) {
  std::vector<Tensor<double>> input_grads;
  {
    for (Parameter<double>* p : params) p->zero_grad();
    Tape<double> tape;
    std::vector<Var<double>> leaves;
    for (const auto& t : inputs) leaves.push_back(tape.leaf(t));
    Var<double> loss = fn(tape, leaves);
    tape.backward(loss);
    for (const auto& v : leaves) input_grads.push_back(v.grad());
  }

  auto central = [&](double& slot) {
    const double saved = slot;
    slot = saved + eps;
    const double up = evaluate(fn, inputs);
    slot = saved - eps;
    const double down = evaluate(fn, inputs);
    slot = saved;
    return (up - down) / (2 * eps);
  };
  std::vector<Probe> probes;
  for (std::size_t i = 0; i < inputs.size(); ++i)
    for (std::size_t k = 0; k < inputs[i].size(); ++k)
      probes.push_back({"input" + std::to_string(i) + "[" + std::to_string(k) + "]", input_grads[i][k],
                        central(inputs[i][k])});
  for (Parameter<double>* p : params)
    for (std::size_t k = 0; k < p->value.size(); ++k)
      probes.push_back({p->name + "[" + std::to_string(k) + "]", p->grad[k], central(p->value[k])});

  GradCheckReport r;
  for (const Probe& p : probes) r.scale = std::max(r.scale, std::abs(p.numeric));
  const double lower = std::max(floor.absolute, floor.relative * r.scale);
  for (const Probe& p : probes) {
    const double denom = std::max({std::abs(p.analytic), std::abs(p.numeric), lower});
    const double err = std::abs(p.analytic - p.numeric) / denom;
    ++r.components;
    if (r.worst.empty() || err > r.max_rel_error) {
      r.max_rel_error = err;
      r.worst = p.where;
      r.worst_analytic = p.analytic;
      r.worst_numeric = p.numeric;
    }
  }
  return r;
}

}  // namespace isnet
