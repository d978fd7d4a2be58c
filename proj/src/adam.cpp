#include "mhsa/adam.hpp"

#include <cmath>

#include "mhsa/errors.hpp"

namespace mhsa {

void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, std::span<const std::string> names,
               AdamState& state, double lr) {
  if (params.size() != grads.size()) throw ContractError("adam_step: parameter/gradient count mismatch");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].shape() != params[i]->shape()) {
      throw DimensionError("adam_step: gradient shape " + shape_string(grads[i].shape()) + " != parameter shape " +
                           shape_string(params[i]->shape()));
    }
    if (!grads[i].all_finite()) {
      const std::string name = i < names.size() ? names[i] : "#" + std::to_string(i);
      throw NumericError("non-finite gradient for parameter " + name);
    }
  }
  if (state.m.empty()) {
    for (Tensor* p : params) {
      state.m.emplace_back(p->shape());
      state.v.emplace_back(p->shape());
    }
  }
  if (state.m.size() != params.size()) throw ContractError("adam_step: state does not match parameter list");

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    const Tensor& g = grads[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
      p[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + state.eps);
    }
  }
}

}  // namespace mhsa
