#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mhsa/tensor.hpp"

namespace mhsa {

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
};

/// One bias-corrected Adam update. `names` is only used in error messages;
/// a non-finite gradient throws NumericError naming the parameter and leaves
/// parameters and state untouched.
void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, std::span<const std::string> names,
               AdamState& state, double lr);

}  // namespace mhsa
