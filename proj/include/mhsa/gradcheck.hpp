#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mhsa/autodiff.hpp"
#include "mhsa/tensor.hpp"

namespace mhsa {

struct GradcheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Denominator floor for the relative error, so entries whose true gradient
  // is zero are judged on round-off scale rather than divided by ~0.
  double denominator_floor = 1e-6;
  // Coordinates whose left and right one-sided slopes disagree by more than
  // this are sitting on a ReLU/clamp/argmax kink and are skipped.
  double kink_tolerance = 1e-2;
  // Test hook: mutates analytic gradients before comparison.
  std::function<void(std::vector<Tensor>&)> corrupt_analytic;
};

struct GradcheckResult {
  std::string component;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  bool passed = false;
};

using ScalarGraph = std::function<ad::Var(ad::Tape&, std::span<const ad::Var>)>;

/// Compares the tape's gradient of `graph` with central finite differences
/// at `inputs`, coordinate by coordinate.
GradcheckResult check_gradients(std::string component, const ScalarGraph& graph, std::vector<Tensor> inputs,
                                const GradcheckOptions& options = {});

double relative_error(double analytic, double numeric, double floor);

}  // namespace mhsa
