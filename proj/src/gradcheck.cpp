#include "mhsa/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace mhsa {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

namespace {

double evaluate(const ScalarGraph& graph, const std::vector<Tensor>& inputs) {
  ad::Tape tape;
  std::vector<ad::Var> vars;
  vars.reserve(inputs.size());
  for (const Tensor& t : inputs) vars.push_back(tape.leaf(t, false));
  return graph(tape, vars).value().item();
}

}  // namespace

GradcheckResult check_gradients(std::string component, const ScalarGraph& graph, std::vector<Tensor> inputs,
                                const GradcheckOptions& options) {
  GradcheckResult result;
  result.component = std::move(component);

  std::vector<Tensor> analytic;
  {
    ad::Tape tape;
    std::vector<ad::Var> vars;
    for (const Tensor& t : inputs) vars.push_back(tape.leaf(t, true));
    tape.backward(graph(tape, vars));
    for (const ad::Var& v : vars) analytic.push_back(v.grad());
  }
  if (options.corrupt_analytic) options.corrupt_analytic(analytic);

  const double h = options.step;
  const double f0 = evaluate(graph, inputs);
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    for (std::size_t i = 0; i < inputs[t].size(); ++i) {
      const double orig = inputs[t][i];
      inputs[t][i] = orig + h;
      const double fp = evaluate(graph, inputs);
      inputs[t][i] = orig - h;
      const double fm = evaluate(graph, inputs);
      inputs[t][i] = orig;

      const double right = (fp - f0) / h;
      const double left = (f0 - fm) / h;
      if (std::abs(right - left) > options.kink_tolerance * std::max({1.0, std::abs(right), std::abs(left)})) {
        ++result.skipped;
        continue;
      }
      const double numeric = (fp - fm) / (2.0 * h);
      result.max_rel_error =
          std::max(result.max_rel_error, relative_error(analytic[t][i], numeric, options.denominator_floor));
      ++result.checked;
    }
  }
  result.passed = result.checked > 0 && result.max_rel_error < options.tolerance;
  return result;
}

}  // namespace mhsa
