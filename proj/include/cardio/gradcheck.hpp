#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cardio/autograd.hpp"
#include "cardio/parameters.hpp"

namespace cardio {

struct GradCheckReport {
  /// max over coordinates of |analytic - numeric| / max(1, |analytic|)
  double max_relative_error = 0.0;
  std::size_t coordinates = 0;
  std::string worst;  // "<input>[<flat index>]"
};

using ScalarFunction = std::function<Var<double>(Graph<double>&, std::span<const Var<double>>)>;

/// Compares reverse-mode gradients of `f` at `points` against central
/// differences (f(x + h e) - f(x - h e)) / 2h. `step` must lie in [1e-6, 1e-4].
GradCheckReport grad_check(const ScalarFunction& f, std::vector<Tensor<double>> points, double step,
                           std::vector<std::string> names = {});

/// Single-input convenience form.
GradCheckReport grad_check(const std::function<Var<double>(Graph<double>&, Var<double>)>& f,
                           const Tensor<double>& point, double step);

/// Checks every trainable coordinate of `store` against the scalar `loss`.
/// Buffers are restored after every evaluation so the check has no side effects.
GradCheckReport grad_check_parameters(
    ParameterStore<double>& store,
    const std::function<Var<double>(ParameterBinding<double>&)>& loss, double step);

}  // namespace cardio
