#include "cardio/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace cardio {

namespace {

void check_step(double step) {
  if (!(step >= 1e-6 && step <= 1e-4)) {
    throw Error("grad_check: step " + std::to_string(step) + " outside [1e-6, 1e-4]");
  }
}

double scalar_of(Var<double> v) {
  if (v.value().size() != 1) {
    throw ShapeError("grad_check: function output must be scalar, got " + shape_string(v.shape()));
  }
  const double out = v.value()[0];
  if (!std::isfinite(out)) throw NumericError("grad_check: non-finite function value");
  return out;
}

void record_error(GradCheckReport& report, double analytic, double numeric,
                  const std::string& where) {
  const double err = std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic));
  if (report.coordinates++ == 0 || err > report.max_relative_error) {
    report.max_relative_error = err;
    report.worst = where;
  }
}

}  // namespace

GradCheckReport grad_check(const ScalarFunction& f, std::vector<Tensor<double>> points,
                           double step, std::vector<std::string> names) {
  check_step(step);
  names.resize(points.size());
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i].empty()) names[i] = "input" + std::to_string(i);
  }

  auto evaluate = [&](bool want_grads, std::vector<Tensor<double>>* grads) {
    Graph<double> g;
    std::vector<Var<double>> inputs;
    inputs.reserve(points.size());
    for (const auto& p : points) inputs.push_back(g.parameter(p));
    Var<double> out = f(g, inputs);
    const double value = scalar_of(out);
    if (want_grads) {
      g.backward(out);
      for (const auto& in : inputs) grads->push_back(g.grad(in));
    }
    return value;
  };

  std::vector<Tensor<double>> analytic;
  evaluate(true, &analytic);

  GradCheckReport report;
  for (std::size_t t = 0; t < points.size(); ++t) {
    for (std::size_t i = 0; i < points[t].size(); ++i) {
      const double saved = points[t][i];
      points[t][i] = saved + step;
      const double plus = evaluate(false, nullptr);
      points[t][i] = saved - step;
      const double minus = evaluate(false, nullptr);
      points[t][i] = saved;
      const double numeric = (plus - minus) / (2.0 * step);
      record_error(report, analytic[t][i], numeric, names[t] + "[" + std::to_string(i) + "]");
    }
  }
  return report;
}

GradCheckReport grad_check(const std::function<Var<double>(Graph<double>&, Var<double>)>& f,
                           const Tensor<double>& point, double step) {
  return grad_check(
      [&](Graph<double>& g, std::span<const Var<double>> in) { return f(g, in[0]); }, {point},
      step, {"x"});
}

GradCheckReport grad_check_parameters(
    ParameterStore<double>& store,
    const std::function<Var<double>(ParameterBinding<double>&)>& loss, double step) {
  check_step(step);
  const ParameterStore<double> pristine = store;

  auto evaluate = [&](std::vector<Tensor<double>>* grads) {
    Graph<double> g;
    ParameterBinding<double> binding(g, store);
    Var<double> out = loss(binding);
    const double value = scalar_of(out);
    if (grads) {
      g.backward(out);
      *grads = binding.gradients();
    }
    // buffers (running statistics) must not drift between evaluations
    for (std::size_t i = 0; i < store.size(); ++i) {
      if (store.entries()[i].kind == ParamKind::buffer) {
        store.entries()[i].value = pristine.entries()[i].value;
      }
    }
    return value;
  };

  std::vector<Tensor<double>> analytic;
  evaluate(&analytic);

  GradCheckReport report;
  for (std::size_t t = 0; t < store.size(); ++t) {
    auto& entry = store.entries()[t];
    if (entry.kind != ParamKind::trainable) continue;
    for (std::size_t i = 0; i < entry.value.size(); ++i) {
      const double saved = entry.value[i];
      entry.value[i] = saved + step;
      const double plus = evaluate(nullptr);
      entry.value[i] = saved - step;
      const double minus = evaluate(nullptr);
      entry.value[i] = saved;
      record_error(report, analytic[t][i], (plus - minus) / (2.0 * step),
                   entry.name + "[" + std::to_string(i) + "]");
    }
  }
  return report;
}

}  // namespace cardio
