#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "lanatt/numerics/tape.hpp"

namespace lanatt::numerics {

/// Scalar function of parameter leaves, evaluated on a fresh tape.
using ScalarFunction = std::function<Var(Tape&, const std::vector<Var>&)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_element = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
};

/// Default denominator floor of relative_error.
inline constexpr double kGradientFloor = 1e-8;

/// |analytic - numeric| / max(|analytic|, |numeric|, floor).
inline double relative_error(double analytic, double numeric, double floor = kGradientFloor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

inline std::vector<Tensor> gradients(const ScalarFunction& f, const std::vector<Tensor>& params) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const Tensor& p : params) vars.push_back(tape.parameter(p));
  Var loss = f(tape, vars);
  tape.backward(loss);
  std::vector<Tensor> out;
  out.reserve(vars.size());
  for (const Var& v : vars) out.push_back(tape.grad(v));
  return out;
}

inline double evaluate(const ScalarFunction& f, const std::vector<Tensor>& params) {
  Tape tape;
  std::vector<Var> vars;
  for (const Tensor& p : params) vars.push_back(tape.constant(p));
  return f(tape, vars).value().item();
}

/// Compares backward() against central differences with step h over every
/// element of every parameter; reports the largest relative error.
inline GradCheckResult finite_diff_check(const ScalarFunction& f, std::vector<Tensor> params, double h,
                                         double floor = kGradientFloor) {
  const std::vector<Tensor> analytic = gradients(f, params);
  GradCheckResult result;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t k = 0; k < params[p].size(); ++k) {
      const double saved = params[p][k];
      params[p][k] = saved + h;
      const double up = evaluate(f, params);
      params[p][k] = saved - h;
      const double down = evaluate(f, params);
      params[p][k] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double err = relative_error(analytic[p][k], numeric, floor);
      ++result.checked;
      if (err > result.max_rel_error || result.checked == 1) {
        result.max_rel_error = err;
        result.worst_param = p;
        result.worst_element = k;
        result.analytic = analytic[p][k];
        result.numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace lanatt::numerics
