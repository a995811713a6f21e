#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "nnfc/tensor.hpp"

namespace nnfc {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::vector<double> analytic;
  std::vector<double> numeric;
};

// Compares the tape gradient of scalar f at x with a fourth-order central
// difference (8 (g(r+h) - g(r-h)) - (g(r+2h) - g(r-2h))) / (12 h) of a reference
// function g, evaluated at r = x cast to the reference precision. Passing the
// same function at double precision as g checks a float gradient without the
// float rounding of f itself dominating the difference quotient.
//
// The error of element i is |analytic_i - numeric_i| / max_j(|analytic_j|, |numeric_j|),
// i.e. relative to the gradient's largest component, so that near-zero entries
// are not judged on their own rounding noise.
template <class T, class R, class F, class G>
GradCheckResult grad_check_against(F&& f, Tensor<T>& x, G&& g, Tensor<R>& ref, double eps) {
  if (x.size() != ref.size()) throw DimensionError("grad_check: reference point has a different size");
  const bool was_required = x.requires_grad();
  x.set_requires_grad(true);
  x.zero_grad();
  {
    Tensor<T> y = f(x);
    if (y.size() != 1) throw ContractError("grad_check: f must return a scalar, got " + shape_str(y.shape()));
    y.backward();
  }
  GradCheckResult result;
  result.analytic.assign(x.size(), 0.0);
  if (x.has_grad()) {
    for (std::size_t i = 0; i < x.size(); ++i) result.analytic[i] = static_cast<double>(x.grad()[i]);
  }
  x.zero_grad();
  x.set_requires_grad(was_required);
  result.numeric.resize(x.size());
  {
    NoGradGuard no_grad;
    auto src = x.data();
    auto data = ref.mutable_data();
    for (std::size_t i = 0; i < ref.size(); ++i) data[i] = static_cast<R>(src[i]);
    for (std::size_t i = 0; i < ref.size(); ++i) {
      const R saved = data[i];
      auto at = [&](double offset) {
        data[i] = static_cast<R>(static_cast<double>(saved) + offset);
        return static_cast<double>(g(ref).item());
      };
      const double near = at(eps) - at(-eps);
      const double far = at(2.0 * eps) - at(-2.0 * eps);
      data[i] = saved;
      result.numeric[i] = (8.0 * near - far) / (12.0 * eps);
    }
  }
  double scale = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    scale = std::max({scale, std::abs(result.analytic[i]), std::abs(result.numeric[i])});
  }
  if (scale == 0.0) return result;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double err = std::abs(result.analytic[i] - result.numeric[i]) / scale;
    if (err > result.max_rel_error) {
      result.max_rel_error = err;
      result.worst_index = i;
    }
  }
  return result;
}

// Same-precision check: f is its own reference.
template <class T, class F>
GradCheckResult grad_check_detailed(F&& f, Tensor<T>& x, double eps) {
  return grad_check_against(f, x, f, x, eps);
}

template <class T, class F>
double grad_check(F&& f, Tensor<T>& x, double eps) {
  return grad_check_detailed(std::forward<F>(f), x, eps).max_rel_error;
}

}  // namespace nnfc
