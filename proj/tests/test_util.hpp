#pragma once

#include <algorithm>
#include <random>
#include <string>
#include <vector>

#include "nnfc/grad_check.hpp"

#include "nnfc/ops.hpp"
#include "nnfc/params.hpp"

namespace nnfc::testing {

template <class T>
Tensor<T> random_tensor(std::mt19937_64& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<T> v(numel(shape));
  for (auto& x : v) x = static_cast<T>(static_cast<float>(dist(rng)));
  return Tensor<T>(std::move(shape), std::move(v));
}

template <class U, class T>
Tensor<U> cast_tensor(const Tensor<T>& t) {
  return Tensor<U>(t.shape(), std::vector<U>(t.data().begin(), t.data().end()));
}

// Test values are rounded through float so the same draw is exactly
// representable in both precisions.

// Values bounded away from zero, for kinked functions such as relu.
template <class T>
Tensor<T> random_nonzero(std::mt19937_64& rng, Shape shape, double margin = 0.1) {
  std::uniform_real_distribution<double> mag(margin, 1.0);
  std::bernoulli_distribution sign(0.5);
  std::vector<T> v(numel(shape));
  for (auto& x : v) x = static_cast<T>(static_cast<float>(sign(rng) ? mag(rng) : -mag(rng)));
  return Tensor<T>(std::move(shape), std::move(v));
}

// Reduces any tensor to a scalar through fixed random weights so that every
// output element carries a distinct gradient.
template <class T>
Tensor<T> project(const Tensor<T>& y, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  return sum(mul(y, random_tensor<T>(rng, y.shape())));
}

inline std::size_t uniform_size(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

// Replaces freshly initialised parameters (zero biases, unit gains) with
// generic values, so no ReLU input sits exactly on its kink.
template <class T>
void randomize_params(ParamStore<T>& store, std::uint64_t seed, double spread = 0.5) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-spread, spread);
  for (const auto& [name, param] : store.entries()) {
    const bool gain = name.size() > 2 && name.compare(name.size() - 2, 2, ".g") == 0;
    Tensor<T> t = param;
    for (auto& v : t.mutable_data()) v = static_cast<T>(static_cast<float>((gain ? 1.0 : 0.0) + dist(rng)));
  }
}

// Step of the double-precision reference difference quotient. Kept small so
// the stencil rarely straddles a relu kink in deep compositions.
inline constexpr double kRefEps = 1e-6;

// Gradient error of f at x against the same generic function evaluated in double.
template <class T, class F>
double fd_error(F&& f, Tensor<T>& x) {
  Tensor<double> ref(x.shape(), std::vector<double>(x.size(), 0.0));
  return grad_check_against([&](const Tensor<T>& v) { return f(v); }, x,
                            [&](const Tensor<double>& v) { return f(v); }, ref, kRefEps)
      .max_rel_error;
}

// Worst gradient error of scalar f() over every parameter of store whose name
// starts with prefix. g() is the same computation over ref_store, a double
// store with the same layout; it is first synchronised to store's values.
template <class T, class F, class G>
double store_grad_error(const ParamStore<T>& store, F&& f, const ParamStore<double>& ref_store, G&& g,
                        const std::string& prefix = "") {
  const auto& entries = store.entries();
  const auto& ref_entries = ref_store.entries();
  if (entries.size() != ref_entries.size()) throw DimensionError("reference store layout differs");
  for (std::size_t i = 0; i < entries.size(); ++i) {
    Tensor<double> r = ref_entries[i].second;
    auto src = entries[i].second.data();
    auto dst = r.mutable_data();
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = static_cast<double>(src[j]);
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].first.rfind(prefix, 0) != 0) continue;
    Tensor<T> x = entries[i].second;
    Tensor<double> r = ref_entries[i].second;
    const auto res = grad_check_against([&](const Tensor<T>&) { return f(); }, x,
                                        [&](const Tensor<double>&) { return g(); }, r, kRefEps);
    worst = std::max(worst, res.max_rel_error);
  }
  return worst;
}

// Pass thresholds for a precision.
template <class T>
struct GradTolerance;
template <>
struct GradTolerance<float> {
  static constexpr double primitive = 1e-4;
  static constexpr double composite = 1e-3;
};
template <>
struct GradTolerance<double> {
  static constexpr double primitive = 1e-6;
  static constexpr double composite = 1e-6;
};

}  // namespace nnfc::testing
