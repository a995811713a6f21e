#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

// Dense evaluation of softmax(d^{-1/2} (A Wq)(B Wk)^T)(B Wv) with explicit
// loops in long double. Matrices are row-major.
namespace nnfc::oracle {

using Matrix = std::vector<std::vector<long double>>;

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  Matrix c(a.size(), std::vector<long double>(b[0].size(), 0.0L));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < b.size(); ++k)
      for (std::size_t j = 0; j < b[0].size(); ++j) c[i][j] += a[i][k] * b[k][j];
  return c;
}

inline Matrix cross_attention(const Matrix& a, const Matrix& b, const Matrix& wq, const Matrix& wk, const Matrix& wv) {
  const Matrix q = matmul(a, wq), k = matmul(b, wk), v = matmul(b, wv);
  const long double s = 1.0L / std::sqrt(static_cast<long double>(wq[0].size()));
  Matrix out(a.size(), std::vector<long double>(v[0].size(), 0.0L));
  for (std::size_t i = 0; i < a.size(); ++i) {
    std::vector<long double> e(b.size());
    long double z = 0.0L;
    for (std::size_t j = 0; j < b.size(); ++j) {
      long double dot = 0.0L;
      for (std::size_t c = 0; c < q[i].size(); ++c) dot += q[i][c] * k[j][c];
      e[j] = std::exp(s * dot);
      z += e[j];
    }
    for (std::size_t j = 0; j < b.size(); ++j)
      for (std::size_t c = 0; c < v[j].size(); ++c) out[i][c] += e[j] / z * v[j][c];
  }
  return out;
}

}  // namespace nnfc::oracle
