#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "nnfc/tensor.hpp"

// Differentiable primitives. Every op takes and returns Tensor<T> and, when
// an input requires a gradient, records a backward rule on the result node.
// Broadcasting is limited to add_bias over the last axis.

namespace nnfc {

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;

inline void require_rank(const Shape& s, std::size_t rank, const char* op) {
  if (s.size() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(s));
  }
}

inline void require_same(const Shape& a, const Shape& b, const char* op) {
  if (a != b) throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

// Splits a shape around `axis` into (outer, axis length, inner) extents.
inline void split_axis(const Shape& s, std::size_t axis, std::size_t& outer, std::size_t& len, std::size_t& inner) {
  if (axis >= s.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  }
  outer = 1;
  inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  len = s[axis];
}

}  // namespace detail

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank(a.shape(), 2, "matmul");
  detail::require_rank(b.shape(), 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " * " + shape_str(b.shape()));
  }
  Buffer<T> out(m * n);
  detail::MapMat<T>(out.data(), m, n).noalias() =
      detail::CMapMat<T>(a.data().data(), m, k) * detail::CMapMat<T>(b.data().data(), k, n);
  return Tensor<T>::from_op({m, n}, std::move(out), {a.node(), b.node()}, [m, k, n](auto& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    detail::CMapMat<T> g(self.grad.data(), m, n);
    if (pa.requires_grad) {
      detail::MapMat<T>(pa.grad_buffer(), m, k).noalias() += g * detail::CMapMat<T>(pb.value.data(), k, n).transpose();
    }
    if (pb.requires_grad) {
      detail::MapMat<T>(pb.grad_buffer(), k, n).noalias() += detail::CMapMat<T>(pa.value.data(), m, k).transpose() * g;
    }
  });
}

template <class T>
Tensor<T> transpose(const Tensor<T>& a) {
  detail::require_rank(a.shape(), 2, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  Buffer<T> out(m * n);
  detail::MapMat<T>(out.data(), n, m) = detail::CMapMat<T>(a.data().data(), m, n).transpose();
  return Tensor<T>::from_op({n, m}, std::move(out), {a.node()}, [m, n](auto& self) {
    auto& pa = *self.parents[0];
    detail::MapMat<T>(pa.grad_buffer(), m, n) += detail::CMapMat<T>(self.grad.data(), n, m).transpose();
  });
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same(a.shape(), b.shape(), "add");
  Buffer<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return Tensor<T>::from_op(a.shape(), std::move(out), {a.node(), b.node()}, [](auto& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      T* g = p->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same(a.shape(), b.shape(), "mul");
  Buffer<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return Tensor<T>::from_op(a.shape(), std::move(out), {a.node(), b.node()}, [](auto& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      T* g = pa.grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      T* g = pb.grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  Buffer<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * s;
  return Tensor<T>::from_op(a.shape(), std::move(out), {a.node()}, [s](auto& self) {
    T* g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * s;
  });
}

// x[..., n] + bias[n]
template <class T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  detail::require_rank(bias.shape(), 1, "add_bias");
  const std::size_t n = bias.dim(0);
  if (x.shape().back() != n) {
    throw DimensionError("add_bias: last axis " + shape_str(x.shape()) + " vs bias " + shape_str(bias.shape()));
  }
  const std::size_t rows = x.size() / n;
  Buffer<T> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] = x[r * n + c] + bias[c];
  }
  return Tensor<T>::from_op(x.shape(), std::move(out), {x.node(), bias.node()}, [rows, n](auto& self) {
    auto& px = *self.parents[0];
    auto& pb = *self.parents[1];
    if (px.requires_grad) {
      T* g = px.grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      T* g = pb.grad_buffer();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < n; ++c) g[c] += self.grad[r * n + c];
      }
    }
  });
}

template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw DimensionError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  Buffer<T> out(a.data().begin(), a.data().end());
  return Tensor<T>::from_op(std::move(shape), std::move(out), {a.node()}, [](auto& self) {
    T* g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  const Shape& first = parts[0].shape();
  std::size_t outer = 0, len0 = 0, inner = 0;
  detail::split_axis(first, axis, outer, len0, inner);
  std::vector<std::size_t> lens;
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != first.size()) throw DimensionError("concat: rank mismatch " + shape_str(p.shape()));
    for (std::size_t i = 0; i < first.size(); ++i) {
      if (i != axis && p.dim(i) != first[i]) {
        throw DimensionError("concat: shape mismatch " + shape_str(first) + " vs " + shape_str(p.shape()));
      }
    }
    lens.push_back(p.dim(axis));
    total += p.dim(axis);
  }
  Shape shape = first;
  shape[axis] = total;
  Buffer<T> out(numel(shape));
  std::vector<std::shared_ptr<detail::Node<T>>> parents;
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const std::size_t chunk = lens[k] * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(parts[k].data().begin() + o * chunk, chunk, out.begin() + o * total * inner + offset);
    }
    offset += chunk;
    parents.push_back(parts[k].node());
  }
  return Tensor<T>::from_op(std::move(shape), std::move(out), std::move(parents),
                            [lens, outer, inner, total](auto& self) {
                              std::size_t off = 0;
                              for (std::size_t k = 0; k < lens.size(); ++k) {
                                const std::size_t chunk = lens[k] * inner;
                                auto& p = *self.parents[k];
                                if (p.requires_grad) {
                                  T* g = p.grad_buffer();
                                  for (std::size_t o = 0; o < outer; ++o) {
                                    const T* src = self.grad.data() + o * total * inner + off;
                                    for (std::size_t i = 0; i < chunk; ++i) g[o * chunk + i] += src[i];
                                  }
                                }
                                off += chunk;
                              }
                            });
}

// Elements [begin, end) along `axis`.
template <class T>
Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t begin, std::size_t end) {
  std::size_t outer = 0, len = 0, inner = 0;
  detail::split_axis(a.shape(), axis, outer, len, inner);
  if (begin >= end || end > len) {
    throw DimensionError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) + ") on " +
                         shape_str(a.shape()));
  }
  Shape shape = a.shape();
  shape[axis] = end - begin;
  const std::size_t chunk = (end - begin) * inner;
  Buffer<T> out(outer * chunk);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(a.data().begin() + o * len * inner + begin * inner, chunk, out.begin() + o * chunk);
  }
  return Tensor<T>::from_op(std::move(shape), std::move(out), {a.node()},
                            [outer, len, inner, begin, chunk](auto& self) {
                              T* g = self.parents[0]->grad_buffer();
                              for (std::size_t o = 0; o < outer; ++o) {
                                T* dst = g + o * len * inner + begin * inner;
                                for (std::size_t i = 0; i < chunk; ++i) dst[i] += self.grad[o * chunk + i];
                              }
                            });
}

// Mean over the rows of a [n, c] tensor selected by `row_mask` (all rows when empty).
template <class T>
Tensor<T> mean_pool(const Tensor<T>& x, const std::vector<std::uint8_t>& row_mask = {}) {
  detail::require_rank(x.shape(), 2, "mean_pool");
  const std::size_t n = x.dim(0), c = x.dim(1);
  if (!row_mask.empty() && row_mask.size() != n) throw DimensionError("mean_pool: mask length mismatch");
  std::vector<std::uint8_t> mask = row_mask.empty() ? std::vector<std::uint8_t>(n, 1) : row_mask;
  std::size_t count = 0;
  for (auto m : mask) count += m ? 1 : 0;
  if (count == 0) throw ContractError("mean_pool: no rows selected");
  const T inv = T(1) / static_cast<T>(count);
  Buffer<T> out(c, T(0));
  for (std::size_t r = 0; r < n; ++r) {
    if (!mask[r]) continue;
    for (std::size_t j = 0; j < c; ++j) out[j] += x[r * c + j];
  }
  for (auto& v : out) v *= inv;
  return Tensor<T>::from_op({1, c}, std::move(out), {x.node()}, [mask, n, c, inv](auto& self) {
    T* g = self.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < n; ++r) {
      if (!mask[r]) continue;
      for (std::size_t j = 0; j < c; ++j) g[r * c + j] += self.grad[j] * inv;
    }
  });
}

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = T(0);
  for (auto v : x.data()) acc += v;
  return Tensor<T>::from_op({1}, {acc}, {x.node()}, [](auto& self) {
    auto& p = *self.parents[0];
    T* g = p.grad_buffer();
    for (std::size_t i = 0; i < p.value.size(); ++i) g[i] += self.grad[0];
  });
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  Buffer<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  return Tensor<T>::from_op(x.shape(), std::move(out), {x.node()}, [](auto& self) {
    auto& p = *self.parents[0];
    T* g = p.grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (p.value[i] > T(0)) g[i] += self.grad[i];
    }
  });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  Buffer<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = T(1) / (T(1) + std::exp(-x[i]));
  return Tensor<T>::from_op(x.shape(), std::move(out), {x.node()}, [](auto& self) {
    T* g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const T y = self.value[i];
      g[i] += self.grad[i] * y * (T(1) - y);
    }
  });
}

// Rows of table [V, D] picked by ids -> [n, D].
template <class T>
Tensor<T> embedding_lookup(const Tensor<T>& table, const std::vector<int>& ids) {
  detail::require_rank(table.shape(), 2, "embedding_lookup");
  if (ids.empty()) throw ContractError("embedding_lookup: empty id list");
  const std::size_t vocab = table.dim(0), width = table.dim(1);
  Buffer<T> out(ids.size() * width);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= vocab) {
      throw DimensionError("embedding_lookup: id " + std::to_string(ids[r]) + " outside table of " +
                           std::to_string(vocab) + " rows");
    }
    std::copy_n(table.data().begin() + ids[r] * width, width, out.begin() + r * width);
  }
  return Tensor<T>::from_op({ids.size(), width}, std::move(out), {table.node()}, [ids, width](auto& self) {
    T* g = self.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < ids.size(); ++r) {
      for (std::size_t j = 0; j < width; ++j) g[ids[r] * width + j] += self.grad[r * width + j];
    }
  });
}

// x [C, H, W], weight [O, C, k, k], bias [O] -> [O, H', W'] with zero padding.
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, std::size_t stride,
                 std::size_t pad) {
  detail::require_rank(x.shape(), 3, "conv2d");
  detail::require_rank(weight.shape(), 4, "conv2d");
  detail::require_rank(bias.shape(), 1, "conv2d");
  const std::size_t channels = x.dim(0), height = x.dim(1), width = x.dim(2);
  const std::size_t out_ch = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != channels || weight.dim(3) != k || bias.dim(0) != out_ch) {
    throw DimensionError("conv2d: input " + shape_str(x.shape()) + " weight " + shape_str(weight.shape()) +
                         " bias " + shape_str(bias.shape()));
  }
  if (stride == 0 || height + 2 * pad < k || width + 2 * pad < k) throw DimensionError("conv2d: bad geometry");
  const std::size_t out_h = (height + 2 * pad - k) / stride + 1;
  const std::size_t out_w = (width + 2 * pad - k) / stride + 1;
  const std::size_t patch = channels * k * k, positions = out_h * out_w;

  // im2col: [patch, positions]
  Buffer<T> cols(patch * positions, T(0));
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        const std::size_t row = (c * k + ki) * k + kj;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const long iy = static_cast<long>(oy * stride + ki) - static_cast<long>(pad);
          if (iy < 0 || iy >= static_cast<long>(height)) continue;
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const long ix = static_cast<long>(ox * stride + kj) - static_cast<long>(pad);
            if (ix < 0 || ix >= static_cast<long>(width)) continue;
            cols[row * positions + oy * out_w + ox] = x[(c * height + iy) * width + ix];
          }
        }
      }
    }
  }
  Buffer<T> out(out_ch * positions);
  detail::MapMat<T> o(out.data(), out_ch, positions);
  o.noalias() = detail::CMapMat<T>(weight.data().data(), out_ch, patch) *
                detail::CMapMat<T>(cols.data(), patch, positions);
  for (std::size_t oc = 0; oc < out_ch; ++oc) o.row(oc).array() += bias[oc];

  return Tensor<T>::from_op(
      {out_ch, out_h, out_w}, std::move(out), {x.node(), weight.node(), bias.node()},
      [cols = std::move(cols), channels, height, width, out_ch, k, stride, pad, out_h, out_w, patch,
       positions](auto& self) {
        auto& px = *self.parents[0];
        auto& pw = *self.parents[1];
        auto& pb = *self.parents[2];
        detail::CMapMat<T> g(self.grad.data(), out_ch, positions);
        if (pw.requires_grad) {
          detail::MapMat<T>(pw.grad_buffer(), out_ch, patch).noalias() +=
              g * detail::CMapMat<T>(cols.data(), patch, positions).transpose();
        }
        if (pb.requires_grad) {
          T* gb = pb.grad_buffer();
          for (std::size_t oc = 0; oc < out_ch; ++oc) gb[oc] += g.row(oc).sum();
        }
        if (px.requires_grad) {
          detail::RowMat<T> dcols = detail::CMapMat<T>(pw.value.data(), out_ch, patch).transpose() * g;
          T* gx = px.grad_buffer();
          for (std::size_t c = 0; c < channels; ++c) {
            for (std::size_t ki = 0; ki < k; ++ki) {
              for (std::size_t kj = 0; kj < k; ++kj) {
                const std::size_t row = (c * k + ki) * k + kj;
                for (std::size_t oy = 0; oy < out_h; ++oy) {
                  const long iy = static_cast<long>(oy * stride + ki) - static_cast<long>(pad);
                  if (iy < 0 || iy >= static_cast<long>(height)) continue;
                  for (std::size_t ox = 0; ox < out_w; ++ox) {
                    const long ix = static_cast<long>(ox * stride + kj) - static_cast<long>(pad);
                    if (ix < 0 || ix >= static_cast<long>(width)) continue;
                    gx[(c * height + iy) * width + ix] += dcols(row, oy * out_w + ox);
                  }
                }
              }
            }
          }
        }
      });
}

// Max-subtracted softmax along `axis`. Entries equal to -inf get exactly zero mass.
template <class T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  std::size_t outer = 0, len = 0, inner = 0;
  detail::split_axis(x.shape(), axis, outer, len, inner);
  Buffer<T> out(x.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t i = 0; i < len; ++i) mx = std::max(mx, x[base + i * inner]);
      if (!std::isfinite(mx)) throw ContractError("softmax: slice has no finite entry");
      T total = T(0);
      for (std::size_t i = 0; i < len; ++i) {
        const T e = std::exp(x[base + i * inner] - mx);
        out[base + i * inner] = e;
        total += e;
      }
      for (std::size_t i = 0; i < len; ++i) out[base + i * inner] /= total;
    }
  }
  return Tensor<T>::from_op(x.shape(), std::move(out), {x.node()}, [outer, len, inner](auto& self) {
    T* g = self.parents[0]->grad_buffer();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * len * inner + in;
        T dot = T(0);
        for (std::size_t i = 0; i < len; ++i) dot += self.grad[base + i * inner] * self.value[base + i * inner];
        for (std::size_t i = 0; i < len; ++i) {
          const std::size_t idx = base + i * inner;
          g[idx] += self.value[idx] * (self.grad[idx] - dot);
        }
      }
    }
  });
}

// Sets positions where mask != 0 to `fill`; those positions pass no gradient.
template <class T>
Tensor<T> masked_fill(const Tensor<T>& x, const std::vector<std::uint8_t>& mask, T fill) {
  if (mask.size() != x.size()) throw DimensionError("masked_fill: mask size differs from " + shape_str(x.shape()));
  Buffer<T> out(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (mask[i]) out[i] = fill;
  }
  return Tensor<T>::from_op(x.shape(), std::move(out), {x.node()}, [mask](auto& self) {
    T* g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (!mask[i]) g[i] += self.grad[i];
    }
  });
}

inline constexpr double kLayerNormEps = 1e-5;

// Normalizes over the last axis, then applies gain and bias.
template <class T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias) {
  const std::size_t n = x.shape().back();
  if (gain.size() != n || bias.size() != n) {
    throw DimensionError("layernorm: affine size vs " + shape_str(x.shape()));
  }
  const std::size_t rows = x.size() / n;
  Buffer<T> out(x.size());
  Buffer<T> xhat(x.size());
  Buffer<T> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = x.data().data() + r * n;
    T mean = T(0);
    for (std::size_t j = 0; j < n; ++j) mean += row[j];
    mean /= static_cast<T>(n);
    T var = T(0);
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<T>(n);
    const T is = T(1) / std::sqrt(var + static_cast<T>(kLayerNormEps));
    inv_std[r] = is;
    for (std::size_t j = 0; j < n; ++j) {
      xhat[r * n + j] = (row[j] - mean) * is;
      out[r * n + j] = xhat[r * n + j] * gain[j] + bias[j];
    }
  }
  return Tensor<T>::from_op(
      x.shape(), std::move(out), {x.node(), gain.node(), bias.node()},
      [xhat = std::move(xhat), inv_std = std::move(inv_std), rows, n](auto& self) {
        auto& px = *self.parents[0];
        auto& pg = *self.parents[1];
        auto& pb = *self.parents[2];
        if (pg.requires_grad || pb.requires_grad) {
          T* gg = pg.requires_grad ? pg.grad_buffer() : nullptr;
          T* gb = pb.requires_grad ? pb.grad_buffer() : nullptr;
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < n; ++j) {
              if (gg) gg[j] += self.grad[r * n + j] * xhat[r * n + j];
              if (gb) gb[j] += self.grad[r * n + j];
            }
          }
        }
        if (px.requires_grad) {
          T* gx = px.grad_buffer();
          Buffer<T> dxhat(n);
          for (std::size_t r = 0; r < rows; ++r) {
            T mean_d = T(0), mean_dx = T(0);
            for (std::size_t j = 0; j < n; ++j) {
              dxhat[j] = self.grad[r * n + j] * pg.value[j];
              mean_d += dxhat[j];
              mean_dx += dxhat[j] * xhat[r * n + j];
            }
            mean_d /= static_cast<T>(n);
            mean_dx /= static_cast<T>(n);
            for (std::size_t j = 0; j < n; ++j) {
              gx[r * n + j] += inv_std[r] * (dxhat[j] - mean_d - xhat[r * n + j] * mean_dx);
            }
          }
        }
      });
}

// Row-wise x / ||x||.
template <class T>
Tensor<T> l2_normalize_rows(const Tensor<T>& x) {
  detail::require_rank(x.shape(), 2, "l2_normalize_rows");
  const std::size_t rows = x.dim(0), n = x.dim(1);
  Buffer<T> out(x.size());
  Buffer<T> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    T s = T(0);
    for (std::size_t j = 0; j < n; ++j) s += x[r * n + j] * x[r * n + j];
    norms[r] = std::max(std::sqrt(s), static_cast<T>(1e-12));
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = x[r * n + j] / norms[r];
  }
  return Tensor<T>::from_op(x.shape(), std::move(out), {x.node()}, [norms = std::move(norms), rows, n](auto& self) {
    T* g = self.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      T dot = T(0);
      for (std::size_t j = 0; j < n; ++j) dot += self.grad[r * n + j] * self.value[r * n + j];
      for (std::size_t j = 0; j < n; ++j) {
        g[r * n + j] += (self.grad[r * n + j] - self.value[r * n + j] * dot) / norms[r];
      }
    }
  });
}

enum class Reduction { kMean, kSum };

// Softmax cross-entropy of logits [n, V] against integer targets; rows whose
// target equals ignore_index contribute nothing.
template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& targets, int ignore_index = -1,
                        Reduction reduction = Reduction::kMean) {
  detail::require_rank(logits.shape(), 2, "cross_entropy");
  const std::size_t rows = logits.dim(0), vocab = logits.dim(1);
  if (targets.size() != rows) throw DimensionError("cross_entropy: target count differs from logit rows");
  Buffer<T> probs(logits.size());
  T loss = T(0);
  std::size_t counted = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = logits.data().data() + r * vocab;
    const T mx = *std::max_element(row, row + vocab);
    T total = T(0);
    for (std::size_t j = 0; j < vocab; ++j) {
      probs[r * vocab + j] = std::exp(row[j] - mx);
      total += probs[r * vocab + j];
    }
    for (std::size_t j = 0; j < vocab; ++j) probs[r * vocab + j] /= total;
    if (targets[r] == ignore_index) continue;
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= vocab) {
      throw DimensionError("cross_entropy: target " + std::to_string(targets[r]) + " outside vocabulary");
    }
    loss += mx + std::log(total) - row[targets[r]];
    ++counted;
  }
  const T norm = (reduction == Reduction::kMean && counted > 0) ? T(1) / static_cast<T>(counted) : T(1);
  loss *= norm;
  return Tensor<T>::from_op({1}, {loss}, {logits.node()},
                            [probs = std::move(probs), targets, ignore_index, rows, vocab, norm](auto& self) {
                              T* g = self.parents[0]->grad_buffer();
                              const T up = self.grad[0] * norm;
                              for (std::size_t r = 0; r < rows; ++r) {
                                if (targets[r] == ignore_index) continue;
                                for (std::size_t j = 0; j < vocab; ++j) g[r * vocab + j] += up * probs[r * vocab + j];
                                g[r * vocab + targets[r]] -= up;
                              }
                            });
}

// Mean binary cross-entropy on raw logits, labels in {0, 1}.
template <class T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, const std::vector<T>& labels) {
  if (labels.size() != logits.size()) throw DimensionError("bce_with_logits: label count mismatch");
  const std::size_t n = logits.size();
  T loss = T(0);
  for (std::size_t i = 0; i < n; ++i) {
    const T z = logits[i];
    // log(1 + e^z) - y z, stable for large |z|
    loss += std::max(z, T(0)) - z * labels[i] + std::log1p(std::exp(-std::abs(z)));
  }
  loss /= static_cast<T>(n);
  return Tensor<T>::from_op({1}, {loss}, {logits.node()}, [labels, n](auto& self) {
    auto& p = *self.parents[0];
    T* g = p.grad_buffer();
    for (std::size_t i = 0; i < n; ++i) {
      const T s = T(1) / (T(1) + std::exp(-p.value[i]));
      g[i] += self.grad[0] * (s - labels[i]) / static_cast<T>(n);
    }
  });
}

// x W + b for x [n, in], W [in, out], b [out].
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  return add_bias(matmul(x, weight), bias);
}

}  // namespace nnfc
