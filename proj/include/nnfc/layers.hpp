#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "nnfc/ops.hpp"
#include "nnfc/params.hpp"

// Transformer building blocks over token sequences stored as [tokens, d] rows.

namespace nnfc {

template <class T>
struct LayerNormParams {
  Tensor<T> gain, bias;

  static LayerNormParams create(ParamStore<T>& store, const std::string& name, std::size_t d, std::mt19937_64& rng) {
    return {store.add(name + ".g", {d}, Init::kOnes, rng), store.add(name + ".b", {d}, Init::kZeros, rng)};
  }
  static LayerNormParams bind(const ParamStore<T>& store, const std::string& name) {
    return {store.get(name + ".g"), store.get(name + ".b")};
  }
  Tensor<T> operator()(const Tensor<T>& x) const { return layernorm(x, gain, bias); }
};

// Position-wise two-layer network d -> hidden -> d with ReLU.
template <class T>
struct FeedForwardParams {
  Tensor<T> w1, b1, w2, b2;

  static FeedForwardParams create(ParamStore<T>& store, const std::string& name, std::size_t d, std::size_t hidden,
                                  std::mt19937_64& rng) {
    FeedForwardParams p;
    p.w1 = store.add(name + ".w1", {d, hidden}, Init::kNormal, rng);
    p.b1 = store.add(name + ".b1", {hidden}, Init::kZeros, rng);
    p.w2 = store.add(name + ".w2", {hidden, d}, Init::kNormal, rng);
    p.b2 = store.add(name + ".b2", {d}, Init::kZeros, rng);
    return p;
  }
  static FeedForwardParams bind(const ParamStore<T>& store, const std::string& name) {
    return {store.get(name + ".w1"), store.get(name + ".b1"), store.get(name + ".w2"), store.get(name + ".b2")};
  }
  Tensor<T> operator()(const Tensor<T>& x) const { return linear(relu(linear(x, w1, b1)), w2, b2); }
};

// W_Q, W_K, W_V of a single-head cross-attention.
template <class T>
struct AttentionParams {
  Tensor<T> wq, wk, wv;

  static AttentionParams create(ParamStore<T>& store, const std::string& name, std::size_t d, std::mt19937_64& rng) {
    return {store.add(name + ".wq", {d, d}, Init::kNormal, rng), store.add(name + ".wk", {d, d}, Init::kNormal, rng),
            store.add(name + ".wv", {d, d}, Init::kNormal, rng)};
  }
  static AttentionParams bind(const ParamStore<T>& store, const std::string& name) {
    return {store.get(name + ".wq"), store.get(name + ".wk"), store.get(name + ".wv")};
  }
};

template <class T>
struct MultiHeadParams {
  Tensor<T> wq, wk, wv, wo;

  static MultiHeadParams create(ParamStore<T>& store, const std::string& name, std::size_t d, std::mt19937_64& rng) {
    return {store.add(name + ".wq", {d, d}, Init::kNormal, rng), store.add(name + ".wk", {d, d}, Init::kNormal, rng),
            store.add(name + ".wv", {d, d}, Init::kNormal, rng), store.add(name + ".wo", {d, d}, Init::kNormal, rng)};
  }
  static MultiHeadParams bind(const ParamStore<T>& store, const std::string& name) {
    return {store.get(name + ".wq"), store.get(name + ".wk"), store.get(name + ".wv"), store.get(name + ".wo")};
  }
};

// Builds the [queries x keys] mask (1 = blocked) from an optional per-key
// validity mask (1 = valid) and an optional causal constraint.
inline std::vector<std::uint8_t> attention_block_mask(std::size_t queries, std::size_t keys,
                                                      const std::vector<std::uint8_t>& key_valid, bool causal) {
  std::vector<std::uint8_t> blocked(queries * keys, 0);
  for (std::size_t i = 0; i < queries; ++i) {
    for (std::size_t j = 0; j < keys; ++j) {
      const bool invalid = !key_valid.empty() && !key_valid[j];
      blocked[i * keys + j] = (invalid || (causal && j > i)) ? 1 : 0;
    }
  }
  return blocked;
}

// softmax(scale * Q K^T + mask) V, optionally reporting the attention weights.
template <class T>
Tensor<T> scaled_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                           const std::vector<std::uint8_t>& blocked, T scale_factor, Tensor<T>* weights_out = nullptr) {
  Tensor<T> scores = scale(matmul(q, transpose(k)), scale_factor);
  if (!blocked.empty()) scores = masked_fill(scores, blocked, -std::numeric_limits<T>::infinity());
  Tensor<T> weights = softmax(scores, 1);
  if (weights_out) *weights_out = weights;
  return matmul(weights, v);
}

// softmax(d^{-1/2} (X_A W_Q)(X_B W_K)^T)(X_B W_V); tokens are rows, d = model width.
template <class T>
Tensor<T> cross_attention(const Tensor<T>& xa, const Tensor<T>& xb, const AttentionParams<T>& p,
                          const std::vector<std::uint8_t>& key_valid = {}, Tensor<T>* weights_out = nullptr) {
  if (!xb.defined() || xb.rank() != 2 || xb.dim(0) == 0) throw ContractError("cross_attention: empty key sequence");
  if (!key_valid.empty()) {
    if (key_valid.size() != xb.dim(0)) throw DimensionError("cross_attention: key mask length mismatch");
    bool any = false;
    for (auto m : key_valid) any = any || m;
    if (!any) throw ContractError("cross_attention: every key is masked");
  }
  const std::size_t d = p.wq.dim(1);
  const T s = T(1) / std::sqrt(static_cast<T>(d));
  const auto blocked = key_valid.empty() ? std::vector<std::uint8_t>{}
                                         : attention_block_mask(xa.dim(0), xb.dim(0), key_valid, false);
  return scaled_attention(matmul(xa, p.wq), matmul(xb, p.wk), matmul(xb, p.wv), blocked, s, weights_out);
}

// Multi-head self-attention; heads split the model width evenly.
template <class T>
Tensor<T> multi_head_self_attention(const Tensor<T>& x, const MultiHeadParams<T>& p, std::size_t heads,
                                    const std::vector<std::uint8_t>& key_valid, bool causal,
                                    std::vector<Tensor<T>>* weights_out = nullptr) {
  const std::size_t d = x.dim(1);
  if (heads == 0 || d % heads != 0) throw ConfigError("model width must be divisible by the head count");
  const std::size_t hd = d / heads;
  const T s = T(1) / std::sqrt(static_cast<T>(hd));
  const std::size_t n = x.dim(0);
  const auto blocked =
      (key_valid.empty() && !causal) ? std::vector<std::uint8_t>{} : attention_block_mask(n, n, key_valid, causal);
  Tensor<T> q = matmul(x, p.wq), k = matmul(x, p.wk), v = matmul(x, p.wv);
  std::vector<Tensor<T>> outs;
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor<T> w;
    outs.push_back(scaled_attention(slice(q, 1, h * hd, (h + 1) * hd), slice(k, 1, h * hd, (h + 1) * hd),
                                    slice(v, 1, h * hd, (h + 1) * hd), blocked, s, weights_out ? &w : nullptr));
    if (weights_out) weights_out->push_back(w);
  }
  return matmul(heads == 1 ? outs[0] : concat(outs, 1), p.wo);
}

}  // namespace nnfc
