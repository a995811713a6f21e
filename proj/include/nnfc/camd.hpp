#pragma once

#include <cstdint>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include "nnfc/layers.hpp"
#include "nnfc/model_config.hpp"

// Cross-attentional multimodal decoder. Text is fused with a pooled image
// prefix token by a causal transformer block (h_mul); N_d layers then
// cross-attend to the encoded image tokens and an affine head gives logits.

namespace nnfc {

template <class T>
struct FuseParams {
  Tensor<T> tok;  // [V, d]
  Tensor<T> pos;  // [max_len, d]
  MultiHeadParams<T> mha;
  LayerNormParams<T> ln_mha;
  FeedForwardParams<T> ffn;
  LayerNormParams<T> ln_ffn;

  static FuseParams create(ParamStore<T>& store, const ModelConfig& cfg, std::mt19937_64& rng) {
    FuseParams p;
    p.tok = store.add("text.tok", {cfg.vocab_size, cfg.d_model}, Init::kNormal, rng);
    p.pos = store.add("text.pos", {cfg.max_len, cfg.d_model}, Init::kNormal, rng);
    p.mha = MultiHeadParams<T>::create(store, "fuse.mha", cfg.d_model, rng);
    p.ln_mha = LayerNormParams<T>::create(store, "fuse.ln_mha", cfg.d_model, rng);
    p.ffn = FeedForwardParams<T>::create(store, "fuse.ffn", cfg.d_model, cfg.ffn_hidden(), rng);
    p.ln_ffn = LayerNormParams<T>::create(store, "fuse.ln_ffn", cfg.d_model, rng);
    return p;
  }
  static FuseParams bind(const ParamStore<T>& store) {
    return {store.get("text.tok"),
            store.get("text.pos"),
            MultiHeadParams<T>::bind(store, "fuse.mha"),
            LayerNormParams<T>::bind(store, "fuse.ln_mha"),
            FeedForwardParams<T>::bind(store, "fuse.ffn"),
            LayerNormParams<T>::bind(store, "fuse.ln_ffn")};
  }
};

template <class T>
struct DecoderLayerParams {
  AttentionParams<T> cross;
  LayerNormParams<T> ln_cross;
  FeedForwardParams<T> ffn;
  LayerNormParams<T> ln_ffn;

  static std::string prefix(std::size_t layer) { return "dec." + std::to_string(layer); }

  static DecoderLayerParams create(ParamStore<T>& store, std::size_t layer, const ModelConfig& cfg,
                                   std::mt19937_64& rng) {
    const auto name = prefix(layer);
    return {AttentionParams<T>::create(store, name + ".cross", cfg.d_model, rng),
            LayerNormParams<T>::create(store, name + ".ln_cross", cfg.d_model, rng),
            FeedForwardParams<T>::create(store, name + ".ffn", cfg.d_model, cfg.ffn_hidden(), rng),
            LayerNormParams<T>::create(store, name + ".ln_ffn", cfg.d_model, rng)};
  }
  static DecoderLayerParams bind(const ParamStore<T>& store, std::size_t layer) {
    const auto name = prefix(layer);
    return {AttentionParams<T>::bind(store, name + ".cross"), LayerNormParams<T>::bind(store, name + ".ln_cross"),
            FeedForwardParams<T>::bind(store, name + ".ffn"), LayerNormParams<T>::bind(store, name + ".ln_ffn")};
  }
};

template <class T>
struct OutputHeadParams {
  Tensor<T> w, b;

  static OutputHeadParams create(ParamStore<T>& store, const ModelConfig& cfg, std::mt19937_64& rng) {
    return {store.add("out.w", {cfg.d_model, cfg.vocab_size}, Init::kNormal, rng),
            store.add("out.b", {cfg.vocab_size}, Init::kZeros, rng)};
  }
  static OutputHeadParams bind(const ParamStore<T>& store) { return {store.get("out.w"), store.get("out.b")}; }
};

template <class T>
struct FuseOutput {
  Tensor<T> h_mul;  // [tokens, d]
  Tensor<T> h_txt;  // [1, d], mean text embedding
};

// Input tokens must start with BOS; sequences beyond max_len are truncated.
template <class T>
FuseOutput<T> fuse_multimodal(const Tensor<T>& img_token, std::vector<int> token_ids, const FuseParams<T>& p,
                              std::size_t heads) {
  if (token_ids.empty()) throw ContractError("fuse_multimodal: empty token sequence");
  const std::size_t max_len = p.pos.dim(0);
  if (token_ids.size() > max_len) {
    std::cerr << "warning: token sequence of length " << token_ids.size() << " truncated to " << max_len << '\n';
    token_ids.resize(max_len);
  }
  const std::size_t n = token_ids.size();
  Tensor<T> text = add(embedding_lookup(p.tok, token_ids), slice(p.pos, 0, 0, n));
  Tensor<T> seq = concat<T>({img_token, text}, 0);  // [n + 1, d]
  Tensor<T> x = p.ln_mha(add(seq, multi_head_self_attention(seq, p.mha, heads, {}, true)));
  x = p.ln_ffn(add(x, p.ffn(x)));
  return {slice(x, 0, 1, n + 1), mean_pool(text)};
}

template <class T>
struct DecoderOutput {
  Tensor<T> logits;  // [tokens, V]
  Tensor<T> p_next;  // [tokens, V]
  Tensor<T> z;       // [tokens, d], input of the last layer's feed-forward block
};

template <class T>
DecoderOutput<T> decode(const Tensor<T>& h_mul, const Tensor<T>& h_imgs, const std::vector<std::uint8_t>& img_valid,
                        const std::vector<DecoderLayerParams<T>>& layers, const OutputHeadParams<T>& head) {
  if (!h_imgs.defined() || h_imgs.dim(0) == 0) throw ContractError("decode: empty image features");
  if (layers.empty()) throw ConfigError("decode: at least one decoder layer is required");
  Tensor<T> h = h_mul;
  Tensor<T> z;
  for (const auto& layer : layers) {
    z = layer.ln_cross(add(h, cross_attention(h, h_imgs, layer.cross, img_valid)));
    h = layer.ln_ffn(add(z, layer.ffn(z)));
  }
  DecoderOutput<T> out;
  out.logits = linear(h, head.w, head.b);
  out.p_next = softmax(out.logits, 1);
  out.z = z;
  return out;
}

}  // namespace nnfc
