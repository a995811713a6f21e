#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "nnfc/layers.hpp"
#include "nnfc/model_config.hpp"

// Cross-attentional image encoder: N_I layers, each cross-attending one image
// stream to the target tokens, then FFN -> multi-head self-attention -> FFN,
// with a residual connection and layer norm after every sub-block.

namespace nnfc {

template <class T>
struct CaieStreamParams {
  AttentionParams<T> cross;
  LayerNormParams<T> ln_cross;
  FeedForwardParams<T> ffn_in;
  LayerNormParams<T> ln_in;
  MultiHeadParams<T> mha;
  LayerNormParams<T> ln_mha;
  FeedForwardParams<T> ffn_out;
  LayerNormParams<T> ln_out;

  static CaieStreamParams create(ParamStore<T>& store, const std::string& name, const ModelConfig& cfg,
                                 std::mt19937_64& rng) {
    const std::size_t d = cfg.d_model;
    CaieStreamParams p;
    p.cross = AttentionParams<T>::create(store, name + ".cross", d, rng);
    p.ln_cross = LayerNormParams<T>::create(store, name + ".ln_cross", d, rng);
    p.ffn_in = FeedForwardParams<T>::create(store, name + ".ffn_in", d, cfg.ffn_hidden(), rng);
    p.ln_in = LayerNormParams<T>::create(store, name + ".ln_in", d, rng);
    p.mha = MultiHeadParams<T>::create(store, name + ".mha", d, rng);
    p.ln_mha = LayerNormParams<T>::create(store, name + ".ln_mha", d, rng);
    p.ffn_out = FeedForwardParams<T>::create(store, name + ".ffn_out", d, cfg.ffn_hidden(), rng);
    p.ln_out = LayerNormParams<T>::create(store, name + ".ln_out", d, rng);
    return p;
  }

  static CaieStreamParams bind(const ParamStore<T>& store, const std::string& name) {
    return {AttentionParams<T>::bind(store, name + ".cross"),     LayerNormParams<T>::bind(store, name + ".ln_cross"),
            FeedForwardParams<T>::bind(store, name + ".ffn_in"),  LayerNormParams<T>::bind(store, name + ".ln_in"),
            MultiHeadParams<T>::bind(store, name + ".mha"),       LayerNormParams<T>::bind(store, name + ".ln_mha"),
            FeedForwardParams<T>::bind(store, name + ".ffn_out"), LayerNormParams<T>::bind(store, name + ".ln_out")};
  }
};

// The image and obstacle streams of one layer use separate weights.
template <class T>
struct CaieLayerParams {
  CaieStreamParams<T> img;
  CaieStreamParams<T> obst;

  static std::string prefix(std::size_t layer) { return "caie." + std::to_string(layer); }

  static CaieLayerParams create(ParamStore<T>& store, std::size_t layer, const ModelConfig& cfg,
                                std::mt19937_64& rng) {
    return {CaieStreamParams<T>::create(store, prefix(layer) + ".img", cfg, rng),
            CaieStreamParams<T>::create(store, prefix(layer) + ".obst", cfg, rng)};
  }
  static CaieLayerParams bind(const ParamStore<T>& store, std::size_t layer) {
    return {CaieStreamParams<T>::bind(store, prefix(layer) + ".img"),
            CaieStreamParams<T>::bind(store, prefix(layer) + ".obst")};
  }
};

template <class T>
struct EncoderState {
  Tensor<T> h_img;   // [16, d]
  Tensor<T> h_obst;  // [max_obstacles, d]
  std::vector<std::uint8_t> obstacle_valid;
  std::size_t layer_index = 0;
};

// Attention weights observed during one stream update, for inspection.
template <class T>
struct CaieTrace {
  Tensor<T> cross_weights;
  std::vector<Tensor<T>> self_weights;
};

template <class T>
Tensor<T> caie_stream(const Tensor<T>& h, const Tensor<T>& h_targ, const CaieStreamParams<T>& p, std::size_t heads,
                      const std::vector<std::uint8_t>& self_valid, CaieTrace<T>* trace = nullptr) {
  Tensor<T> alpha = p.ln_cross(add(h, cross_attention(h, h_targ, p.cross, {}, trace ? &trace->cross_weights : nullptr)));
  Tensor<T> x = p.ln_in(add(alpha, p.ffn_in(alpha)));
  x = p.ln_mha(add(x, multi_head_self_attention(x, p.mha, heads, self_valid, false,
                                                  trace ? &trace->self_weights : nullptr)));
  return p.ln_out(add(x, p.ffn_out(x)));
}

template <class T>
EncoderState<T> caie_layer(const EncoderState<T>& state, const Tensor<T>& h_targ, const CaieLayerParams<T>& p,
                           std::size_t heads, CaieTrace<T>* img_trace = nullptr,
                           CaieTrace<T>* obst_trace = nullptr) {
  EncoderState<T> next;
  next.h_img = caie_stream(state.h_img, h_targ, p.img, heads, {}, img_trace);
  next.h_obst = caie_stream(state.h_obst, h_targ, p.obst, heads, state.obstacle_valid, obst_trace);
  next.obstacle_valid = state.obstacle_valid;
  next.layer_index = state.layer_index + 1;
  return next;
}

template <class T>
struct ImageEncoding {
  Tensor<T> h_imgs;  // [16 + max_obstacles, d]
  std::vector<std::uint8_t> valid;
};

// Runs every layer and concatenates the two streams along the token axis.
template <class T>
ImageEncoding<T> caie_encode(const Tensor<T>& h_dest, const Tensor<T>& h_obst,
                             const std::vector<std::uint8_t>& obstacle_valid, const Tensor<T>& h_targ,
                             const std::vector<CaieLayerParams<T>>& layers, std::size_t heads) {
  if (obstacle_valid.size() != h_obst.dim(0)) throw DimensionError("caie_encode: obstacle mask length mismatch");
  EncoderState<T> state{h_dest, h_obst, obstacle_valid, 0};
  for (const auto& layer : layers) state = caie_layer(state, h_targ, layer, heads);
  ImageEncoding<T> out;
  out.h_imgs = concat<T>({state.h_img, state.h_obst}, 0);
  out.valid.assign(state.h_img.dim(0), 1);
  out.valid.insert(out.valid.end(), obstacle_valid.begin(), obstacle_valid.end());
  return out;
}

}  // namespace nnfc
