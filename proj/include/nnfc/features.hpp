#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "nnfc/dataset.hpp"
#include "nnfc/layers.hpp"
#include "nnfc/model_config.hpp"

// Input embedding: obstacle region embeddings with box encodings, the
// collision attention module (CAM), and the CNN encoders for the destination
// and target images.

namespace nnfc {

inline constexpr std::size_t kPos7Dim = 7;
inline constexpr std::size_t kRegionInputDim = kRegionVisualDim + kPos7Dim;
inline constexpr std::size_t kDestTokens = 16;
inline constexpr std::size_t kTargTokens = 5;

// {x1, y1, x2, y2, w, h, w*h} with coordinates divided by grid_size.
inline std::array<double, kPos7Dim> encode_positional(const std::array<double, 4>& box, double grid_size) {
  if (!(grid_size > 0.0)) throw ConfigError("grid size must be positive");
  const double x1 = box[0] / grid_size, y1 = box[1] / grid_size;
  const double x2 = box[2] / grid_size, y2 = box[3] / grid_size;
  if (!(x2 > x1) || !(y2 > y1)) throw ContractError("degenerate region box (zero area)");
  if (x1 < 0.0 || y1 < 0.0 || x2 > 1.0 || y2 > 1.0) throw ContractError("region box outside the grid");
  const double w = x2 - x1, h = y2 - y1;
  return {x1, y1, x2, y2, w, h, w * h};
}

// Per-sample model inputs converted to the working precision.
template <class T>
struct SampleInputs {
  Tensor<T> dest;     // [4, 16, 16]
  Tensor<T> targ;     // [4, 16, 16]
  Tensor<T> regions;  // [max_obstacles, 39], zero rows for padding
  std::vector<std::uint8_t> obstacle_valid;
  Tensor<T> attention;  // [1, 16, 16]; set once the CAM has run (or zeros for the no-CAM path)
};

template <class T>
std::vector<T> cast_values(const std::vector<double>& v) {
  return std::vector<T>(v.begin(), v.end());
}

template <class T>
SampleInputs<T> make_inputs(const Sample& s, std::size_t max_obstacles) {
  if (s.regions.empty()) throw ContractError("sample has no obstacle regions");
  if (s.regions.size() > max_obstacles) throw ContractError("sample has more obstacles than the model supports");
  SampleInputs<T> in;
  in.dest = Tensor<T>({kGridChannels, kGridSize, kGridSize}, cast_values<T>(s.dest_grid));
  in.targ = Tensor<T>({kGridChannels, kGridSize, kGridSize}, cast_values<T>(s.targ_grid));
  std::vector<T> rows(max_obstacles * kRegionInputDim, T(0));
  in.obstacle_valid.assign(max_obstacles, 0);
  for (std::size_t i = 0; i < s.regions.size(); ++i) {
    const auto& rd = s.regions[i];
    const auto pos = encode_positional(rd.box, kGridSize);
    for (std::size_t j = 0; j < kRegionVisualDim; ++j) rows[i * kRegionInputDim + j] = static_cast<T>(rd.visual[j]);
    for (std::size_t j = 0; j < kPos7Dim; ++j) rows[i * kRegionInputDim + kRegionVisualDim + j] = static_cast<T>(pos[j]);
    in.obstacle_valid[i] = 1;
  }
  in.regions = Tensor<T>({max_obstacles, kRegionInputDim}, std::move(rows));
  return in;
}

// concat(visual, pos7) -> affine -> layer norm, applied row-wise.
template <class T>
struct ObstacleEmbedParams {
  Tensor<T> w, b;
  LayerNormParams<T> norm;

  static ObstacleEmbedParams create(ParamStore<T>& store, const ModelConfig& cfg, std::mt19937_64& rng) {
    ObstacleEmbedParams p;
    p.w = store.add("obst.fc.w", {kRegionInputDim, cfg.d_model}, Init::kNormal, rng);
    p.b = store.add("obst.fc.b", {cfg.d_model}, Init::kZeros, rng);
    p.norm = LayerNormParams<T>::create(store, "obst.ln", cfg.d_model, rng);
    return p;
  }
  static ObstacleEmbedParams bind(const ParamStore<T>& store) {
    return {store.get("obst.fc.w"), store.get("obst.fc.b"), LayerNormParams<T>::bind(store, "obst.ln")};
  }
};

template <class T>
Tensor<T> embed_obstacles(const Tensor<T>& regions, const ObstacleEmbedParams<T>& p) {
  return p.norm(linear(regions, p.w, p.b));
}

template <class T>
struct CamParams {
  Tensor<T> conv1_w, conv1_b, conv2_w, conv2_b;  // feature stack
  Tensor<T> att_w, att_b;                        // 1x1 conv to the attention logit
  Tensor<T> head_w, head_b;                      // collision prediction head

  static CamParams create(ParamStore<T>& store, const ModelConfig& cfg, std::mt19937_64& rng) {
    const std::size_t c = cfg.cam_channels;
    CamParams p;
    p.conv1_w = store.add("cam.conv1.w", {c, kGridChannels, 3, 3}, Init::kNormal, rng);
    p.conv1_b = store.add("cam.conv1.b", {c}, Init::kZeros, rng);
    p.conv2_w = store.add("cam.conv2.w", {c, c, 3, 3}, Init::kNormal, rng);
    p.conv2_b = store.add("cam.conv2.b", {c}, Init::kZeros, rng);
    p.att_w = store.add("cam.att.w", {1, c, 1, 1}, Init::kNormal, rng);
    p.att_b = store.add("cam.att.b", {1}, Init::kZeros, rng);
    p.head_w = store.add("cam.head.w", {c + kGridChannels + kRegionInputDim, 1}, Init::kNormal, rng);
    p.head_b = store.add("cam.head.b", {1}, Init::kZeros, rng);
    return p;
  }
  static CamParams bind(const ParamStore<T>& store) {
    return {store.get("cam.conv1.w"), store.get("cam.conv1.b"), store.get("cam.conv2.w"), store.get("cam.conv2.b"),
            store.get("cam.att.w"),   store.get("cam.att.b"),   store.get("cam.head.w"),  store.get("cam.head.b")};
  }
};

template <class T>
struct CamOutput {
  Tensor<T> logit;      // [1]
  Tensor<T> p_collision;  // [1]
  Tensor<T> attention;  // [1, 16, 16]
};

// Attention branch: conv stack -> per-pixel sigmoid map. Prediction branch:
// map-weighted sum of the conv features, concatenated with the target image's
// channel means and the mean obstacle region vector, -> sigmoid probability.
template <class T>
CamOutput<T> cam_forward(const Tensor<T>& dest, const Tensor<T>& targ, const Tensor<T>& regions,
                         const std::vector<std::uint8_t>& obstacle_valid, const CamParams<T>& p) {
  if (dest.shape() != Shape{kGridChannels, kGridSize, kGridSize} || targ.shape() != dest.shape()) {
    throw DimensionError("cam_forward: grids must be 4x16x16");
  }
  const std::size_t cells = kGridCells;
  Tensor<T> feat = relu(conv2d(relu(conv2d(dest, p.conv1_w, p.conv1_b, 1, 1)), p.conv2_w, p.conv2_b, 1, 1));
  Tensor<T> att = sigmoid(conv2d(feat, p.att_w, p.att_b, 1, 0));  // [1, 16, 16]
  const std::size_t c = feat.dim(0);
  Tensor<T> pooled = transpose(matmul(reshape(feat, {c, cells}), transpose(reshape(att, {1, cells}))));  // [1, c]
  Tensor<T> targ_stats = mean_pool(transpose(reshape(targ, {kGridChannels, cells})));            // [1, 4]
  Tensor<T> region_stats = mean_pool(regions, obstacle_valid);                                    // [1, 39]
  Tensor<T> logit = reshape(linear(concat<T>({pooled, targ_stats, region_stats}, 1), p.head_w, p.head_b), {1});
  return {logit, sigmoid(logit), att};
}

// Three convolutions (two stride-2) over {x_dest, x_att}: 16x16 -> 4x4 -> 16 tokens.
template <class T>
struct DestEncoderParams {
  Tensor<T> conv1_w, conv1_b, conv2_w, conv2_b, proj_w, proj_b, pos;
  LayerNormParams<T> norm;

  static DestEncoderParams create(ParamStore<T>& store, const ModelConfig& cfg, std::mt19937_64& rng) {
    DestEncoderParams p;
    p.conv1_w = store.add("dest.conv1.w", {cfg.dest_channels1, kGridChannels + 1, 3, 3}, Init::kNormal, rng);
    p.conv1_b = store.add("dest.conv1.b", {cfg.dest_channels1}, Init::kZeros, rng);
    p.conv2_w = store.add("dest.conv2.w", {cfg.dest_channels2, cfg.dest_channels1, 3, 3}, Init::kNormal, rng);
    p.conv2_b = store.add("dest.conv2.b", {cfg.dest_channels2}, Init::kZeros, rng);
    p.proj_w = store.add("dest.proj.w", {cfg.d_model, cfg.dest_channels2, 1, 1}, Init::kNormal, rng);
    p.proj_b = store.add("dest.proj.b", {cfg.d_model}, Init::kZeros, rng);
    p.pos = store.add("dest.pos", {kDestTokens, cfg.d_model}, Init::kNormal, rng);
    p.norm = LayerNormParams<T>::create(store, "dest.ln", cfg.d_model, rng);
    return p;
  }
  static DestEncoderParams bind(const ParamStore<T>& store) {
    return {store.get("dest.conv1.w"), store.get("dest.conv1.b"), store.get("dest.conv2.w"),
            store.get("dest.conv2.b"), store.get("dest.proj.w"),  store.get("dest.proj.b"),
            store.get("dest.pos"),     LayerNormParams<T>::bind(store, "dest.ln")};
  }
};

// att is appended to the destination grid as a fifth channel.
template <class T>
Tensor<T> encode_destination(const Tensor<T>& dest, const Tensor<T>& att, const DestEncoderParams<T>& p) {
  if (att.shape() != Shape{1, kGridSize, kGridSize}) throw DimensionError("encode_destination: attention map must be 1x16x16");
  Tensor<T> x = concat<T>({dest, att}, 0);
  Tensor<T> h = relu(conv2d(x, p.conv1_w, p.conv1_b, 2, 1));   // [c1, 8, 8]
  h = relu(conv2d(h, p.conv2_w, p.conv2_b, 2, 1));              // [c2, 4, 4]
  h = conv2d(h, p.proj_w, p.proj_b, 1, 0);                      // [d, 4, 4]
  const std::size_t d = h.dim(0);
  Tensor<T> tokens = transpose(reshape(h, {d, kDestTokens}));  // [16, d]
  return p.norm(add(tokens, p.pos));
}

// Three stride-2 convolutions: 16x16 -> 2x2 patches, plus their mean as a pooled token.
template <class T>
struct TargetEncoderParams {
  Tensor<T> conv1_w, conv1_b, conv2_w, conv2_b, conv3_w, conv3_b, pos;
  LayerNormParams<T> norm;

  static TargetEncoderParams create(ParamStore<T>& store, const ModelConfig& cfg, std::mt19937_64& rng) {
    TargetEncoderParams p;
    p.conv1_w = store.add("targ.conv1.w", {cfg.targ_channels1, kGridChannels, 3, 3}, Init::kNormal, rng);
    p.conv1_b = store.add("targ.conv1.b", {cfg.targ_channels1}, Init::kZeros, rng);
    p.conv2_w = store.add("targ.conv2.w", {cfg.targ_channels2, cfg.targ_channels1, 3, 3}, Init::kNormal, rng);
    p.conv2_b = store.add("targ.conv2.b", {cfg.targ_channels2}, Init::kZeros, rng);
    p.conv3_w = store.add("targ.conv3.w", {cfg.d_model, cfg.targ_channels2, 2, 2}, Init::kNormal, rng);
    p.conv3_b = store.add("targ.conv3.b", {cfg.d_model}, Init::kZeros, rng);
    p.pos = store.add("targ.pos", {kTargTokens, cfg.d_model}, Init::kNormal, rng);
    p.norm = LayerNormParams<T>::create(store, "targ.ln", cfg.d_model, rng);
    return p;
  }
  static TargetEncoderParams bind(const ParamStore<T>& store) {
    return {store.get("targ.conv1.w"), store.get("targ.conv1.b"), store.get("targ.conv2.w"),
            store.get("targ.conv2.b"), store.get("targ.conv3.w"), store.get("targ.conv3.b"),
            store.get("targ.pos"),     LayerNormParams<T>::bind(store, "targ.ln")};
  }
};

template <class T>
Tensor<T> encode_target(const Tensor<T>& targ, const TargetEncoderParams<T>& p) {
  Tensor<T> h = relu(conv2d(targ, p.conv1_w, p.conv1_b, 2, 1));  // [c1, 8, 8]
  h = relu(conv2d(h, p.conv2_w, p.conv2_b, 2, 1));                // [c2, 4, 4]
  h = conv2d(h, p.conv3_w, p.conv3_b, 2, 0);                      // [d, 2, 2]
  const std::size_t d = h.dim(0);
  Tensor<T> patches = transpose(reshape(h, {d, 4}));  // [4, d]
  Tensor<T> tokens = concat<T>({mean_pool(patches), patches}, 0);
  return p.norm(add(tokens, p.pos));
}

}  // namespace nnfc
