#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "nnfc/caie.hpp"
#include "nnfc/camd.hpp"
#include "nnfc/features.hpp"
#include "nnfc/nncm.hpp"

namespace nnfc {

// Image-side encoding of one sample, shared by every decoding step.
template <class T>
struct ImageFeatures {
  Tensor<T> h_imgs;
  std::vector<std::uint8_t> valid;
  Tensor<T> pooled;  // [1, d] masked mean of h_imgs
};

template <class T>
struct TeacherForced {
  DecoderOutput<T> dec;
  Tensor<T> h_img;  // [1, d]
  Tensor<T> h_txt;  // [1, d]
};

// The full captioning network. Parameters are registered (and therefore
// initialised and serialised) in a fixed order: CAM, obstacle embedding,
// destination and target encoders, CAIE layers, text fusion, decoder layers,
// output head.
template <class T>
class CaptionModel {
 public:
  using value_type = T;

  CaptionModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
    if (config_.vocab_size < 4) throw ConfigError("vocabulary must include the four reserved tokens");
    if (config_.d_model == 0 || config_.d_model % config_.heads != 0) {
      throw ConfigError("d_model must be a positive multiple of the head count");
    }
    std::mt19937_64 rng(seed);
    cam_ = CamParams<T>::create(store_, config_, rng);
    obst_ = ObstacleEmbedParams<T>::create(store_, config_, rng);
    dest_ = DestEncoderParams<T>::create(store_, config_, rng);
    targ_ = TargetEncoderParams<T>::create(store_, config_, rng);
    for (std::size_t i = 0; i < config_.encoder_layers; ++i) {
      caie_.push_back(CaieLayerParams<T>::create(store_, i, config_, rng));
    }
    fuse_ = FuseParams<T>::create(store_, config_, rng);
    for (std::size_t i = 0; i < config_.decoder_layers; ++i) {
      dec_.push_back(DecoderLayerParams<T>::create(store_, i, config_, rng));
    }
    head_ = OutputHeadParams<T>::create(store_, config_, rng);
  }

  const ModelConfig& config() const { return config_; }
  ParamStore<T>& params() { return store_; }
  const ParamStore<T>& params() const { return store_; }
  const CamParams<T>& cam_params() const { return cam_; }
  const std::vector<CaieLayerParams<T>>& caie_params() const { return caie_; }
  const FuseParams<T>& fuse_params() const { return fuse_; }
  const std::vector<DecoderLayerParams<T>>& decoder_params() const { return dec_; }
  const OutputHeadParams<T>& head_params() const { return head_; }
  const ObstacleEmbedParams<T>& obstacle_params() const { return obst_; }
  const DestEncoderParams<T>& destination_params() const { return dest_; }
  const TargetEncoderParams<T>& target_params() const { return targ_; }

  SampleInputs<T> inputs(const Sample& s) const { return make_inputs<T>(s, config_.max_obstacles); }

  CamOutput<T> run_cam(const SampleInputs<T>& in) const {
    return cam_forward(in.dest, in.targ, in.regions, in.obstacle_valid, cam_);
  }

  // Fixes the attention channel: the (frozen) CAM map, or all zeros when the
  // CAM is ablated.
  void attach_attention(SampleInputs<T>& in, bool no_cam) const {
    if (no_cam) {
      in.attention = Tensor<T>::zeros({1, kGridSize, kGridSize});
      return;
    }
    NoGradGuard no_grad;
    in.attention = run_cam(in).attention.clone();
  }

  ImageFeatures<T> encode_image(const SampleInputs<T>& in) const {
    if (!in.attention.defined()) throw ContractError("attention map not attached to sample inputs");
    Tensor<T> h_dest = encode_destination(in.dest, in.attention, dest_);
    Tensor<T> h_targ = encode_target(in.targ, targ_);
    Tensor<T> h_obst = embed_obstacles(in.regions, obst_);
    auto enc = caie_encode(h_dest, h_obst, in.obstacle_valid, h_targ, caie_, config_.heads);
    Tensor<T> pooled = mean_pool(enc.h_imgs, enc.valid);
    return {enc.h_imgs, enc.valid, pooled};
  }

  DecoderOutput<T> decode_tokens(const ImageFeatures<T>& img, const std::vector<int>& input_ids,
                                 Tensor<T>* h_txt = nullptr) const {
    auto fused = fuse_multimodal(img.pooled, input_ids, fuse_, config_.heads);
    if (h_txt) *h_txt = fused.h_txt;
    return decode(fused.h_mul, img.h_imgs, img.valid, dec_, head_);
  }

  // Teacher-forced pass over BOS + caption tokens.
  TeacherForced<T> forward(const SampleInputs<T>& in, const std::vector<int>& input_ids) const {
    auto img = encode_image(in);
    TeacherForced<T> out;
    out.dec = decode_tokens(img, input_ids, &out.h_txt);
    out.h_img = img.pooled;
    return out;
  }

 private:
  ModelConfig config_;
  ParamStore<T> store_;
  CamParams<T> cam_;
  ObstacleEmbedParams<T> obst_;
  DestEncoderParams<T> dest_;
  TargetEncoderParams<T> targ_;
  std::vector<CaieLayerParams<T>> caie_;
  FuseParams<T> fuse_;
  std::vector<DecoderLayerParams<T>> dec_;
  OutputHeadParams<T> head_;
};

// Decoder input (BOS + caption) and targets (caption + EOS), clipped to max_len.
inline std::pair<std::vector<int>, std::vector<int>> teacher_sequences(const std::vector<int>& caption,
                                                                       std::size_t max_len) {
  std::vector<int> input{kBosId};
  input.insert(input.end(), caption.begin(), caption.end());
  std::vector<int> target(caption.begin(), caption.end());
  target.push_back(kEosId);
  if (input.size() > max_len) {
    input.resize(max_len);
    target.resize(max_len);
  }
  return {input, target};
}

// Infers architecture sizes from a weights file's parameter shapes.
inline ModelConfig infer_config(const std::vector<WeightRecord>& records, std::size_t heads) {
  ModelConfig cfg;
  cfg.heads = heads;
  cfg.encoder_layers = 0;
  cfg.decoder_layers = 0;
  bool have_tok = false;
  for (const auto& r : records) {
    if (r.name == "text.tok") {
      cfg.vocab_size = r.shape.at(0);
      cfg.d_model = r.shape.at(1);
      have_tok = true;
    } else if (r.name == "text.pos") {
      cfg.max_len = r.shape.at(0);
    } else if (r.name == "cam.conv1.w") {
      cfg.cam_channels = r.shape.at(0);
    } else if (r.name == "dest.conv1.w") {
      cfg.dest_channels1 = r.shape.at(0);
    } else if (r.name == "dest.conv2.w") {
      cfg.dest_channels2 = r.shape.at(0);
    } else if (r.name == "targ.conv1.w") {
      cfg.targ_channels1 = r.shape.at(0);
    } else if (r.name == "targ.conv2.w") {
      cfg.targ_channels2 = r.shape.at(0);
    } else if (r.name == "fuse.ffn.w1") {
      cfg.ffn_mult = r.shape.at(1) / r.shape.at(0);
    } else if (r.name.rfind("caie.", 0) == 0 && r.name.find(".img.cross.wq") != std::string::npos) {
      ++cfg.encoder_layers;
    } else if (r.name.rfind("dec.", 0) == 0 && r.name.find(".cross.wq") != std::string::npos) {
      ++cfg.decoder_layers;
    }
  }
  if (!have_tok) throw FormatError("weights file lacks the token embedding table");
  return cfg;
}

struct KnnOptions {
  const Datastore* store = nullptr;
  std::size_t neighbors = 64;
  double lambda = 0.25;
};

// Next-token distribution and latent z for the last position of a prefix.
template <class T>
struct StepResult {
  std::vector<double> p_model;
  std::vector<T> z;
};

// Greedy decoding over p_total (or p_model without a datastore); argmax ties
// go to the lowest token id. Returns the emitted tokens (EOS included when
// produced), at most max_len of them.
template <class T, class StepFn>
std::vector<int> greedy_decode(StepFn&& step, std::size_t max_len, const KnnOptions* knn = nullptr) {
  std::vector<int> prefix{kBosId};
  std::vector<int> emitted;
  while (emitted.size() < max_len) {
    StepResult<T> r = step(prefix);
    std::vector<double> p = r.p_model;
    if (knn && knn->store) {
      auto neighbors = knn_query<T>(*knn->store, std::span<const T>(r.z), knn->neighbors);
      p = interpolate(aggregate(neighbors, p.size()), r.p_model, knn->lambda);
    }
    int best = 0;
    for (std::size_t i = 1; i < p.size(); ++i) {
      if (p[i] > p[best]) best = static_cast<int>(i);
    }
    emitted.push_back(best);
    if (best == kEosId) break;
    prefix.push_back(best);
  }
  return emitted;
}

template <class T>
std::vector<int> greedy_generate(const CaptionModel<T>& model, const SampleInputs<T>& in,
                                 const KnnOptions* knn = nullptr) {
  NoGradGuard no_grad;
  const auto img = model.encode_image(in);
  const std::size_t vocab = model.config().vocab_size, d = model.config().d_model;
  auto step = [&](const std::vector<int>& prefix) {
    auto dec = model.decode_tokens(img, prefix);
    const std::size_t last = prefix.size() - 1;
    StepResult<T> r;
    r.p_model.resize(vocab);
    for (std::size_t v = 0; v < vocab; ++v) r.p_model[v] = static_cast<double>(dec.p_next.at(last, v));
    r.z.assign(dec.z.data().begin() + last * d, dec.z.data().begin() + (last + 1) * d);
    return r;
  };
  return greedy_decode<T>(step, model.config().max_len, knn);
}

// One teacher-forced pass per sentence; entry t pairs z_t with the token that
// follows it, giving T_i - 1 entries for a sentence of T_i tokens (BOS..EOS).
template <class T>
Datastore build_datastore(const CaptionModel<T>& model, const std::vector<SampleInputs<T>>& inputs,
                          const std::vector<std::vector<int>>& captions) {
  if (inputs.empty()) throw ContractError("build_datastore: empty training set");
  if (inputs.size() != captions.size()) throw DimensionError("build_datastore: inputs and captions differ in count");
  NoGradGuard no_grad;
  const std::size_t d = model.config().d_model;
  Datastore ds(d);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto [input, target] = teacher_sequences(captions[i], model.config().max_len);
    auto out = model.forward(inputs[i], input);
    for (std::size_t t = 0; t < input.size(); ++t) {
      ds.add<T>(out.dec.z.data().subspan(t * d, d), static_cast<std::uint32_t>(target[t]));
    }
  }
  return ds;
}

}  // namespace nnfc
