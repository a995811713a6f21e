#pragma once

#include <cstdint>
#include <string>
#include <type_traits>
#include <utility>

#include "nnfc/model.hpp"
#include "test_util.hpp"

namespace nnfc::testing {

// Small architecture for gradient checks and fast training tests.
inline ModelConfig tiny_config(std::size_t vocab = 6) {
  ModelConfig c;
  c.d_model = 8;
  c.heads = 2;
  c.ffn_mult = 2;
  c.vocab_size = vocab;
  c.max_len = 8;
  c.cam_channels = 3;
  c.dest_channels1 = 4;
  c.dest_channels2 = 4;
  c.targ_channels1 = 3;
  c.targ_channels2 = 4;
  c.encoder_layers = 1;
  c.decoder_layers = 1;
  return c;
}

// The same network in both precisions with identical, randomised parameters.
struct ModelPair {
  CaptionModel<float> f32;
  CaptionModel<double> f64;

  ModelPair(const ModelConfig& cfg, std::uint64_t seed) : f32(cfg, seed), f64(cfg, seed) {
    randomize_params(f32.params(), seed);
    randomize_params(f64.params(), seed);
  }

  template <class T>
  CaptionModel<T>& get() {
    if constexpr (std::is_same_v<T, float>) {
      return f32;
    } else {
      return f64;
    }
  }

  // Worst error of scalar fn(model) over parameters named prefix*, for the
  // float tape against a double reference and for the double tape itself.
  template <class Fn>
  std::pair<double, double> param_errors(Fn&& fn, const std::string& prefix = "") {
    const double e32 = store_grad_error(f32.params(), [&] { return fn(f32); }, f64.params(), [&] { return fn(f64); }, prefix);
    const double e64 = store_grad_error(f64.params(), [&] { return fn(f64); }, f64.params(), [&] { return fn(f64); }, prefix);
    return {e32, e64};
  }
};

}  // namespace nnfc::testing
