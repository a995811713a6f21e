#pragma once

#include <cstddef>

namespace nnfc {

// Architecture sizes. Defaults are the desk-scale configuration.
struct ModelConfig {
  std::size_t d_model = 128;
  std::size_t heads = 4;
  std::size_t encoder_layers = 2;  // N_I
  std::size_t decoder_layers = 2;  // N_d
  std::size_t ffn_mult = 4;
  std::size_t vocab_size = 0;
  std::size_t max_len = 26;
  std::size_t max_obstacles = 8;
  std::size_t cam_channels = 8;
  std::size_t dest_channels1 = 32;
  std::size_t dest_channels2 = 64;
  std::size_t targ_channels1 = 16;
  std::size_t targ_channels2 = 32;

  std::size_t ffn_hidden() const { return d_model * ffn_mult; }
};

}  // namespace nnfc
