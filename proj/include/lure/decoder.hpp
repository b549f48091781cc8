#pragma once

#include <vector>

#include <torch/torch.h>

#include "lure/blocks.hpp"
#include "lure/latent.hpp"

namespace lure {

struct DecoderConfig {
  std::vector<int64_t> widths{16, 32, 64, 128};  // mirrors the encoder's reduced widths
  std::vector<int64_t> blocks{1, 1, 1, 1};
  int64_t out_channels = 3;

  void validate() const;
};

/// Reconstructs an image from a LatentStack. Starting from the deepest level,
/// features are refined by NAFBlocks, upsampled 2x (1x1 conv + pixel shuffle),
/// concatenated with the next-shallower latent and merged by a 1x1 conv.
/// There is no path from the network input to the output other than the latents.
class DecoderImpl : public torch::nn::Module {
 public:
  explicit DecoderImpl(DecoderConfig config);

  /// Raw (unclamped) output [B, 3, H0, W0].
  torch::Tensor forward(const LatentStack& z);

  const DecoderConfig& config() const { return config_; }

  torch::nn::ModuleList stages;   // Sequential of NAFBlocks per level
  torch::nn::ModuleList upsample; // level i+1 -> level i
  torch::nn::ModuleList merge;    // concat(up, z_i) -> width_i
  torch::nn::Conv2d head{nullptr};

 private:
  DecoderConfig config_;
};
TORCH_MODULE(Decoder);

}  // namespace lure
