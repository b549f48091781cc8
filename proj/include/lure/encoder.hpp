#pragma once

#include <string>
#include <vector>

#include <torch/torch.h>

#include "lure/blocks.hpp"
#include "lure/image.hpp"
#include "lure/latent.hpp"

namespace lure {

struct EncoderConfig {
  std::vector<int64_t> widths{48, 96, 192, 384};
  std::vector<int64_t> reduced{16, 32, 64, 128};
  std::vector<int64_t> k_tb{2, 2, 4, 8};  // (TGA + BaseBlock) repeats per level
  std::vector<int64_t> k_bt{1, 1, 2, 2};  // (TGA + BottleNeck) repeats per level
  int64_t heads = 4;
  int64_t text_dim = 128;

  size_t levels() const { return widths.size(); }
  /// Input height/width must be divisible by this (2^(L-1)).
  int64_t spatial_multiple() const { return int64_t{1} << (levels() - 1); }
  void validate() const;
};

/// Intermediate tensors of one encoder level, exposed for inspection.
struct EncoderLayerTrace {
  torch::Tensor task_base;    // Phi_t
  torch::Tensor degradation;  // Phi_d
  torch::Tensor latent;       // z = Phi_t - Phi_d
  torch::Tensor down;         // input of the next level (undefined at the last level)
};

class EncoderLevelImpl : public torch::nn::Module {
 public:
  EncoderLevelImpl(int64_t width, int64_t reduced, int64_t next_width, int64_t k_tb, int64_t k_bt,
                   int64_t heads, int64_t text_dim);

  EncoderLayerTrace forward(const torch::Tensor& x, const torch::Tensor& text, Modality m);

  torch::nn::ModuleList base_attn, base_blocks;
  torch::nn::ModuleList bottleneck_attn, bottlenecks;
  torch::nn::Conv2d linear{nullptr};
  torch::nn::Conv2d down{nullptr};
};
TORCH_MODULE(EncoderLevel);

/// Conditional image encoder. Each level runs (TGA + BaseBlock) x K_tb, then
/// branches into a strided downsample, a (TGA + BottleNeck) x K_bt chain giving
/// Phi_d and a 1x1 projection giving Phi_t; the level latent is Phi_t - Phi_d.
class ImageEncoderImpl : public torch::nn::Module {
 public:
  explicit ImageEncoderImpl(EncoderConfig config);

  /// x: [B, C, H, W] with C = 3 for visible, 1 for infrared; text: [B, d_txt]
  /// or [1, d_txt]. When `trace` is given it receives one entry per level.
  LatentStack forward(const torch::Tensor& x, const torch::Tensor& text, Modality m,
                      std::vector<EncoderLayerTrace>* trace = nullptr);

  const EncoderConfig& config() const { return config_; }

  torch::nn::Conv2d stem_visible{nullptr};
  torch::nn::Conv2d stem_infrared{nullptr};
  torch::nn::ModuleList levels;

 private:
  EncoderConfig config_;
};
TORCH_MODULE(ImageEncoder);

}  // namespace lure
