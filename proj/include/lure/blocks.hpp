#pragma once

#include <torch/torch.h>

#include "lure/image.hpp"

namespace lure::nn {

/// Channel-wise layer norm over NCHW tensors (per pixel, across channels).
class LayerNorm2dImpl : public torch::nn::Module {
 public:
  explicit LayerNorm2dImpl(int64_t channels, double eps = 1e-6);
  torch::Tensor forward(const torch::Tensor& x);

  torch::Tensor weight;
  torch::Tensor bias;

 private:
  double eps_;
};
TORCH_MODULE(LayerNorm2d);

torch::nn::Conv2d pointwise(int64_t in, int64_t out, bool bias = true);
torch::nn::Conv2d depthwise3x3(int64_t channels);

/// Split channels in half and multiply the halves.
torch::Tensor simple_gate(const torch::Tensor& x);

/// Nonlinear-activation-free block: LN -> 1x1 -> dw3x3 -> SimpleGate ->
/// simplified channel attention -> 1x1, then a gated 1x1 feed-forward. Both
/// branches are scaled by per-channel factors that start at zero.
class NAFBlockImpl : public torch::nn::Module {
 public:
  explicit NAFBlockImpl(int64_t channels);
  torch::Tensor forward(const torch::Tensor& x);

  LayerNorm2d norm1{nullptr}, norm2{nullptr};
  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, conv3{nullptr}, sca{nullptr};
  torch::nn::Conv2d conv4{nullptr}, conv5{nullptr};
  torch::Tensor beta, gamma;
};
TORCH_MODULE(NAFBlock);

/// Gated depthwise feed-forward (GDFN). Returns the update only; the output
/// projection is zero-initialised when `zero_init` is set.
class GatedFeedForwardImpl : public torch::nn::Module {
 public:
  GatedFeedForwardImpl(int64_t channels, double expansion = 2.0, bool zero_init = false);
  torch::Tensor forward(const torch::Tensor& x);

  LayerNorm2d norm{nullptr};
  torch::nn::Conv2d project_in{nullptr}, dwconv{nullptr}, project_out{nullptr};
};
TORCH_MODULE(GatedFeedForward);

/// Text-guided attention. The description is projected to the block width and
/// reweighted by a sigmoid channel gate; it then forms one query token per head
/// over the flattened image features. The attended vector is broadcast and
/// added to the input, followed by a residual GDFN. Both residual branches end
/// in zero-initialised projections, so a fresh block is the identity.
class TGABlockImpl : public torch::nn::Module {
 public:
  TGABlockImpl(int64_t channels, int64_t text_dim, int64_t heads);
  /// x: [B, C, H, W], text: [B, d_txt]
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& text);

  int64_t channels() const { return channels_; }

  torch::nn::Linear text_proj{nullptr}, gate{nullptr}, query{nullptr}, out{nullptr};
  LayerNorm2d norm{nullptr};
  torch::nn::Conv2d key_value{nullptr};
  GatedFeedForward ffn{nullptr};

 private:
  int64_t channels_;
  int64_t heads_;
};
TORCH_MODULE(TGABlock);

/// NAFBlock preceded by a learned per-channel bias chosen by the modality flag.
class BaseBlockImpl : public torch::nn::Module {
 public:
  explicit BaseBlockImpl(int64_t channels);
  torch::Tensor forward(const torch::Tensor& x, Modality m);

  NAFBlock naf{nullptr};
  torch::Tensor modality_embedding;  // [2, C]
};
TORCH_MODULE(BaseBlock);

/// NAFBlock followed by a 1x1 projection to `out_channels`.
class BottleNeckImpl : public torch::nn::Module {
 public:
  BottleNeckImpl(int64_t in_channels, int64_t out_channels);
  torch::Tensor forward(const torch::Tensor& x);

  NAFBlock naf{nullptr};
  torch::nn::Conv2d project{nullptr};
};
TORCH_MODULE(BottleNeck);

}  // namespace lure::nn
