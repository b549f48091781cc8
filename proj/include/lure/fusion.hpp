#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <torch/torch.h>

#include "lure/blocks.hpp"
#include "lure/latent.hpp"

namespace lure {

enum class PriorRule { kAddition };

std::string_view prior_rule_name(PriorRule rule);
PriorRule parse_prior_rule(std::string_view name);

struct FusionConfig {
  std::vector<int64_t> widths{16, 32, 64, 128};
  std::vector<int64_t> blocks{1, 1, 2, 2};
  int64_t heads = 4;
  PriorRule rule = PriorRule::kAddition;

  void validate() const;
};

/// Parameter-free latent fusion: per-level elementwise sum (DenseFuse addition).
LatentStack prior_rule(const LatentStack& visible, const LatentStack& infrared,
                       PriorRule rule = PriorRule::kAddition);

/// Multi-head attention with spatial tokens: queries from one feature map,
/// keys/values from another of the same shape. Returns the update only.
class CrossAttentionImpl : public torch::nn::Module {
 public:
  CrossAttentionImpl(int64_t channels, int64_t heads);
  torch::Tensor forward(const torch::Tensor& query_features, const torch::Tensor& context);

  nn::LayerNorm2d norm_query{nullptr}, norm_context{nullptr};
  torch::nn::Conv2d query{nullptr}, key_value{nullptr}, out{nullptr};

 private:
  int64_t channels_;
  int64_t heads_;
};
TORCH_MODULE(CrossAttention);

/// Visible attends to infrared and vice versa, each followed by a GDFN.
class CrossFusionBlockImpl : public torch::nn::Module {
 public:
  CrossFusionBlockImpl(int64_t channels, int64_t heads);
  std::pair<torch::Tensor, torch::Tensor> forward(const torch::Tensor& visible,
                                                  const torch::Tensor& infrared);

  CrossAttention vi_from_ir{nullptr}, ir_from_vi{nullptr};
  nn::GatedFeedForward ffn_vi{nullptr}, ffn_ir{nullptr};
};
TORCH_MODULE(CrossFusionBlock);

/// Learnable refinement of the prior rule. Each level runs its cross-attention
/// blocks, sums the two streams and projects through a 1x1 convolution whose
/// weights and bias start at zero, so a fresh module contributes nothing.
class FusionModuleImpl : public torch::nn::Module {
 public:
  explicit FusionModuleImpl(FusionConfig config);

  LatentStack refine(const LatentStack& visible, const LatentStack& infrared);
  /// refine(vi, ir) + prior_rule(vi, ir), per level.
  LatentStack forward(const LatentStack& visible, const LatentStack& infrared);

  const FusionConfig& config() const { return config_; }

  torch::nn::ModuleList levels;      // ModuleList of CrossFusionBlocks per level
  torch::nn::ModuleList zero_convs;  // one zero-initialised 1x1 conv per level

 private:
  FusionConfig config_;
};
TORCH_MODULE(FusionModule);

}  // namespace lure
