#include "lure/fusion.hpp"

#include <cmath>

#include "lure/error.hpp"

namespace lure {

std::string_view prior_rule_name(PriorRule rule) {
  switch (rule) {
    case PriorRule::kAddition: return "addition";
  }
  return "?";
}

PriorRule parse_prior_rule(std::string_view name) {
  if (name == "addition" || name == "add") return PriorRule::kAddition;
  throw ConfigError("unknown prior rule '" + std::string(name) + "' (supported: addition)");
}

void FusionConfig::validate() const {
  if (widths.empty() || widths.size() != blocks.size()) {
    throw ConfigError("fusion: one block count per latent level is required");
  }
  for (size_t i = 0; i < widths.size(); ++i) {
    if (blocks[i] < 0) throw ConfigError("fusion: negative block count");
    if (widths[i] % heads != 0) throw ConfigError("fusion: widths must be divisible by the head count");
  }
}

LatentStack prior_rule(const LatentStack& visible, const LatentStack& infrared, PriorRule rule) {
  require_same_shape(visible, infrared, "prior_rule");
  LatentStack out;
  switch (rule) {
    case PriorRule::kAddition:
      for (size_t i = 0; i < visible.size(); ++i) out.levels.push_back(visible[i] + infrared[i]);
      break;
  }
  return out;
}

CrossAttentionImpl::CrossAttentionImpl(int64_t channels, int64_t heads)
    : channels_(channels), heads_(heads) {
  norm_query = register_module("norm_query", nn::LayerNorm2d(channels));
  norm_context = register_module("norm_context", nn::LayerNorm2d(channels));
  query = register_module("query", nn::pointwise(channels, channels));
  key_value = register_module("key_value", nn::pointwise(channels, 2 * channels));
  out = register_module("out", nn::pointwise(channels, channels));
}

torch::Tensor CrossAttentionImpl::forward(const torch::Tensor& query_features,
                                          const torch::Tensor& context) {
  if (query_features.sizes() != context.sizes() || query_features.size(1) != channels_) {
    throw ShapeError("cross attention: query and context must share shape and width");
  }
  const auto b = query_features.size(0);
  const auto h = query_features.size(2);
  const auto w = query_features.size(3);
  const auto head_dim = channels_ / heads_;
  // [B, C, H, W] -> [B, heads, HW, d]
  auto to_heads = [&](const torch::Tensor& t) {
    return t.reshape({b, heads_, head_dim, h * w}).transpose(-1, -2);
  };
  auto q = to_heads(query(norm_query(query_features)));
  auto kv = key_value(norm_context(context)).chunk(2, 1);
  auto k = to_heads(kv[0]);
  auto v = to_heads(kv[1]);
  auto attended = at::scaled_dot_product_attention(q, k, v);  // [B, heads, HW, d]
  attended = attended.transpose(-1, -2).reshape({b, channels_, h, w});
  return out(attended);
}

CrossFusionBlockImpl::CrossFusionBlockImpl(int64_t channels, int64_t heads) {
  vi_from_ir = register_module("vi_from_ir", CrossAttention(channels, heads));
  ir_from_vi = register_module("ir_from_vi", CrossAttention(channels, heads));
  ffn_vi = register_module("ffn_vi", nn::GatedFeedForward(channels, 2.0));
  ffn_ir = register_module("ffn_ir", nn::GatedFeedForward(channels, 2.0));
}

std::pair<torch::Tensor, torch::Tensor> CrossFusionBlockImpl::forward(const torch::Tensor& visible,
                                                                      const torch::Tensor& infrared) {
  auto vi = visible + vi_from_ir(visible, infrared);
  auto ir = infrared + ir_from_vi(infrared, visible);
  vi = vi + ffn_vi(vi);
  ir = ir + ffn_ir(ir);
  return {vi, ir};
}

FusionModuleImpl::FusionModuleImpl(FusionConfig config) : config_(std::move(config)) {
  config_.validate();
  levels = register_module("levels", torch::nn::ModuleList());
  zero_convs = register_module("zero_convs", torch::nn::ModuleList());
  for (size_t i = 0; i < config_.widths.size(); ++i) {
    torch::nn::ModuleList blocks;
    for (int64_t k = 0; k < config_.blocks[i]; ++k) {
      blocks->push_back(CrossFusionBlock(config_.widths[i], config_.heads));
    }
    levels->push_back(blocks);
    auto conv = nn::pointwise(config_.widths[i], config_.widths[i]);
    torch::NoGradGuard guard;
    conv->weight.zero_();
    conv->bias.zero_();
    zero_convs->push_back(conv);
  }
}

LatentStack FusionModuleImpl::refine(const LatentStack& visible, const LatentStack& infrared) {
  require_same_shape(visible, infrared, "refine");
  if (visible.size() != config_.widths.size()) {
    throw ShapeError("refine: latent level count does not match the fusion config");
  }
  LatentStack out;
  for (size_t i = 0; i < visible.size(); ++i) {
    if (visible[i].size(1) != config_.widths[i]) {
      throw ShapeError("refine: latent width mismatch at level " + std::to_string(i));
    }
    auto vi = visible[i];
    auto ir = infrared[i];
    auto blocks = levels[i]->as<torch::nn::ModuleList>();
    for (size_t k = 0; k < blocks->size(); ++k) {
      std::tie(vi, ir) = (*blocks)[k]->as<CrossFusionBlock>()->forward(vi, ir);
    }
    out.levels.push_back(zero_convs[i]->as<torch::nn::Conv2d>()->forward(vi + ir));
  }
  return out;
}

LatentStack FusionModuleImpl::forward(const LatentStack& visible, const LatentStack& infrared) {
  auto refined = refine(visible, infrared);
  auto prior = prior_rule(visible, infrared, config_.rule);
  LatentStack out;
  for (size_t i = 0; i < prior.size(); ++i) out.levels.push_back(refined[i] + prior[i]);
  return out;
}

}  // namespace lure
