#include "lure/encoder.hpp"

#include "lure/error.hpp"

namespace lure {

void EncoderConfig::validate() const {
  const auto n = widths.size();
  if (n == 0) throw ConfigError("encoder: at least one level is required");
  if (reduced.size() != n || k_tb.size() != n || k_bt.size() != n) {
    throw ConfigError("encoder: widths, reduced widths, K_tb and K_bt must have one entry per level");
  }
  for (size_t i = 0; i < n; ++i) {
    if (widths[i] <= 0 || reduced[i] <= 0) throw ConfigError("encoder: widths must be positive");
    if (k_tb[i] < 0 || k_bt[i] < 1) throw ConfigError("encoder: K_tb >= 0 and K_bt >= 1 required");
    if (widths[i] % heads != 0 || reduced[i] % heads != 0) {
      throw ConfigError("encoder: every width must be divisible by the head count");
    }
  }
  if (text_dim <= 0) throw ConfigError("encoder: text_dim must be positive");
}

EncoderLevelImpl::EncoderLevelImpl(int64_t width, int64_t reduced, int64_t next_width, int64_t k_tb,
                                   int64_t k_bt, int64_t heads, int64_t text_dim) {
  base_attn = register_module("base_attn", torch::nn::ModuleList());
  base_blocks = register_module("base_blocks", torch::nn::ModuleList());
  for (int64_t k = 0; k < k_tb; ++k) {
    base_attn->push_back(nn::TGABlock(width, text_dim, heads));
    base_blocks->push_back(nn::BaseBlock(width));
  }
  bottleneck_attn = register_module("bottleneck_attn", torch::nn::ModuleList());
  bottlenecks = register_module("bottlenecks", torch::nn::ModuleList());
  for (int64_t k = 0; k < k_bt; ++k) {
    const auto in = k == 0 ? width : reduced;
    bottleneck_attn->push_back(nn::TGABlock(in, text_dim, heads));
    bottlenecks->push_back(nn::BottleNeck(in, reduced));
  }
  linear = register_module("linear", nn::pointwise(width, reduced));
  if (next_width > 0) {
    down = register_module(
        "down", torch::nn::Conv2d(torch::nn::Conv2dOptions(width, next_width, 2).stride(2)));
  }
}

EncoderLayerTrace EncoderLevelImpl::forward(const torch::Tensor& x, const torch::Tensor& text,
                                            Modality m) {
  auto h = x;
  for (size_t k = 0; k < base_blocks->size(); ++k) {
    h = base_attn[k]->as<nn::TGABlock>()->forward(h, text);
    h = base_blocks[k]->as<nn::BaseBlock>()->forward(h, m);
  }
  EncoderLayerTrace trace;
  if (!down.is_empty()) trace.down = down(h);

  auto d = h;
  for (size_t k = 0; k < bottlenecks->size(); ++k) {
    d = bottleneck_attn[k]->as<nn::TGABlock>()->forward(d, text);
    d = bottlenecks[k]->as<nn::BottleNeck>()->forward(d);
  }
  trace.degradation = d;
  trace.task_base = linear(h);
  trace.latent = trace.task_base - trace.degradation;
  return trace;
}

ImageEncoderImpl::ImageEncoderImpl(EncoderConfig config) : config_(std::move(config)) {
  config_.validate();
  const auto w0 = config_.widths.front();
  stem_visible = register_module(
      "stem_visible", torch::nn::Conv2d(torch::nn::Conv2dOptions(3, w0, 3).padding(1)));
  stem_infrared = register_module(
      "stem_infrared", torch::nn::Conv2d(torch::nn::Conv2dOptions(1, w0, 3).padding(1)));
  levels = register_module("levels", torch::nn::ModuleList());
  const auto n = config_.levels();
  for (size_t i = 0; i < n; ++i) {
    const int64_t next = i + 1 < n ? config_.widths[i + 1] : 0;
    levels->push_back(EncoderLevel(config_.widths[i], config_.reduced[i], next, config_.k_tb[i],
                                   config_.k_bt[i], config_.heads, config_.text_dim));
  }
}

LatentStack ImageEncoderImpl::forward(const torch::Tensor& x, const torch::Tensor& text, Modality m,
                                      std::vector<EncoderLayerTrace>* trace) {
  if (x.dim() != 4) throw ShapeError("encode: expected a [B, C, H, W] batch");
  if (x.size(1) != channels_for(m)) {
    throw ShapeError("encode: modality " + std::string(modality_name(m)) + " expects " +
                     std::to_string(channels_for(m)) + " channels, got " + std::to_string(x.size(1)));
  }
  const auto mult = config_.spatial_multiple();
  if (x.size(2) % mult != 0 || x.size(3) % mult != 0) {
    throw ShapeError("encode: height and width must be divisible by " + std::to_string(mult) +
                     " (pad the image first)");
  }
  if (text.dim() != 2 || text.size(1) != config_.text_dim ||
      (text.size(0) != 1 && text.size(0) != x.size(0))) {
    throw ShapeError("encode: description must be [B, " + std::to_string(config_.text_dim) + "]");
  }

  auto h = m == Modality::kVisible ? stem_visible(x) : stem_infrared(x);
  LatentStack out;
  if (trace) trace->clear();
  for (size_t i = 0; i < levels->size(); ++i) {
    auto level = levels[i]->as<EncoderLevel>()->forward(h, text, m);
    out.levels.push_back(level.latent);
    h = level.down;
    if (trace) trace->push_back(std::move(level));
  }
  return out;
}

}  // namespace lure
