#include "lure/decoder.hpp"

#include <string>

#include "lure/error.hpp"

namespace lure {

void DecoderConfig::validate() const {
  if (widths.empty() || widths.size() != blocks.size()) {
    throw ConfigError("decoder: one block count per latent level is required");
  }
  for (auto b : blocks) {
    if (b < 0) throw ConfigError("decoder: negative block count");
  }
  if (out_channels <= 0) throw ConfigError("decoder: out_channels must be positive");
}

DecoderImpl::DecoderImpl(DecoderConfig config) : config_(std::move(config)) {
  config_.validate();
  const auto n = config_.widths.size();
  stages = register_module("stages", torch::nn::ModuleList());
  upsample = register_module("upsample", torch::nn::ModuleList());
  merge = register_module("merge", torch::nn::ModuleList());
  for (size_t i = 0; i < n; ++i) {
    torch::nn::Sequential seq;
    for (int64_t b = 0; b < config_.blocks[i]; ++b) seq->push_back(nn::NAFBlock(config_.widths[i]));
    stages->push_back(seq);
  }
  for (size_t i = 0; i + 1 < n; ++i) {
    upsample->push_back(nn::pointwise(config_.widths[i + 1], 4 * config_.widths[i]));
    merge->push_back(nn::pointwise(2 * config_.widths[i], config_.widths[i]));
  }
  head = register_module(
      "head", torch::nn::Conv2d(torch::nn::Conv2dOptions(config_.widths[0], config_.out_channels, 3)
                                    .padding(1)));
}

torch::Tensor DecoderImpl::forward(const LatentStack& z) {
  const auto n = config_.widths.size();
  if (z.size() != n) {
    throw ShapeError("decode: expected " + std::to_string(n) + " latent levels, got " +
                     std::to_string(z.size()));
  }
  for (size_t i = 0; i < n; ++i) {
    if (z[i].dim() != 4 || z[i].size(1) != config_.widths[i]) {
      throw ShapeError("decode: latent level " + std::to_string(i) + " must have " +
                       std::to_string(config_.widths[i]) + " channels");
    }
    if (i > 0 && (z[i].size(2) * 2 != z[i - 1].size(2) || z[i].size(3) * 2 != z[i - 1].size(3))) {
      throw ShapeError("decode: latent level " + std::to_string(i) + " is not half the size of level " +
                       std::to_string(i - 1));
    }
  }
  auto h = stages[n - 1]->as<torch::nn::Sequential>()->forward(z[n - 1]);
  for (size_t i = n - 1; i-- > 0;) {
    auto up = torch::pixel_shuffle(upsample[i]->as<torch::nn::Conv2d>()->forward(h), 2);
    h = merge[i]->as<torch::nn::Conv2d>()->forward(torch::cat({up, z[i]}, 1));
    h = stages[i]->as<torch::nn::Sequential>()->forward(h);
  }
  return head(h);
}

}  // namespace lure
