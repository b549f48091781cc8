#include "lure/blocks.hpp"

#include <cmath>

#include "lure/error.hpp"

namespace lure::nn {

LayerNorm2dImpl::LayerNorm2dImpl(int64_t channels, double eps) : eps_(eps) {
  weight = register_parameter("weight", torch::ones({channels}));
  bias = register_parameter("bias", torch::zeros({channels}));
}

torch::Tensor LayerNorm2dImpl::forward(const torch::Tensor& x) {
  auto mu = x.mean(1, /*keepdim=*/true);
  auto centered = x - mu;
  auto var = centered.pow(2).mean(1, /*keepdim=*/true);
  auto y = centered / (var + eps_).sqrt();
  return y * weight.view({1, -1, 1, 1}) + bias.view({1, -1, 1, 1});
}

torch::nn::Conv2d pointwise(int64_t in, int64_t out, bool bias) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 1).bias(bias));
}

torch::nn::Conv2d depthwise3x3(int64_t channels) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, channels, 3).padding(1).groups(channels));
}

torch::Tensor simple_gate(const torch::Tensor& x) {
  auto halves = x.chunk(2, 1);
  return halves[0] * halves[1];
}

NAFBlockImpl::NAFBlockImpl(int64_t c) {
  norm1 = register_module("norm1", LayerNorm2d(c));
  conv1 = register_module("conv1", pointwise(c, 2 * c));
  conv2 = register_module("conv2", depthwise3x3(2 * c));
  sca = register_module("sca", pointwise(c, c));
  conv3 = register_module("conv3", pointwise(c, c));
  norm2 = register_module("norm2", LayerNorm2d(c));
  conv4 = register_module("conv4", pointwise(c, 2 * c));
  conv5 = register_module("conv5", pointwise(c, c));
  beta = register_parameter("beta", torch::zeros({1, c, 1, 1}));
  gamma = register_parameter("gamma", torch::zeros({1, c, 1, 1}));
}

torch::Tensor NAFBlockImpl::forward(const torch::Tensor& x) {
  auto y = conv2(conv1(norm1(x)));
  y = simple_gate(y);
  y = y * sca(torch::adaptive_avg_pool2d(y, {1, 1}));
  y = conv3(y);
  auto mid = x + y * beta;
  auto z = conv5(simple_gate(conv4(norm2(mid))));
  return mid + z * gamma;
}

GatedFeedForwardImpl::GatedFeedForwardImpl(int64_t c, double expansion, bool zero_init) {
  const auto hidden = static_cast<int64_t>(std::lround(static_cast<double>(c) * expansion));
  norm = register_module("norm", LayerNorm2d(c));
  project_in = register_module("project_in", pointwise(c, 2 * hidden));
  dwconv = register_module("dwconv", depthwise3x3(2 * hidden));
  project_out = register_module("project_out", pointwise(hidden, c));
  if (zero_init) {
    torch::NoGradGuard guard;
    project_out->weight.zero_();
    project_out->bias.zero_();
  }
}

torch::Tensor GatedFeedForwardImpl::forward(const torch::Tensor& x) {
  auto y = dwconv(project_in(norm(x)));
  auto halves = y.chunk(2, 1);
  return project_out(torch::gelu(halves[0]) * halves[1]);
}

TGABlockImpl::TGABlockImpl(int64_t channels, int64_t text_dim, int64_t heads)
    : channels_(channels), heads_(heads) {
  if (heads <= 0 || channels % heads != 0) {
    throw ConfigError("TGA block: width " + std::to_string(channels) +
                      " is not divisible by head count " + std::to_string(heads));
  }
  text_proj = register_module("text_proj", torch::nn::Linear(text_dim, channels));
  gate = register_module("gate", torch::nn::Linear(channels, channels));
  query = register_module("query", torch::nn::Linear(channels, channels));
  norm = register_module("norm", LayerNorm2d(channels));
  key_value = register_module("key_value", pointwise(channels, 2 * channels));
  out = register_module("out", torch::nn::Linear(channels, channels));
  ffn = register_module("ffn", GatedFeedForward(channels, 2.0, /*zero_init=*/true));
  torch::NoGradGuard guard;
  out->weight.zero_();
  out->bias.zero_();
}

torch::Tensor TGABlockImpl::forward(const torch::Tensor& x, const torch::Tensor& text) {
  if (x.dim() != 4 || x.size(1) != channels_) {
    throw ShapeError("TGA block: expected " + std::to_string(channels_) + " input channels");
  }
  if (text.dim() != 2 || text.size(1) != text_proj->options.in_features()) {
    throw ShapeError("TGA block: description vector has the wrong dimension");
  }
  const auto b = x.size(0);
  const auto hw = x.size(2) * x.size(3);
  const auto head_dim = channels_ / heads_;
  auto t = text.size(0) == b ? text : text.expand({b, text.size(1)});

  t = text_proj(t);
  t = t * torch::sigmoid(gate(t));
  auto q = query(t).view({b, heads_, 1, head_dim});

  auto kv = key_value(norm(x)).view({b, 2, heads_, head_dim, hw});
  auto k = kv.select(1, 0);                      // [B, h, d, HW]
  auto v = kv.select(1, 1).transpose(-1, -2);    // [B, h, HW, d]
  auto scores = torch::matmul(q, k) / std::sqrt(static_cast<double>(head_dim));
  auto attended = torch::matmul(torch::softmax(scores, -1), v);  // [B, h, 1, d]

  auto y = x + out(attended.reshape({b, channels_})).view({b, channels_, 1, 1});
  return y + ffn(y);
}

BaseBlockImpl::BaseBlockImpl(int64_t channels) {
  naf = register_module("naf", NAFBlock(channels));
  modality_embedding = register_parameter("modality_embedding", torch::randn({2, channels}) * 0.02);
}

torch::Tensor BaseBlockImpl::forward(const torch::Tensor& x, Modality m) {
  const auto idx = static_cast<int64_t>(m);
  if (idx != 0 && idx != 1) throw InputError("BaseBlock: invalid modality flag");
  return naf(x + modality_embedding[idx].view({1, -1, 1, 1}));
}

BottleNeckImpl::BottleNeckImpl(int64_t in_channels, int64_t out_channels) {
  naf = register_module("naf", NAFBlock(in_channels));
  project = register_module("project", pointwise(in_channels, out_channels));
}

torch::Tensor BottleNeckImpl::forward(const torch::Tensor& x) { return project(naf(x)); }

}  // namespace lure::nn
