#include "lure/losses.hpp"

#include <cmath>

#include "lure/error.hpp"
#include "lure/image.hpp"
#include "lure/rng.hpp"

namespace lure::losses {
namespace F = torch::nn::functional;

namespace {

void require_same(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (a.sizes() != b.sizes()) throw ShapeError(std::string(what) + ": shape mismatch");
}

torch::Tensor depthwise_filter(const torch::Tensor& x, const torch::Tensor& kernel3x3) {
  const auto c = x.size(1);
  auto weight = kernel3x3.to(x.options()).view({1, 1, 3, 3}).expand({c, 1, 3, 3}).contiguous();
  auto padded = F::pad(x, F::PadFuncOptions({1, 1, 1, 1}).mode(torch::kReflect));
  return F::conv2d(padded, weight, F::Conv2dFuncOptions().groups(c));
}

const torch::Tensor& sobel_x() {
  static const torch::Tensor k =
      torch::tensor({-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0}, torch::kFloat64).view({3, 3});
  return k;
}

const torch::Tensor& laplacian() {
  static const torch::Tensor k =
      torch::tensor({0.0, 1.0, 0.0, 1.0, -4.0, 1.0, 0.0, 1.0, 0.0}, torch::kFloat64).view({3, 3});
  return k;
}

double scalar(const torch::Tensor& t) { return t.detach().item<double>(); }

}  // namespace

void LossWeights::validate() const {
  for (double w : {unified, recon, text, grad, perceptual}) {
    if (!std::isfinite(w) || w < 0.0) throw ConfigError("loss weights must be finite and nonnegative");
  }
}

torch::Tensor sobel_magnitude(const torch::Tensor& x) {
  if (x.dim() != 4) throw ShapeError("sobel_magnitude: expected [B, C, H, W]");
  auto gx = depthwise_filter(x, sobel_x());
  auto gy = depthwise_filter(x, sobel_x().t().contiguous());
  return (gx.pow(2) + gy.pow(2) + 1e-12).sqrt();
}

torch::Tensor loss_unified(const LatentStack& z, const LatentStack& z_pd, int64_t* degenerate_levels) {
  require_same_shape(z, z_pd, "loss_unified");
  if (z.size() == 0) throw ShapeError("loss_unified: empty latent stack");
  torch::Tensor total;
  for (size_t i = 0; i < z.size(); ++i) {
    auto a = z[i].flatten(1);
    auto b = z_pd[i].flatten(1);
    auto dot = (a * b).sum(1);
    auto denom = a.pow(2).sum(1).sqrt() * b.pow(2).sum(1).sqrt();
    auto valid = denom > 0;
    if (degenerate_levels) *degenerate_levels += (~valid).sum().item<int64_t>();
    auto cos = torch::where(valid, dot / denom.clamp_min(1e-30), torch::zeros_like(dot));
    auto term = 1.0 - cos.mean();
    total = total.defined() ? total + term : term;
  }
  return total / static_cast<double>(z.size());
}

double mean_cosine(const LatentStack& z, const LatentStack& z_pd) {
  torch::NoGradGuard guard;
  return 1.0 - loss_unified(z, z_pd).item<double>();
}

torch::Tensor loss_task(const torch::Tensor& pred, const torch::Tensor& target) {
  require_same(pred, target, "loss_task");
  return (pred - target).abs().mean() + (sobel_magnitude(pred) - sobel_magnitude(target)).abs().mean();
}

torch::Tensor loss_recon(const torch::Tensor& pred, const torch::Tensor& target) {
  require_same(pred, target, "loss_recon");
  return (pred - target).abs().mean();
}

torch::Tensor loss_text(const torch::Tensor& probs, const torch::Tensor& task_ids) {
  if (probs.dim() != 2 || task_ids.dim() != 1 || probs.size(0) != task_ids.size(0)) {
    throw ShapeError("loss_text: expected probs [B, K] and task ids [B]");
  }
  if (task_ids.numel() > 0 &&
      (task_ids.min().item<int64_t>() < 0 || task_ids.max().item<int64_t>() >= probs.size(1))) {
    throw InputError("loss_text: task id out of range");
  }
  return -probs.gather(1, task_ids.view({-1, 1})).log().mean();
}

torch::Tensor loss_text_from_logits(const torch::Tensor& logits, const torch::Tensor& task_ids) {
  if (logits.dim() != 2 || task_ids.dim() != 1 || logits.size(0) != task_ids.size(0)) {
    throw ShapeError("loss_text: expected logits [B, K] and task ids [B]");
  }
  if (task_ids.numel() > 0 &&
      (task_ids.min().item<int64_t>() < 0 || task_ids.max().item<int64_t>() >= logits.size(1))) {
    throw InputError("loss_text: task id out of range");
  }
  return F::cross_entropy(logits, task_ids);
}

LossBreakdown loss_stage1(const Stage1Terms& t, const LossWeights& w) {
  LossBreakdown out;
  out.total = t.task + w.unified * t.unified + w.recon * t.recon + w.text * t.text;
  out.terms = {{"L_task", scalar(t.task)},
               {"L_unified", scalar(t.unified)},
               {"L_recon", scalar(t.recon)},
               {"L_text", scalar(t.text)},
               {"L_1", scalar(out.total)}};
  return out;
}

torch::Tensor chroma(const torch::Tensor& rgb) {
  if (rgb.dim() != 4 || rgb.size(1) != 3) throw ShapeError("chroma: expected an RGB batch");
  auto ch = rgb.unbind(1);
  auto y = 0.299 * ch[0] + 0.587 * ch[1] + 0.114 * ch[2];
  auto cb = (ch[2] - y) * 0.564 + 0.5;
  auto cr = (ch[0] - y) * 0.713 + 0.5;
  return torch::stack({cb, cr}, 1);
}

torch::Tensor loss_color(const torch::Tensor& fused, const torch::Tensor& visible) {
  if (fused.dim() != 4 || visible.dim() != 4 || fused.size(1) != 3 || visible.size(1) != 3) {
    throw ShapeError("loss_color: fused and visible must be 3-channel batches");
  }
  require_same(fused, visible, "loss_color");
  return (chroma(fused) - chroma(visible)).abs().mean();
}

torch::Tensor loss_grad(const torch::Tensor& fused, const torch::Tensor& infrared,
                        const torch::Tensor& visible) {
  auto yf = luma(fused);
  auto yi = luma(infrared);
  auto yv = luma(visible);
  require_same(yf, yi, "loss_grad");
  require_same(yf, yv, "loss_grad");
  auto target = torch::maximum(sobel_magnitude(yi), sobel_magnitude(yv));
  return (sobel_magnitude(yf) - target).abs().mean();
}

FeatureExtractorImpl::FeatureExtractorImpl(uint64_t seed) {
  conv1 = register_module("conv1", torch::nn::Conv2d(torch::nn::Conv2dOptions(1, 8, 3).padding(1)));
  conv2 = register_module("conv2",
                          torch::nn::Conv2d(torch::nn::Conv2dOptions(8, 16, 3).padding(1).stride(2)));
  conv3 = register_module("conv3", torch::nn::Conv2d(torch::nn::Conv2dOptions(16, 16, 3).padding(1)));
  auto gen = make_generator(seed);
  torch::NoGradGuard guard;
  for (auto* conv : {&conv1, &conv2, &conv3}) {
    auto& weight = (*conv)->weight;
    const double fan_in = static_cast<double>(weight.size(1) * weight.size(2) * weight.size(3));
    weight.copy_(torch::randn(weight.sizes(), gen) * std::sqrt(2.0 / fan_in));
    (*conv)->bias.copy_(torch::randn((*conv)->bias.sizes(), gen) * 0.01);
  }
  for (auto& p : parameters()) p.set_requires_grad(false);
}

std::vector<torch::Tensor> FeatureExtractorImpl::forward(const torch::Tensor& x) {
  auto f1 = torch::relu(conv1(x));
  auto f2 = torch::relu(conv2(f1));
  auto f3 = torch::relu(conv3(f2));
  return {f1, f2, f3};
}

PerceptualLoss::PerceptualLoss(uint64_t seed) : extractor_(FeatureExtractor(seed)) {
  extractor_->eval();
}

torch::Tensor PerceptualLoss::information(const torch::Tensor& luma_batch) const {
  extractor_->to(luma_batch.scalar_type());
  auto feats = extractor_->forward(luma_batch);
  torch::Tensor total;
  for (const auto& f : feats) {
    auto g = depthwise_filter(f, laplacian()).pow(2).mean({1, 2, 3});
    total = total.defined() ? total + g : g;
  }
  return total / static_cast<double>(feats.size());
}

torch::Tensor PerceptualLoss::source_weights(const torch::Tensor& infrared,
                                             const torch::Tensor& visible) const {
  torch::NoGradGuard guard;
  auto gi = information(luma(infrared));
  auto gv = information(luma(visible));
  auto g = torch::stack({gi, gv}, 1);                // [B, 2]
  auto scale = g.mean(1, /*keepdim=*/true) + 1e-12;  // scale-free softmax temperature
  return torch::softmax(g / scale, 1);
}

torch::Tensor PerceptualLoss::operator()(const torch::Tensor& fused, const torch::Tensor& infrared,
                                         const torch::Tensor& visible) const {
  auto yf = luma(fused);
  auto yi = luma(infrared);
  auto yv = luma(visible);
  require_same(yf, yi, "loss_perceptual");
  require_same(yf, yv, "loss_perceptual");
  auto w = source_weights(infrared, visible);
  extractor_->to(yf.scalar_type());
  auto ff = extractor_->forward(yf);
  std::vector<torch::Tensor> fi, fv;
  {
    torch::NoGradGuard guard;
    fi = extractor_->forward(yi);
    fv = extractor_->forward(yv);
  }
  torch::Tensor per_sample;
  for (size_t l = 0; l < ff.size(); ++l) {
    auto mse_i = (ff[l] - fi[l]).pow(2).mean({1, 2, 3});
    auto mse_v = (ff[l] - fv[l]).pow(2).mean({1, 2, 3});
    auto term = w.select(1, 0) * mse_i + w.select(1, 1) * mse_v;
    per_sample = per_sample.defined() ? per_sample + term : term;
  }
  return (per_sample / static_cast<double>(ff.size())).mean();
}

torch::Tensor loss_perceptual(const PerceptualLoss& perceptual, const torch::Tensor& fused,
                              const torch::Tensor& infrared, const torch::Tensor& visible) {
  return perceptual(fused, infrared, visible);
}

Stage2Terms stage2_terms(const PerceptualLoss& perceptual, const torch::Tensor& fused,
                         const torch::Tensor& infrared, const torch::Tensor& visible) {
  return {loss_color(fused, visible), loss_grad(fused, infrared, visible),
          perceptual(fused, infrared, visible)};
}

LossBreakdown loss_stage2(const Stage2Terms& t, const LossWeights& w) {
  LossBreakdown out;
  out.total = t.color + w.grad * t.grad + w.perceptual * t.perceptual;
  out.terms = {{"L_color", scalar(t.color)},
               {"L_grad", scalar(t.grad)},
               {"L_per", scalar(t.perceptual)},
               {"L_2", scalar(out.total)}};
  return out;
}

}  // namespace lure::losses
