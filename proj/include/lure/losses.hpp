#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "lure/latent.hpp"

namespace lure::losses {

// All image-valued arguments are [B, C, H, W] tensors.

struct LossWeights {
  // Stage 1: L_task + unified * L_unified + recon * L_recon + text * L_text
  double unified = 1.0;
  double recon = 1.0;
  double text = 0.1;
  // Stage 2: L_color + grad * L_grad + perceptual * L_per
  double grad = 10.0;
  double perceptual = 1.0;

  void validate() const;
};

/// Weighted total plus the unweighted value of every term, for logging.
struct LossBreakdown {
  torch::Tensor total;
  std::map<std::string, double> terms;
};

/// Per-channel 3x3 Sobel gradient magnitude with reflection padding.
torch::Tensor sobel_magnitude(const torch::Tensor& x);

/// Mean over levels of (1 - cosine similarity) between flattened per-sample
/// latents, averaged over the batch. A zero-norm pair counts as cosine 0;
/// `degenerate_levels`, when given, is incremented once per such pair.
torch::Tensor loss_unified(const LatentStack& z, const LatentStack& z_pd,
                           int64_t* degenerate_levels = nullptr);

/// Mean cosine similarity across levels and samples (1 - loss_unified).
double mean_cosine(const LatentStack& z, const LatentStack& z_pd);

/// L1 plus L1 between Sobel gradient magnitudes.
torch::Tensor loss_task(const torch::Tensor& pred, const torch::Tensor& target);

/// Mean absolute error.
torch::Tensor loss_recon(const torch::Tensor& pred, const torch::Tensor& target);

/// -log p[task] averaged over rows. probs: [B, K], task_ids: int64 [B].
torch::Tensor loss_text(const torch::Tensor& probs, const torch::Tensor& task_ids);
/// Same objective evaluated from logits (numerically stable form used in training).
torch::Tensor loss_text_from_logits(const torch::Tensor& logits, const torch::Tensor& task_ids);

struct Stage1Terms {
  torch::Tensor task;
  torch::Tensor unified;
  torch::Tensor recon;
  torch::Tensor text;
};
LossBreakdown loss_stage1(const Stage1Terms& terms, const LossWeights& weights);

/// Cb and Cr planes (BT.601, offset 0.5) of an RGB batch: [B, 2, H, W].
torch::Tensor chroma(const torch::Tensor& rgb);

/// MAE between the chroma planes of the fused and visible images.
torch::Tensor loss_color(const torch::Tensor& fused, const torch::Tensor& visible);

/// MAE between |Sobel(luma(fused))| and max(|Sobel(ir)|, |Sobel(luma(vi))|).
torch::Tensor loss_grad(const torch::Tensor& fused, const torch::Tensor& infrared,
                        const torch::Tensor& visible);

/// Frozen three-layer convolutional feature extractor with seeded random
/// weights, applied to luma.
class FeatureExtractorImpl : public torch::nn::Module {
 public:
  explicit FeatureExtractorImpl(uint64_t seed = 2024);
  std::vector<torch::Tensor> forward(const torch::Tensor& luma_batch);

  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, conv3{nullptr};
};
TORCH_MODULE(FeatureExtractor);

/// Information-weighted feature MSE. Each source's weight comes from the mean
/// squared Laplacian of its features (an information measure), normalised by
/// a softmax over the two sources after dividing by their mean; the weights
/// are constants with respect to the fused image.
class PerceptualLoss {
 public:
  explicit PerceptualLoss(uint64_t seed = 2024);

  torch::Tensor operator()(const torch::Tensor& fused, const torch::Tensor& infrared,
                           const torch::Tensor& visible) const;
  /// Per-sample source weights [B, 2] (infrared, visible); rows sum to 1.
  torch::Tensor source_weights(const torch::Tensor& infrared, const torch::Tensor& visible) const;
  /// Mean squared Laplacian response over all feature layers, per sample [B].
  torch::Tensor information(const torch::Tensor& luma_batch) const;

  FeatureExtractor& extractor() const { return extractor_; }

 private:
  mutable FeatureExtractor extractor_{nullptr};
};

torch::Tensor loss_perceptual(const PerceptualLoss& perceptual, const torch::Tensor& fused,
                              const torch::Tensor& infrared, const torch::Tensor& visible);

struct Stage2Terms {
  torch::Tensor color;
  torch::Tensor grad;
  torch::Tensor perceptual;
};
Stage2Terms stage2_terms(const PerceptualLoss& perceptual, const torch::Tensor& fused,
                         const torch::Tensor& infrared, const torch::Tensor& visible);
LossBreakdown loss_stage2(const Stage2Terms& terms, const LossWeights& weights);

}  // namespace lure::losses
