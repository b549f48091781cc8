#pragma once

#include <vector>

#include <torch/torch.h>

namespace lure {

/// Multi-scale latents, level i shaped [B, r_i, H / 2^i, W / 2^i].
struct LatentStack {
  std::vector<torch::Tensor> levels;

  size_t size() const { return levels.size(); }
  const torch::Tensor& operator[](size_t i) const { return levels.at(i); }
  torch::Tensor& operator[](size_t i) { return levels.at(i); }

  bool same_shape(const LatentStack& other) const;
  bool all_finite() const;
  LatentStack detached() const;
  LatentStack scaled(double factor) const;
  /// Samples [begin, end) along the batch dimension.
  LatentStack slice(int64_t begin, int64_t end) const;
  static LatentStack concat(const std::vector<LatentStack>& parts);
};

/// Throws ShapeError naming `what` if the stacks differ in level count or shape.
void require_same_shape(const LatentStack& a, const LatentStack& b, const char* what);

}  // namespace lure
