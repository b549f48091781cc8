#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace lure::probe {

struct TsneOptions {
  double perplexity = 20.0;  // lowered to (N - 1) / 3 for small sets
  int iterations = 500;
  double learning_rate = 200.0;
  double exaggeration = 12.0;
  int exaggeration_iterations = 100;
  uint64_t seed = 5;
};

/// Exact t-SNE embedding of `points` (rows of equal length) into 2-D.
std::vector<std::array<double, 2>> tsne(const std::vector<std::vector<double>>& points,
                                        const TsneOptions& options = {});

}  // namespace lure::probe
