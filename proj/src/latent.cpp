#include "lure/latent.hpp"

#include <string>

#include "lure/error.hpp"

namespace lure {

bool LatentStack::same_shape(const LatentStack& other) const {
  if (levels.size() != other.levels.size()) return false;
  for (size_t i = 0; i < levels.size(); ++i) {
    if (levels[i].sizes() != other.levels[i].sizes()) return false;
  }
  return true;
}

bool LatentStack::all_finite() const {
  for (const auto& z : levels) {
    if (!torch::isfinite(z).all().item<bool>()) return false;
  }
  return true;
}

LatentStack LatentStack::detached() const {
  LatentStack out;
  for (const auto& z : levels) out.levels.push_back(z.detach());
  return out;
}

LatentStack LatentStack::scaled(double factor) const {
  LatentStack out;
  for (const auto& z : levels) out.levels.push_back(z * factor);
  return out;
}

LatentStack LatentStack::slice(int64_t begin, int64_t end) const {
  LatentStack out;
  for (const auto& z : levels) out.levels.push_back(z.slice(0, begin, end));
  return out;
}

LatentStack LatentStack::concat(const std::vector<LatentStack>& parts) {
  LatentStack out;
  if (parts.empty()) return out;
  for (size_t i = 0; i < parts.front().size(); ++i) {
    std::vector<torch::Tensor> level;
    for (const auto& p : parts) level.push_back(p[i]);
    out.levels.push_back(torch::cat(level, 0));
  }
  return out;
}

void require_same_shape(const LatentStack& a, const LatentStack& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(what) + ": latent stacks differ in level count or shape");
  }
}

}  // namespace lure
