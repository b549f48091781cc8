#include "lure/rng.hpp"

#include <numeric>

namespace lure {

std::vector<size_t> shuffled_order(size_t n, uint64_t seed) {
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  Rng rng(seed);
  rng.shuffle(order);
  return order;
}

}  // namespace lure
