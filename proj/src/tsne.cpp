#include "lure/tsne.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "lure/error.hpp"
#include "lure/rng.hpp"

namespace lure::probe {

namespace {

// Row-conditional probabilities for one point at a target entropy, by
// bisection on the Gaussian precision.
void conditional_row(const std::vector<double>& d2, size_t i, double target_entropy, std::vector<double>& row) {
  const size_t n = d2.size();
  double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
  double dmin = std::numeric_limits<double>::infinity();
  for (size_t j = 0; j < n; ++j) {
    if (j != i) dmin = std::min(dmin, d2[j]);
  }
  for (int it = 0; it < 100; ++it) {
    double sum = 0.0, weighted = 0.0;
    for (size_t j = 0; j < n; ++j) {
      row[j] = j == i ? 0.0 : std::exp(-beta * (d2[j] - dmin));
      sum += row[j];
      weighted += row[j] * (d2[j] - dmin);
    }
    const double entropy = std::log(sum) + beta * weighted / sum;
    for (size_t j = 0; j < n; ++j) row[j] /= sum;
    const double diff = entropy - target_entropy;
    if (std::abs(diff) < 1e-5) break;
    if (diff > 0) {
      lo = beta;
      beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
    } else {
      hi = beta;
      beta = 0.5 * (beta + lo);
    }
  }
}

double gaussian(Rng& rng) {
  const double u1 = std::max(rng.uniform(), 1e-300);
  const double u2 = rng.uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace

std::vector<std::array<double, 2>> tsne(const std::vector<std::vector<double>>& points,
                                        const TsneOptions& options) {
  const size_t n = points.size();
  std::vector<std::array<double, 2>> y(n, {0.0, 0.0});
  if (n < 2) return y;
  const size_t dim = points.front().size();
  for (const auto& p : points) {
    if (p.size() != dim) throw ShapeError("tsne: points differ in dimension");
  }

  std::vector<double> p(n * n, 0.0);
  {
    const double perplexity = std::min(options.perplexity, std::max(1.0, static_cast<double>(n - 1) / 3.0));
    const double target = std::log(perplexity);
    std::vector<double> d2(n), row(n);
    for (size_t i = 0; i < n; ++i) {
      for (size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (size_t k = 0; k < dim; ++k) {
          const double d = points[i][k] - points[j][k];
          s += d * d;
        }
        d2[j] = s;
      }
      conditional_row(d2, i, target, row);
      for (size_t j = 0; j < n; ++j) p[i * n + j] = row[j];
    }
    for (size_t i = 0; i < n; ++i) {
      for (size_t j = i + 1; j < n; ++j) {
        const double v = std::max((p[i * n + j] + p[j * n + i]) / (2.0 * static_cast<double>(n)), 1e-12);
        p[i * n + j] = p[j * n + i] = v;
      }
      p[i * n + i] = 0.0;
    }
  }

  Rng rng(options.seed);
  for (auto& v : y) v = {1e-4 * gaussian(rng), 1e-4 * gaussian(rng)};
  std::vector<std::array<double, 2>> velocity(n, {0.0, 0.0}), gains(n, {1.0, 1.0}), grad(n);
  std::vector<double> q(n * n);

  for (int it = 0; it < options.iterations; ++it) {
    const double exaggeration = it < options.exaggeration_iterations ? options.exaggeration : 1.0;
    const double momentum = it < 250 ? 0.5 : 0.8;
    double qsum = 0.0;
    for (size_t i = 0; i < n; ++i) {
      q[i * n + i] = 0.0;
      for (size_t j = i + 1; j < n; ++j) {
        const double dx = y[i][0] - y[j][0], dy = y[i][1] - y[j][1];
        const double w = 1.0 / (1.0 + dx * dx + dy * dy);
        q[i * n + j] = q[j * n + i] = w;
        qsum += 2.0 * w;
      }
    }
    for (size_t i = 0; i < n; ++i) {
      double gx = 0.0, gy = 0.0;
      for (size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        const double w = q[i * n + j];
        const double coeff = (exaggeration * p[i * n + j] - w / qsum) * w;
        gx += coeff * (y[i][0] - y[j][0]);
        gy += coeff * (y[i][1] - y[j][1]);
      }
      grad[i] = {4.0 * gx, 4.0 * gy};
    }
    for (size_t i = 0; i < n; ++i) {
      for (int d = 0; d < 2; ++d) {
        const bool same_sign = (grad[i][d] > 0) == (velocity[i][d] > 0);
        gains[i][d] = std::max(0.01, same_sign ? gains[i][d] * 0.8 : gains[i][d] + 0.2);
        velocity[i][d] = momentum * velocity[i][d] - options.learning_rate * gains[i][d] * grad[i][d];
        y[i][d] += velocity[i][d];
      }
    }
    double mx = 0.0, my = 0.0;
    for (const auto& v : y) {
      mx += v[0];
      my += v[1];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    for (auto& v : y) {
      v[0] -= mx;
      v[1] -= my;
    }
  }
  return y;
}

}  // namespace lure::probe
