#pragma once

// Independent reference implementations written as direct loops. They share
// no code with the library and exist only to cross-check it.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <vector>

#include <torch/torch.h>

namespace oracle {

using Grid = std::vector<std::vector<double>>;  // [row][col]

inline Grid grid_of(const torch::Tensor& hw) {
  auto t = hw.to(torch::kFloat64).contiguous();
  Grid g(static_cast<size_t>(t.size(0)), std::vector<double>(static_cast<size_t>(t.size(1))));
  for (int64_t y = 0; y < t.size(0); ++y)
    for (int64_t x = 0; x < t.size(1); ++x) g[y][x] = t[y][x].item<double>();
  return g;
}

inline double mean(const Grid& g) {
  double s = 0;
  size_t n = 0;
  for (const auto& r : g)
    for (double v : r) s += v, ++n;
  return s / n;
}

inline double entropy(const Grid& g) {
  std::map<long, double> counts;
  double n = 0;
  for (const auto& r : g)
    for (double v : r) counts[std::lround(std::clamp(v, 0.0, 1.0) * 255.0)] += 1, n += 1;
  double h = 0;
  for (auto& [k, c] : counts) h += -(c / n) * std::log2(c / n);
  return h;
}

inline double avg_gradient(const Grid& g) {
  double s = 0;
  const size_t h = g.size(), w = g[0].size();
  for (size_t y = 0; y + 1 < h; ++y)
    for (size_t x = 0; x + 1 < w; ++x) {
      double dx = 255 * (g[y][x + 1] - g[y][x]), dy = 255 * (g[y + 1][x] - g[y][x]);
      s += std::sqrt(0.5 * (dx * dx + dy * dy));
    }
  return s / ((h - 1) * (w - 1));
}

inline double std_dev(const Grid& g) {
  const double m = mean(g);
  double s = 0;
  size_t n = 0;
  for (const auto& r : g)
    for (double v : r) s += (v - m) * (v - m), ++n;
  return 255 * std::sqrt(s / n);
}

inline double spatial_frequency(const Grid& g) {
  const size_t h = g.size(), w = g[0].size();
  double rf = 0, cf = 0;
  for (size_t y = 0; y < h; ++y)
    for (size_t x = 1; x < w; ++x) rf += std::pow(255 * (g[y][x] - g[y][x - 1]), 2);
  for (size_t y = 1; y < h; ++y)
    for (size_t x = 0; x < w; ++x) cf += std::pow(255 * (g[y][x] - g[y - 1][x]), 2);
  return std::sqrt(rf / (h * (w - 1)) + cf / ((h - 1) * w));
}

inline double pearson(const Grid& a, const Grid& b) {
  const double ma = mean(a), mb = mean(b);
  double num = 0, da = 0, db = 0;
  for (size_t y = 0; y < a.size(); ++y)
    for (size_t x = 0; x < a[0].size(); ++x) {
      num += (a[y][x] - ma) * (b[y][x] - mb);
      da += (a[y][x] - ma) * (a[y][x] - ma);
      db += (b[y][x] - mb) * (b[y][x] - mb);
    }
  return num / std::sqrt(da * db);
}

inline double psnr(const Grid& a, const Grid& b) {
  double s = 0;
  size_t n = 0;
  for (size_t y = 0; y < a.size(); ++y)
    for (size_t x = 0; x < a[0].size(); ++x) s += std::pow(a[y][x] - b[y][x], 2), ++n;
  return 10 * std::log10(1.0 / (s / n));
}

// Windowed SSIM with an explicit 2-D Gaussian, evaluated window by window.
// Returns {ssim, cs}.
inline std::pair<double, double> ssim(const Grid& a, const Grid& b) {
  const int h = static_cast<int>(a.size()), w = static_cast<int>(a[0].size());
  const int k = std::min({11, h, w});
  std::vector<std::vector<double>> win(k, std::vector<double>(k));
  double total = 0;
  const double c = (k - 1) / 2.0;
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) {
      win[i][j] = std::exp(-((i - c) * (i - c) + (j - c) * (j - c)) / (2 * 1.5 * 1.5));
      total += win[i][j];
    }
  const double c1 = 1e-4, c2 = 9e-4;
  double ss = 0, cs = 0;
  int count = 0;
  for (int y = 0; y + k <= h; ++y)
    for (int x = 0; x + k <= w; ++x) {
      double ma = 0, mb = 0;
      for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) {
          ma += win[i][j] / total * a[y + i][x + j];
          mb += win[i][j] / total * b[y + i][x + j];
        }
      double va = 0, vb = 0, cov = 0;
      for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) {
          const double wt = win[i][j] / total;
          va += wt * (a[y + i][x + j] - ma) * (a[y + i][x + j] - ma);
          vb += wt * (b[y + i][x + j] - mb) * (b[y + i][x + j] - mb);
          cov += wt * (a[y + i][x + j] - ma) * (b[y + i][x + j] - mb);
        }
      const double csv = (2 * cov + c2) / (va + vb + c2);
      ss += (2 * ma * mb + c1) / (ma * ma + mb * mb + c1) * csv;
      cs += csv;
      ++count;
    }
  return {ss / count, cs / count};
}

inline Grid halve(const Grid& g) {
  Grid out(g.size() / 2, std::vector<double>(g[0].size() / 2));
  for (size_t y = 0; y < out.size(); ++y)
    for (size_t x = 0; x < out[0].size(); ++x)
      out[y][x] = (g[2 * y][2 * x] + g[2 * y][2 * x + 1] + g[2 * y + 1][2 * x] + g[2 * y + 1][2 * x + 1]) / 4;
  return out;
}

inline double ms_ssim(Grid a, Grid b) {
  const double w[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
  double out = 1;
  for (int s = 0; s < 5; ++s) {
    auto [ss, cs] = ssim(a, b);
    out *= std::pow(std::max(0.0, s == 4 ? ss : cs), w[s]);
    a = halve(a);
    b = halve(b);
  }
  return out;
}

// Sobel magnitude of one plane with reflection padding.
inline Grid sobel(const Grid& g) {
  const int h = static_cast<int>(g.size()), w = static_cast<int>(g[0].size());
  auto at = [&](int y, int x) {
    y = y < 0 ? -y : (y >= h ? 2 * h - 2 - y : y);
    x = x < 0 ? -x : (x >= w ? 2 * w - 2 - x : x);
    return g[y][x];
  };
  Grid out(h, std::vector<double>(w));
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double gx = -at(y - 1, x - 1) + at(y - 1, x + 1) - 2 * at(y, x - 1) + 2 * at(y, x + 1) -
                        at(y + 1, x - 1) + at(y + 1, x + 1);
      const double gy = -at(y - 1, x - 1) - 2 * at(y - 1, x) - at(y - 1, x + 1) + at(y + 1, x - 1) +
                        2 * at(y + 1, x) + at(y + 1, x + 1);
      out[y][x] = std::sqrt(gx * gx + gy * gy + 1e-12);
    }
  return out;
}

// Cosine similarity of two flattened vectors; 0 when either has zero norm.
inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0, na = 0, nb = 0;
  for (size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i], na += a[i] * a[i], nb += b[i] * b[i];
  if (na == 0 || nb == 0) return 0;
  return dot / std::sqrt(na * nb);
}

struct GradCheck {
  double max_rel_error = 0;
  int coordinates = 0;
};

// Central differences of `f` at `coords` random positions of `x` (double),
// against the autograd gradient.
inline GradCheck check_gradient(const std::function<torch::Tensor(const torch::Tensor&)>& f, torch::Tensor x,
                                int coords, uint64_t seed, double h = 1e-6) {
  x = x.detach().clone().to(torch::kFloat64).set_requires_grad(true);
  auto y = f(x);
  auto analytic = torch::autograd::grad({y}, {x})[0].detach().flatten();
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  auto idx = torch::randint(x.numel(), {coords}, gen, torch::kInt64);
  GradCheck out;
  torch::NoGradGuard guard;
  auto flat = x.detach().clone();
  for (int c = 0; c < coords; ++c) {
    const auto i = idx[c].item<int64_t>();
    auto plus = flat.clone();
    auto minus = flat.clone();
    plus.view(-1)[i] += h;
    minus.view(-1)[i] -= h;
    const double numeric = (f(plus).item<double>() - f(minus).item<double>()) / (2 * h);
    const double a = analytic[i].item<double>();
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
    out.max_rel_error = std::max(out.max_rel_error, std::abs(a - numeric) / denom);
    ++out.coordinates;
  }
  return out;
}

}  // namespace oracle
