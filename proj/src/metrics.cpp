#include "lure/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>

#include "lure/error.hpp"

namespace fs = std::filesystem;

namespace lure::metrics {

namespace {

constexpr double kEightBit = 255.0;
constexpr std::array<double, 5> kMsWeights{0.0448, 0.2856, 0.3001, 0.2363, 0.1333};

void require_same(const Plane& a, const Plane& b, const char* what) {
  if (a.height != b.height || a.width != b.width) {
    throw ShapeError(std::string(what) + ": planes differ in size (" + std::to_string(a.height) + "x" +
                     std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" +
                     std::to_string(b.width) + ")");
  }
  if (a.size() == 0) throw ShapeError(std::string(what) + ": empty plane");
}

double mean_of(const Plane& p) {
  double s = 0.0;
  for (double v : p.values) s += v;
  return s / static_cast<double>(p.size());
}

// Valid-mode separable filtering with a square window built from `g`.
Plane filter_valid(const Plane& p, const std::vector<double>& g) {
  const auto k = static_cast<int64_t>(g.size());
  const int64_t oh = p.height - k + 1;
  const int64_t ow = p.width - k + 1;
  Plane rows(p.height, ow);
  for (int64_t y = 0; y < p.height; ++y) {
    for (int64_t x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int64_t i = 0; i < k; ++i) s += g[static_cast<size_t>(i)] * p.at(y, x + i);
      rows.at(y, x) = s;
    }
  }
  Plane out(oh, ow);
  for (int64_t y = 0; y < oh; ++y) {
    for (int64_t x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int64_t i = 0; i < k; ++i) s += g[static_cast<size_t>(i)] * rows.at(y + i, x);
      out.at(y, x) = s;
    }
  }
  return out;
}

Plane multiply(const Plane& a, const Plane& b) {
  Plane out(a.height, a.width);
  for (size_t i = 0; i < a.size(); ++i) out.values[i] = a.values[i] * b.values[i];
  return out;
}

// Mean SSIM and mean contrast-structure term.
std::pair<double, double> ssim_parts(const Plane& a, const Plane& b) {
  constexpr double c1 = 0.01 * 0.01;
  constexpr double c2 = 0.03 * 0.03;
  const auto taps = std::min<int64_t>(11, std::min(a.height, a.width));
  const auto g = gaussian_window(taps);
  const auto mu_a = filter_valid(a, g);
  const auto mu_b = filter_valid(b, g);
  const auto aa = filter_valid(multiply(a, a), g);
  const auto bb = filter_valid(multiply(b, b), g);
  const auto ab = filter_valid(multiply(a, b), g);
  double ssim_sum = 0.0, cs_sum = 0.0;
  for (size_t i = 0; i < mu_a.size(); ++i) {
    const double ma = mu_a.values[i], mb = mu_b.values[i];
    const double va = aa.values[i] - ma * ma;
    const double vb = bb.values[i] - mb * mb;
    const double cov = ab.values[i] - ma * mb;
    const double cs = (2.0 * cov + c2) / (va + vb + c2);
    ssim_sum += (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1) * cs;
    cs_sum += cs;
  }
  const auto n = static_cast<double>(mu_a.size());
  return {ssim_sum / n, cs_sum / n};
}

Plane downsample2(const Plane& p) {
  Plane out(p.height / 2, p.width / 2);
  for (int64_t y = 0; y < out.height; ++y) {
    for (int64_t x = 0; x < out.width; ++x) {
      out.at(y, x) = 0.25 * (p.at(2 * y, 2 * x) + p.at(2 * y, 2 * x + 1) + p.at(2 * y + 1, 2 * x) +
                             p.at(2 * y + 1, 2 * x + 1));
    }
  }
  return out;
}

Plane difference(const Plane& a, const Plane& b) {
  Plane out(a.height, a.width);
  for (size_t i = 0; i < a.size(); ++i) out.values[i] = a.values[i] - b.values[i];
  return out;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

}  // namespace

Plane::Plane(int64_t h, int64_t w, double fill)
    : height(h), width(w), values(static_cast<size_t>(std::max<int64_t>(0, h * w)), fill) {}

Plane luma_plane(const ImageArray& image) {
  const auto t = image.tensor().to(torch::kFloat64).contiguous();
  Plane out(image.height(), image.width());
  const auto* d = t.data_ptr<double>();
  const auto n = static_cast<size_t>(image.height() * image.width());
  if (image.channels() == 1) {
    std::copy(d, d + n, out.values.begin());
  } else {
    for (size_t i = 0; i < n; ++i) out.values[i] = 0.299 * d[i] + 0.587 * d[n + i] + 0.114 * d[2 * n + i];
  }
  return out;
}

double entropy(const Plane& p) {
  if (p.size() == 0) throw ShapeError("entropy: empty plane");
  std::array<size_t, 256> hist{};
  for (double v : p.values) {
    const auto bin = static_cast<long>(std::lround(std::clamp(v, 0.0, 1.0) * kEightBit));
    ++hist[static_cast<size_t>(bin)];
  }
  double h = 0.0;
  const auto n = static_cast<double>(p.size());
  for (size_t c : hist) {
    if (c == 0) continue;
    const double q = static_cast<double>(c) / n;
    h -= q * std::log2(q);
  }
  return h + 0.0;  // turns -0 into 0
}

double avg_gradient(const Plane& p) {
  if (p.height < 2 || p.width < 2) return 0.0;
  double s = 0.0;
  for (int64_t y = 0; y + 1 < p.height; ++y) {
    for (int64_t x = 0; x + 1 < p.width; ++x) {
      const double dx = (p.at(y, x + 1) - p.at(y, x)) * kEightBit;
      const double dy = (p.at(y + 1, x) - p.at(y, x)) * kEightBit;
      s += std::sqrt((dx * dx + dy * dy) / 2.0);
    }
  }
  return s / static_cast<double>((p.height - 1) * (p.width - 1));
}

double std_dev(const Plane& p) {
  if (p.size() == 0) throw ShapeError("std_dev: empty plane");
  const double m = mean_of(p);
  double s = 0.0;
  for (double v : p.values) s += (v - m) * (v - m);
  return std::sqrt(s / static_cast<double>(p.size())) * kEightBit;
}

double spatial_frequency(const Plane& p) {
  double rf = 0.0, cf = 0.0;
  if (p.width > 1) {
    for (int64_t y = 0; y < p.height; ++y) {
      for (int64_t x = 1; x < p.width; ++x) {
        const double d = (p.at(y, x) - p.at(y, x - 1)) * kEightBit;
        rf += d * d;
      }
    }
    rf /= static_cast<double>(p.height * (p.width - 1));
  }
  if (p.height > 1) {
    for (int64_t y = 1; y < p.height; ++y) {
      for (int64_t x = 0; x < p.width; ++x) {
        const double d = (p.at(y, x) - p.at(y - 1, x)) * kEightBit;
        cf += d * d;
      }
    }
    cf /= static_cast<double>((p.height - 1) * p.width);
  }
  return std::sqrt(rf + cf);
}

double pearson(const Plane& a, const Plane& b) {
  require_same(a, b, "pearson");
  // Exactly constant planes would otherwise give rounding noise from the mean.
  auto constant = [](const Plane& p) {
    return p.values.empty() || std::all_of(p.values.begin(), p.values.end(), [&](double v) { return v == p.values[0]; });
  };
  if (constant(a) || constant(b)) return 0.0;
  const double ma = mean_of(a), mb = mean_of(b);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double da = a.values[i] - ma, db = b.values[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

double correlation(const Plane& fused, const Plane& ir, const Plane& vi) {
  return 0.5 * (pearson(fused, ir) + pearson(fused, vi));
}

double scd(const Plane& fused, const Plane& ir, const Plane& vi) {
  require_same(fused, ir, "scd");
  require_same(fused, vi, "scd");
  return pearson(difference(fused, vi), ir) + pearson(difference(fused, ir), vi);
}

double psnr(const Plane& a, const Plane& b) {
  require_same(a, b, "psnr");
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += (a.values[i] - b.values[i]) * (a.values[i] - b.values[i]);
  const double mse = s / static_cast<double>(a.size());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

std::vector<double> gaussian_window(int64_t taps, double sigma) {
  if (taps < 1) throw ShapeError("gaussian window needs at least one tap");
  std::vector<double> g(static_cast<size_t>(taps));
  const double centre = static_cast<double>(taps - 1) / 2.0;
  double s = 0.0;
  for (int64_t i = 0; i < taps; ++i) {
    const double d = static_cast<double>(i) - centre;
    g[static_cast<size_t>(i)] = std::exp(-d * d / (2.0 * sigma * sigma));
    s += g[static_cast<size_t>(i)];
  }
  for (double& v : g) v /= s;
  return g;
}

double ssim(const Plane& a, const Plane& b) {
  require_same(a, b, "ssim");
  return ssim_parts(a, b).first;
}

double ms_ssim(const Plane& a, const Plane& b) {
  require_same(a, b, "ms_ssim");
  constexpr int64_t kMin = int64_t{1} << (kMsWeights.size() - 1);
  if (a.height < kMin || a.width < kMin) {
    throw ShapeError("ms_ssim: planes must be at least " + std::to_string(kMin) + " pixels on each side");
  }
  Plane x = a, y = b;
  double result = 1.0;
  for (size_t s = 0; s < kMsWeights.size(); ++s) {
    const auto [full, cs] = ssim_parts(x, y);
    const bool last = s + 1 == kMsWeights.size();
    result *= std::pow(std::max(0.0, last ? full : cs), kMsWeights[s]);
    if (!last) {
      x = downsample2(x);
      y = downsample2(y);
    }
  }
  return result;
}

Scores score(const ImageArray& fused, const ImageArray& ir, const ImageArray& vi) {
  const auto f = luma_plane(fused);
  const auto i = luma_plane(ir);
  const auto v = luma_plane(vi);
  require_same(f, i, "score");
  require_same(f, v, "score");
  Scores s;
  s.en = entropy(f);
  s.ag = avg_gradient(f);
  s.sd = std_dev(f);
  s.sf = spatial_frequency(f);
  s.cc = correlation(f, i, v);
  s.scd = scd(f, i, v);
  s.psnr = 0.5 * (psnr(f, i) + psnr(f, v));
  s.ssim = 0.5 * (ssim(f, i) + ssim(f, v));
  s.ms_ssim = 0.5 * (ms_ssim(f, i) + ms_ssim(f, v));
  return s;
}

std::vector<EvalRow> evaluate_directory(const fs::path& fused_dir, const fs::path& ir_dir,
                                        const fs::path& vi_dir, std::vector<std::string>* skipped) {
  for (const auto& dir : {fused_dir, ir_dir, vi_dir}) {
    if (!fs::is_directory(dir)) throw InputError("not a directory: " + dir.string());
  }
  std::vector<EvalRow> rows;
  for (const auto& path : list_pngs(fused_dir)) {
    const auto stem = path.stem().string();
    const auto ir_path = ir_dir / (stem + ".png");
    const auto vi_path = vi_dir / (stem + ".png");
    if (!fs::exists(ir_path) || !fs::exists(vi_path)) {
      if (skipped) skipped->push_back(stem);
      continue;
    }
    rows.push_back({stem, score(load_png(path, Modality::kVisible), load_png(ir_path, Modality::kInfrared),
                                load_png(vi_path, Modality::kVisible))});
  }
  std::sort(rows.begin(), rows.end(), [](const EvalRow& a, const EvalRow& b) { return a.stem < b.stem; });
  return rows;
}

Scores mean_scores(const std::vector<EvalRow>& rows) {
  Scores m;
  if (rows.empty()) return m;
  for (const auto& r : rows) {
    m.en += r.scores.en;
    m.ag += r.scores.ag;
    m.sd += r.scores.sd;
    m.sf += r.scores.sf;
    m.cc += r.scores.cc;
    m.scd += r.scores.scd;
    m.psnr += r.scores.psnr;
    m.ssim += r.scores.ssim;
    m.ms_ssim += r.scores.ms_ssim;
  }
  const auto n = static_cast<double>(rows.size());
  for (double* v : {&m.en, &m.ag, &m.sd, &m.sf, &m.cc, &m.scd, &m.psnr, &m.ssim, &m.ms_ssim}) *v /= n;
  return m;
}

void write_csv(std::ostream& os, const std::vector<EvalRow>& rows) {
  os << "# EN: entropy in bits of the 256-bin histogram of fused luma\n"
        "# AG SD SF: fused luma on the 0-255 scale; AG averages sqrt((dx^2+dy^2)/2) over forward "
        "differences; SD is the population std; SF = sqrt(RF^2+CF^2)\n"
        "# CC: mean Pearson correlation of fused luma with ir and vi luma\n"
        "# SCD: corr(F-vi, ir) + corr(F-ir, vi)\n"
        "# PSNR SSIM MS_SSIM: luma on [0,1] with peak 1, mean over the ir and vi references; "
        "PSNR capped at 100 dB\n";
  os << "stem,EN,AG,SD,SF,CC,SCD,PSNR,SSIM,MS_SSIM\n";
  auto line = [&os](const std::string& stem, const Scores& s) {
    os << stem << ',' << fmt(s.en) << ',' << fmt(s.ag) << ',' << fmt(s.sd) << ',' << fmt(s.sf) << ','
       << fmt(s.cc) << ',' << fmt(s.scd) << ',' << fmt(s.psnr) << ',' << fmt(s.ssim) << ','
       << fmt(s.ms_ssim) << '\n';
  };
  for (const auto& r : rows) line(r.stem, r.scores);
  if (!rows.empty()) line("mean", mean_scores(rows));
}

}  // namespace lure::metrics
