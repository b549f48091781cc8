#pragma once

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "lure/image.hpp"

namespace lure::metrics {

/// Row-major gray-level plane with values nominally in [0, 1].
struct Plane {
  int64_t height = 0;
  int64_t width = 0;
  std::vector<double> values;

  Plane() = default;
  Plane(int64_t h, int64_t w, double fill = 0.0);
  double at(int64_t y, int64_t x) const { return values[static_cast<size_t>(y * width + x)]; }
  double& at(int64_t y, int64_t x) { return values[static_cast<size_t>(y * width + x)]; }
  size_t size() const { return values.size(); }
};

/// BT.601 luma of a 3-channel image, or the single channel itself.
Plane luma_plane(const ImageArray& image);

// No-reference statistics. AG, SD and SF are reported on the 8-bit scale
// (plane values multiplied by 255); EN uses a 256-bin histogram of
// round(255 * v).
double entropy(const Plane& p);
double avg_gradient(const Plane& p);
double std_dev(const Plane& p);
double spatial_frequency(const Plane& p);

/// Pearson correlation; 0 when either plane is constant.
double pearson(const Plane& a, const Plane& b);
/// Mean of pearson(fused, ir) and pearson(fused, vi).
double correlation(const Plane& fused, const Plane& ir, const Plane& vi);
/// pearson(fused - vi, ir) + pearson(fused - ir, vi).
double scd(const Plane& fused, const Plane& ir, const Plane& vi);

// Full-reference scores on the [0, 1] scale (peak 1).
inline constexpr double kPsnrCap = 100.0;
double psnr(const Plane& a, const Plane& b);
/// Mean SSIM over valid 11x11 Gaussian windows (sigma 1.5), C1 = 0.01^2,
/// C2 = 0.03^2. Windows shrink to the image size for planes smaller than 11.
double ssim(const Plane& a, const Plane& b);
/// Five scales with weights 0.0448, 0.2856, 0.3001, 0.2363, 0.1333 and 2x2
/// average downsampling; contrast-structure terms are clamped at 0.
double ms_ssim(const Plane& a, const Plane& b);

/// 11-tap (or shorter) normalised Gaussian window, sigma 1.5.
std::vector<double> gaussian_window(int64_t taps, double sigma = 1.5);

struct Scores {
  double en = 0, ag = 0, sd = 0, sf = 0, cc = 0, scd = 0, psnr = 0, ssim = 0, ms_ssim = 0;
};

/// All metrics for one fused image; PSNR, SSIM and MS-SSIM are averaged over
/// the infrared and visible references.
Scores score(const ImageArray& fused, const ImageArray& ir, const ImageArray& vi);

struct EvalRow {
  std::string stem;
  Scores scores;
};

/// Scores every fused PNG that has infrared and visible sources with the same
/// stem. Rows are sorted by stem; stems without sources are skipped and
/// reported through `skipped`.
std::vector<EvalRow> evaluate_directory(const std::filesystem::path& fused_dir,
                                        const std::filesystem::path& ir_dir,
                                        const std::filesystem::path& vi_dir,
                                        std::vector<std::string>* skipped = nullptr);

/// Column-wise mean of the rows (all zeros for no rows).
Scores mean_scores(const std::vector<EvalRow>& rows);

/// Convention lines ('#'), the header row, one row per image and a "mean" row
/// when rows exist. Numbers use 10 significant digits.
void write_csv(std::ostream& os, const std::vector<EvalRow>& rows);

}  // namespace lure::metrics
