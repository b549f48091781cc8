#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "lure/image.hpp"
#include "lure/model.hpp"

namespace lure::inference {

struct FusionRequest {
  ImageArray infrared;  // 1 channel
  ImageArray visible;   // 3 channels, same height and width
};

/// Which description each side was encoded with.
struct FusionTrace {
  size_t ir_prompt = 0;  // catalog rows
  size_t vi_prompt = 0;
  int ir_task = 0;
  int vi_task = 0;
  int64_t padded_height = 0;
  int64_t padded_width = 0;
};

/// Encodes each modality with its own description, fuses the latents with the
/// learned refinement plus the prior rule, decodes, clamps to [0, 1] and crops
/// back to the input size. Throws InputError for an unknown prompt and
/// ShapeError for incompatible images.
ImageArray fuse(LureModel& model, const FusionRequest& request, std::string_view ir_prompt,
                std::string_view vi_prompt, FusionTrace* trace = nullptr);

struct ManifestRow {
  std::string stem;
  std::string status;  // "ok", "unmatched" or "error: ..."
  std::string output;  // file name inside the output directory
};

struct BatchReport {
  std::vector<ManifestRow> rows;
  size_t fused = 0;
  size_t failed = 0;
};

inline constexpr std::string_view kFuseManifest = "manifest.csv";

/// Fuses every stem present in both directories and writes <stem>.png plus a
/// manifest. Unmatched stems and per-pair failures are reported in the
/// manifest; the remaining pairs are still processed.
BatchReport fuse_batch(LureModel& model, const std::filesystem::path& ir_dir,
                       const std::filesystem::path& vi_dir, std::string_view ir_prompt,
                       std::string_view vi_prompt, const std::filesystem::path& out_dir);

}  // namespace lure::inference
