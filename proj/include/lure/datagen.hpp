#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lure/image.hpp"

namespace lure::datagen {

// Task ids are fixed: 0 is the pseudo-degradation (identity) task.
enum class DegradationKind { kLL, kHZ, kOE, kLC, kSR4, kSR8, kPD };

inline constexpr int kPseudoTaskId = 0;

int task_id(DegradationKind kind);
DegradationKind kind_from_task(int task_id);
std::string_view kind_name(DegradationKind kind);  // "LL", "HZ", ...
DegradationKind parse_kind(std::string_view name);
std::vector<DegradationKind> parse_kinds(std::string_view comma_separated);

/// LL/HZ/OE degrade visible images, LC/SR infrared ones. PD has no modality.
std::optional<Modality> modality_of(DegradationKind kind);

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

/// A degradation family with the ranges its parameters are drawn from.
struct DegradationSpec {
  DegradationKind kind = DegradationKind::kLL;
  Range gamma{1.8, 3.0};        // LL: v^gamma, OE: v^(1/gamma)
  Range brightness{0.3, 0.6};   // LL multiplier
  Range airlight{0.7, 0.95};    // HZ
  Range transmission{0.3, 0.8}; // HZ, spatially varying inside this range
  Range contrast{0.3, 0.6};     // LC factor around the channel mean

  static DegradationSpec defaults(DegradationKind kind);
  int sr_scale() const;  // 4 or 8 for SR kinds, else 0
};

/// Degrades `clean`; the output has the same shape and lies in [0, 1].
/// Parameters are drawn from the spec's ranges using `seed` only.
/// Throws ConfigError for PD.
ImageArray apply_degradation(const ImageArray& clean, const DegradationSpec& spec, uint64_t seed);

struct RestorationSample {
  ImageArray degraded;
  ImageArray clean;
  Modality modality = Modality::kVisible;
  int task_id = kPseudoTaskId;
  std::string stem;
};

/// (y, y, m, 0).
RestorationSample make_pseudo_sample(const ImageArray& clean, Modality modality,
                                     std::string stem = {});

struct CleanSource {
  Modality modality;
  std::filesystem::path directory;
};

/// One sample per (clean image, applicable spec) plus one pseudo sample per
/// clean image. Output order is deterministic: sources in the given order,
/// images sorted by filename, specs in the given order, pseudo last.
std::vector<RestorationSample> build_stage1_dataset(const std::vector<CleanSource>& sources,
                                                    const std::vector<DegradationSpec>& specs,
                                                    uint64_t seed);

/// Same as build_stage1_dataset but from in-memory clean images.
std::vector<RestorationSample> build_stage1_samples(
    const std::vector<std::pair<std::string, ImageArray>>& cleans, Modality modality,
    const std::vector<DegradationSpec>& specs, uint64_t seed, size_t variants = 1);

struct FusionPair {
  ImageArray infrared;  // 1 channel, padded
  ImageArray visible;   // 3 channels, padded
  std::string stem;
  int64_t original_height = 0;
  int64_t original_width = 0;
  int64_t pad_bottom = 0;
  int64_t pad_right = 0;
};

/// Reads `<root>/ir/pairs/*.png` and `<root>/vi/pairs/*.png`, matched by stem,
/// and reflection-pads each pair to a multiple of `multiple`.
std::vector<FusionPair> build_stage2_dataset(const std::filesystem::path& root,
                                             int64_t multiple = 8);

/// Pairs two directories by filename stem. Throws InputError naming the first
/// unmatched stem unless `unmatched` is given, in which case they are collected.
std::vector<std::pair<std::filesystem::path, std::filesystem::path>> match_stems(
    const std::filesystem::path& ir_dir, const std::filesystem::path& vi_dir,
    std::vector<std::string>* unmatched = nullptr);

// Dataset serialisation: PNG files plus a tab-separated manifest
// (stem, task_id, modality, degraded path, clean path; paths relative to root).
inline constexpr std::string_view kManifestName = "manifest.tsv";
void save_dataset(const std::filesystem::path& root, const std::vector<RestorationSample>& samples);
std::vector<RestorationSample> load_dataset(const std::filesystem::path& root);

/// Random crop of `size` (or the whole image when smaller) plus horizontal flip
/// with probability `flip_p`, applied identically to every tensor.
struct Augment {
  int64_t top = 0;
  int64_t left = 0;
  int64_t size_h = 0;
  int64_t size_w = 0;
  bool flip = false;
  torch::Tensor apply(const torch::Tensor& chw) const;
};
Augment draw_augment(int64_t height, int64_t width, int64_t crop, double flip_p, uint64_t seed);

// Procedural toy scenes standing in for the real restoration/fusion corpora.
struct SceneOptions {
  int64_t height = 64;
  int64_t width = 64;
};
/// One aligned scene rendered in both modalities.
std::pair<ImageArray, ImageArray> render_scene(const SceneOptions& options, uint64_t seed);

struct SynthOptions {
  std::filesystem::path root;
  size_t clean_per_modality = 8;
  size_t fusion_pairs = 16;
  SceneOptions scene;
  uint64_t seed = 7;
  std::vector<DegradationKind> kinds;  // empty: every real kind
};
/// Writes <root>/{vi,ir}/clean, <root>/{vi,ir}/pairs and a materialised
/// stage-1 set under <root>/stage1 with its manifest.
void synthesize_toy_corpus(const SynthOptions& options);

std::vector<DegradationSpec> default_specs(const std::vector<DegradationKind>& kinds);
std::vector<DegradationKind> all_real_kinds();

}  // namespace lure::datagen
