#pragma once

#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

#include <torch/torch.h>

#include "lure/datagen.hpp"
#include "lure/model.hpp"

namespace testutil {

namespace fs = std::filesystem;

/// Two-level model small enough for unit tests.
inline lure::ModelConfig tiny_config() {
  lure::ModelConfig c;
  c.encoder.widths = {8, 16};
  c.encoder.reduced = {4, 8};
  c.encoder.k_tb = {1, 1};
  c.encoder.k_bt = {1, 1};
  c.encoder.heads = 2;
  c.encoder.text_dim = 8;
  c.decoder_blocks = {1, 1};
  c.fusion_blocks = {1, 1};
  c.fusion_heads = 2;
  return c;
}

inline lure::LureModel tiny_model(uint64_t seed = 3) {
  return lure::make_model(tiny_config(), lure::conditioning::PromptCatalog::builtin(), seed);
}

/// Fresh empty directory under the system temp dir.
inline fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("lure_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

/// Small procedural corpus: 2 clean images per modality, 3 fusion pairs, 16x16.
inline fs::path tiny_corpus(const std::string& name, size_t clean = 2, size_t pairs = 3, int64_t size = 16) {
  auto root = scratch(name);
  lure::datagen::SynthOptions o;
  o.root = root;
  o.clean_per_modality = clean;
  o.fusion_pairs = pairs;
  o.scene.height = size;
  o.scene.width = size;
  lure::datagen::synthesize_toy_corpus(o);
  return root;
}

inline std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Random image tensor [C, H, W] in [0, 1].
inline torch::Tensor random_image(int64_t c, int64_t h, int64_t w, uint64_t seed) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  return torch::rand({c, h, w}, gen);
}

}  // namespace testutil
