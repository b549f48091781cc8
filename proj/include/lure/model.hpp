#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <torch/torch.h>

#include "lure/checkpoint.hpp"
#include "lure/conditioning.hpp"
#include "lure/decoder.hpp"
#include "lure/encoder.hpp"
#include "lure/fusion.hpp"

namespace lure {

struct ModelConfig {
  EncoderConfig encoder;
  std::vector<int64_t> decoder_blocks{1, 1, 1, 1};
  std::vector<int64_t> fusion_blocks{1, 1, 2, 2};
  int64_t fusion_heads = 4;
  PriorRule rule = PriorRule::kAddition;

  DecoderConfig decoder() const;
  FusionConfig fusion() const;
  void validate() const;

  /// Flat key=value echo stored in checkpoints and run logs.
  std::map<std::string, std::string> to_meta() const;
  static ModelConfig from_meta(const std::map<std::string, std::string>& meta);
};

// Parameter groups, by name prefix.
inline const std::vector<std::string> kTextGroup{"text.", "head."};
inline const std::vector<std::string> kEncoderGroup{"encoder."};
inline const std::vector<std::string> kDecoderGroup{"decoder."};
inline const std::vector<std::string> kFusionGroup{"fusion."};

/// Every learnable part of the system: text encoder + task head, conditional
/// image encoder, decoder and fusion module.
class LureModelImpl : public torch::nn::Module {
 public:
  LureModelImpl(ModelConfig config, conditioning::PromptCatalog catalog);

  const ModelConfig& config() const { return config_; }
  const conditioning::PromptCatalog& catalog() const { return catalog_; }

  /// Description vectors [B, d_txt] for catalog rows.
  torch::Tensor describe(const std::vector<int64_t>& prompt_indices);
  /// Description vector [1, d_txt] for a prompt or alias.
  torch::Tensor describe(std::string_view prompt);

  /// Model parameters whose names start with one of `prefixes`.
  std::vector<torch::Tensor> parameters_in(const std::vector<std::string>& prefixes);

  conditioning::TextEncoder text{nullptr};
  conditioning::TaskHead head{nullptr};
  ImageEncoder encoder{nullptr};
  Decoder decoder{nullptr};
  FusionModule fusion{nullptr};

 private:
  ModelConfig config_;
  conditioning::PromptCatalog catalog_;
};
TORCH_MODULE(LureModel);

/// Builds a model with deterministic initial weights for `seed`.
LureModel make_model(const ModelConfig& config, const conditioning::PromptCatalog& catalog,
                     uint64_t seed);

/// Model parameters + config + catalog; `extra_meta` is merged in.
Checkpoint model_checkpoint(LureModel& model, const std::map<std::string, std::string>& extra_meta = {});
void save_model(const std::filesystem::path& path, LureModel& model,
                const std::map<std::string, std::string>& extra_meta = {});

/// Rebuilds the model from a checkpoint; throws CheckpointError on missing or
/// mis-shaped arrays.
LureModel model_from_checkpoint(const Checkpoint& ckpt);
LureModel load_model(const std::filesystem::path& path);

std::string join_ints(const std::vector<int64_t>& v);
std::vector<int64_t> parse_ints(std::string_view csv);

}  // namespace lure
