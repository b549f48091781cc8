#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <torch/torch.h>

namespace lure::conditioning {

struct PromptEntry {
  int task_id = 0;
  std::string prompt;  // canonical form
};

/// Ordered prompt list; task 0 is the pseudo-degradation task. The position
/// of a prompt in the catalog is its row in the embedding table.
class PromptCatalog {
 public:
  PromptCatalog() = default;
  explicit PromptCatalog(std::vector<PromptEntry> entries);

  static PromptCatalog builtin();
  /// `task_id<TAB>prompt` per line; '#' starts a comment line.
  static PromptCatalog load(const std::filesystem::path& path);
  static PromptCatalog parse(std::string_view text);
  std::string serialize() const;
  void save(const std::filesystem::path& path) const;

  /// Lower-case, trimmed, internal whitespace collapsed, trailing '.' dropped.
  static std::string canonicalize(std::string_view prompt);

  int num_tasks() const { return num_tasks_; }        // T, excluding the pseudo task
  int num_classes() const { return num_tasks_ + 1; }  // T + 1
  size_t size() const { return entries_.size(); }
  const std::vector<PromptEntry>& entries() const { return entries_; }
  const PromptEntry& entry(size_t index) const { return entries_.at(index); }

  /// Exact (canonical) match first, then task aliases such as "ll" or "clean".
  std::optional<size_t> find(std::string_view prompt) const;
  /// As find(), but throws InputError listing the known prompts.
  size_t resolve(std::string_view prompt) const;
  std::vector<size_t> prompts_for(int task_id) const;

 private:
  void index();

  std::vector<PromptEntry> entries_;
  std::map<std::string, size_t> by_prompt_;
  std::map<std::string, size_t> aliases_;
  int num_tasks_ = 0;
};

struct DescriptionVector {
  torch::Tensor values;  // [d_txt]
  int source_task = 0;
};

/// Stand-in for a pretrained sentence encoder: a learned row per catalog
/// prompt, projected by Linear + LayerNorm to d_txt.
class TextEncoderImpl : public torch::nn::Module {
 public:
  TextEncoderImpl(int64_t num_prompts, int64_t text_dim);

  /// indices: int64 [B] -> [B, d_txt]
  torch::Tensor forward(const torch::Tensor& indices);

  int64_t text_dim() const { return text_dim_; }

  torch::nn::Embedding table{nullptr};
  torch::nn::Linear project{nullptr};
  torch::nn::LayerNorm norm{nullptr};

 private:
  int64_t text_dim_;
};
TORCH_MODULE(TextEncoder);

/// Task classifier over description vectors; the output layer starts at zero
/// so a fresh head predicts the uniform distribution.
class TaskHeadImpl : public torch::nn::Module {
 public:
  TaskHeadImpl(int64_t text_dim, int64_t num_classes);
  torch::Tensor forward(const torch::Tensor& description);  // logits [B, T+1]

  torch::nn::Linear hidden{nullptr};
  torch::nn::Linear out{nullptr};
};
TORCH_MODULE(TaskHead);

/// Softmax of the head's logits; errors on a dimension mismatch.
torch::Tensor classify_description(TaskHead& head, const DescriptionVector& c);

/// Looks up `prompt` in the catalog and encodes it.
DescriptionVector encode_text(TextEncoder& encoder, const PromptCatalog& catalog,
                              std::string_view prompt);

}  // namespace lure::conditioning
