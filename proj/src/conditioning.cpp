#include "lure/conditioning.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include "lure/datagen.hpp"
#include "lure/error.hpp"

namespace lure::conditioning {

PromptCatalog::PromptCatalog(std::vector<PromptEntry> entries) : entries_(std::move(entries)) {
  index();
}

void PromptCatalog::index() {
  by_prompt_.clear();
  aliases_.clear();
  std::set<int> ids;
  for (size_t i = 0; i < entries_.size(); ++i) {
    auto& e = entries_[i];
    e.prompt = canonicalize(e.prompt);
    if (e.prompt.empty()) throw ConfigError("prompt catalog: empty prompt");
    if (e.task_id < 0) throw ConfigError("prompt catalog: negative task id");
    if (!by_prompt_.emplace(e.prompt, i).second) {
      throw ConfigError("prompt catalog: duplicate prompt '" + e.prompt + "'");
    }
    ids.insert(e.task_id);
  }
  if (ids.empty() || *ids.begin() != 0) {
    throw ConfigError("prompt catalog: task 0 (pseudo-degradation) needs at least one prompt");
  }
  if (*ids.rbegin() != static_cast<int>(ids.size()) - 1) {
    throw ConfigError("prompt catalog: task ids must be contiguous from 0");
  }
  num_tasks_ = static_cast<int>(ids.size()) - 1;

  for (int id : ids) {
    const size_t first = prompts_for(id).front();
    if (id <= 6) {
      auto name = std::string(datagen::kind_name(datagen::kind_from_task(id)));
      std::transform(name.begin(), name.end(), name.begin(), ::tolower);
      aliases_.emplace(name, first);
    }
    aliases_.emplace("task " + std::to_string(id), first);
  }
  aliases_.emplace("clean", prompts_for(0).front());
  aliases_.emplace("none", prompts_for(0).front());
}

PromptCatalog PromptCatalog::builtin() {
  return PromptCatalog({
      {0, "the image is clean, reconstruct it as it is"},
      {0, "no degradation, keep the image unchanged"},
      {0, "identity reconstruction of a high quality image"},
      {1, "enhance this low-light image"},
      {1, "the photo is too dark, brighten it"},
      {1, "recover details in the underexposed night scene"},
      {2, "remove the haze from this image"},
      {2, "dehaze the foggy photo"},
      {2, "clear the mist and restore visibility"},
      {3, "correct the overexposed image"},
      {3, "the photo is too bright, reduce the exposure"},
      {3, "recover the washed-out highlights"},
      {4, "increase the contrast of this infrared image"},
      {4, "the thermal image has low contrast"},
      {4, "enhance the faint infrared contrast"},
      {5, "super-resolve the infrared image by a factor of four"},
      {5, "the infrared image is blurry, upscale it four times"},
      {5, "restore a 4x low-resolution thermal image"},
      {6, "super-resolve the infrared image by a factor of eight"},
      {6, "the infrared image is very blurry, upscale it eight times"},
      {6, "restore an 8x low-resolution thermal image"},
  });
}

std::string PromptCatalog::canonicalize(std::string_view prompt) {
  std::string out;
  bool space = false;
  for (char ch : prompt) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      space = !out.empty();
      continue;
    }
    if (space) out.push_back(' ');
    space = false;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  }
  while (!out.empty() && out.back() == '.') out.pop_back();
  return out;
}

PromptCatalog PromptCatalog::parse(std::string_view text) {
  std::vector<PromptEntry> entries;
  std::stringstream ss{std::string(text)};
  std::string line;
  size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw ConfigError("prompt catalog line " + std::to_string(lineno) + ": expected task_id<TAB>prompt");
    }
    PromptEntry e;
    try {
      e.task_id = std::stoi(line.substr(0, tab));
    } catch (const std::exception&) {
      throw ConfigError("prompt catalog line " + std::to_string(lineno) + ": bad task id");
    }
    e.prompt = line.substr(tab + 1);
    entries.push_back(std::move(e));
  }
  return PromptCatalog(std::move(entries));
}

PromptCatalog PromptCatalog::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open prompt catalog " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string PromptCatalog::serialize() const {
  std::string out;
  for (const auto& e : entries_) out += std::to_string(e.task_id) + "\t" + e.prompt + "\n";
  return out;
}

void PromptCatalog::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write prompt catalog " + path.string());
  out << serialize();
}

std::optional<size_t> PromptCatalog::find(std::string_view prompt) const {
  const auto key = canonicalize(prompt);
  if (auto it = by_prompt_.find(key); it != by_prompt_.end()) return it->second;
  if (auto it = aliases_.find(key); it != aliases_.end()) return it->second;
  return std::nullopt;
}

size_t PromptCatalog::resolve(std::string_view prompt) const {
  if (auto idx = find(prompt)) return *idx;
  std::string msg = "unknown prompt '" + std::string(prompt) + "'; known prompts:";
  for (const auto& e : entries_) msg += "\n  [" + std::to_string(e.task_id) + "] " + e.prompt;
  msg += "\naliases:";
  for (const auto& [alias, idx] : aliases_) msg += " '" + alias + "'";
  throw InputError(msg);
}

std::vector<size_t> PromptCatalog::prompts_for(int task_id) const {
  std::vector<size_t> out;
  for (size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].task_id == task_id) out.push_back(i);
  }
  return out;
}

TextEncoderImpl::TextEncoderImpl(int64_t num_prompts, int64_t text_dim) : text_dim_(text_dim) {
  table = register_module("table", torch::nn::Embedding(num_prompts, text_dim));
  project = register_module("project", torch::nn::Linear(text_dim, text_dim));
  norm = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({text_dim})));
}

torch::Tensor TextEncoderImpl::forward(const torch::Tensor& indices) {
  return norm(project(table(indices)));
}

TaskHeadImpl::TaskHeadImpl(int64_t text_dim, int64_t num_classes) {
  hidden = register_module("hidden", torch::nn::Linear(text_dim, text_dim));
  out = register_module("out", torch::nn::Linear(text_dim, num_classes));
  torch::NoGradGuard guard;
  out->weight.zero_();
  out->bias.zero_();
}

torch::Tensor TaskHeadImpl::forward(const torch::Tensor& description) {
  return out(torch::gelu(hidden(description)));
}

torch::Tensor classify_description(TaskHead& head, const DescriptionVector& c) {
  const auto expected = head->hidden->options.in_features();
  if (!c.values.defined() || c.values.size(-1) != expected) {
    throw ShapeError("classify_description: expected a " + std::to_string(expected) +
                     "-dimensional description vector");
  }
  auto logits = head->forward(c.values.dim() == 1 ? c.values.unsqueeze(0) : c.values);
  auto probs = torch::softmax(logits, -1);
  return c.values.dim() == 1 ? probs.squeeze(0) : probs;
}

DescriptionVector encode_text(TextEncoder& encoder, const PromptCatalog& catalog,
                              std::string_view prompt) {
  const auto idx = catalog.resolve(prompt);
  auto ids = torch::tensor({static_cast<int64_t>(idx)}, torch::kInt64);
  return DescriptionVector{encoder->forward(ids).squeeze(0), catalog.entry(idx).task_id};
}

}  // namespace lure::conditioning
