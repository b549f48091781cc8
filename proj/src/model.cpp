#include "lure/model.hpp"

#include <sstream>

#include "lure/error.hpp"

namespace lure {

std::string join_ints(const std::vector<int64_t>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

std::vector<int64_t> parse_ints(std::string_view csv) {
  std::vector<int64_t> out;
  std::stringstream ss{std::string(csv)};
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      out.push_back(std::stoll(item));
    } catch (const std::exception&) {
      throw ConfigError("expected a comma-separated integer list, got '" + std::string(csv) + "'");
    }
  }
  return out;
}

DecoderConfig ModelConfig::decoder() const {
  DecoderConfig d;
  d.widths = encoder.reduced;
  d.blocks = decoder_blocks;
  return d;
}

FusionConfig ModelConfig::fusion() const {
  FusionConfig f;
  f.widths = encoder.reduced;
  f.blocks = fusion_blocks;
  f.heads = fusion_heads;
  f.rule = rule;
  return f;
}

void ModelConfig::validate() const {
  encoder.validate();
  decoder().validate();
  fusion().validate();
}

std::map<std::string, std::string> ModelConfig::to_meta() const {
  return {
      {"encoder.widths", join_ints(encoder.widths)},
      {"encoder.reduced", join_ints(encoder.reduced)},
      {"encoder.k_tb", join_ints(encoder.k_tb)},
      {"encoder.k_bt", join_ints(encoder.k_bt)},
      {"encoder.heads", std::to_string(encoder.heads)},
      {"encoder.text_dim", std::to_string(encoder.text_dim)},
      {"decoder.blocks", join_ints(decoder_blocks)},
      {"fusion.blocks", join_ints(fusion_blocks)},
      {"fusion.heads", std::to_string(fusion_heads)},
      {"fusion.prior_rule", std::string(prior_rule_name(rule))},
  };
}

ModelConfig ModelConfig::from_meta(const std::map<std::string, std::string>& meta) {
  auto get = [&](const std::string& key) -> const std::string& {
    auto it = meta.find(key);
    if (it == meta.end()) throw CheckpointError("checkpoint: missing metadata key '" + key + "'");
    return it->second;
  };
  ModelConfig c;
  try {
    c.encoder.widths = parse_ints(get("encoder.widths"));
    c.encoder.reduced = parse_ints(get("encoder.reduced"));
    c.encoder.k_tb = parse_ints(get("encoder.k_tb"));
    c.encoder.k_bt = parse_ints(get("encoder.k_bt"));
    c.encoder.heads = std::stoll(get("encoder.heads"));
    c.encoder.text_dim = std::stoll(get("encoder.text_dim"));
    c.decoder_blocks = parse_ints(get("decoder.blocks"));
    c.fusion_blocks = parse_ints(get("fusion.blocks"));
    c.fusion_heads = std::stoll(get("fusion.heads"));
    c.rule = parse_prior_rule(get("fusion.prior_rule"));
    c.validate();
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint: invalid model config: ") + e.what());
  }
  return c;
}

LureModelImpl::LureModelImpl(ModelConfig config, conditioning::PromptCatalog catalog)
    : config_(std::move(config)), catalog_(std::move(catalog)) {
  config_.validate();
  const auto d = config_.encoder.text_dim;
  text = register_module("text", conditioning::TextEncoder(static_cast<int64_t>(catalog_.size()), d));
  head = register_module("head", conditioning::TaskHead(d, catalog_.num_classes()));
  encoder = register_module("encoder", ImageEncoder(config_.encoder));
  decoder = register_module("decoder", Decoder(config_.decoder()));
  fusion = register_module("fusion", FusionModule(config_.fusion()));
}

torch::Tensor LureModelImpl::describe(const std::vector<int64_t>& prompt_indices) {
  auto ids = torch::tensor(prompt_indices, torch::kInt64);
  return text->forward(ids);
}

torch::Tensor LureModelImpl::describe(std::string_view prompt) {
  return describe(std::vector<int64_t>{static_cast<int64_t>(catalog_.resolve(prompt))});
}

std::vector<torch::Tensor> LureModelImpl::parameters_in(const std::vector<std::string>& prefixes) {
  std::vector<torch::Tensor> out;
  for (const auto& item : named_parameters()) {
    for (const auto& p : prefixes) {
      if (item.key().rfind(p, 0) == 0) {
        out.push_back(item.value());
        break;
      }
    }
  }
  return out;
}

LureModel make_model(const ModelConfig& config, const conditioning::PromptCatalog& catalog,
                     uint64_t seed) {
  torch::manual_seed(seed);
  return LureModel(config, catalog);
}

Checkpoint model_checkpoint(LureModel& model, const std::map<std::string, std::string>& extra_meta) {
  Checkpoint ck;
  ck.meta = model->config().to_meta();
  ck.meta["catalog"] = model->catalog().serialize();
  ck.meta["format"] = "lure-model";
  for (const auto& [k, v] : extra_meta) ck.meta[k] = v;
  for (const auto& item : model->named_parameters()) ck.add("param/" + item.key(), item.value());
  return ck;
}

void save_model(const std::filesystem::path& path, LureModel& model,
                const std::map<std::string, std::string>& extra_meta) {
  model_checkpoint(model, extra_meta).save(path);
}

LureModel model_from_checkpoint(const Checkpoint& ckpt) {
  auto it = ckpt.meta.find("format");
  if (it == ckpt.meta.end() || it->second != "lure-model") {
    throw CheckpointError("checkpoint does not contain a model");
  }
  auto config = ModelConfig::from_meta(ckpt.meta);
  conditioning::PromptCatalog catalog;
  try {
    catalog = conditioning::PromptCatalog::parse(ckpt.meta_at("catalog"));
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint: invalid prompt catalog: ") + e.what());
  }
  LureModel model(config, catalog);
  torch::NoGradGuard guard;
  for (auto& item : model->named_parameters()) {
    const auto* t = ckpt.find("param/" + item.key());
    if (!t) throw CheckpointError("checkpoint: missing parameter '" + item.key() + "'");
    if (t->sizes() != item.value().sizes()) {
      throw CheckpointError("checkpoint: shape mismatch for parameter '" + item.key() + "'");
    }
    item.value().copy_(*t);
  }
  return model;
}

LureModel load_model(const std::filesystem::path& path) {
  return model_from_checkpoint(Checkpoint::load(path));
}

}  // namespace lure
