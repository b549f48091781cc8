#include "lure/trainer.hpp"

#include <cmath>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <sstream>

#include "lure/error.hpp"
#include "lure/rng.hpp"
#include "lure/version.hpp"

namespace fs = std::filesystem;

namespace lure::trainer {

using datagen::Augment;
using datagen::FusionPair;
using datagen::RestorationSample;

namespace {

std::string fmt_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::string kinds_string(const std::vector<datagen::DegradationKind>& kinds) {
  std::string out;
  for (auto k : kinds) {
    if (!out.empty()) out += ",";
    out += datagen::kind_name(k);
  }
  return out.empty() ? "all" : out;
}

bool has_prefix(const std::string& name, const std::vector<std::string>& prefixes) {
  for (const auto& p : prefixes) {
    if (name.rfind(p, 0) == 0) return true;
  }
  return false;
}

std::string snapshot_name(int stage, int64_t step) {
  std::ostringstream os;
  os << "stage" << stage << "_step" << std::setw(6) << std::setfill('0') << step << ".ckpt";
  return os.str();
}

// Metadata that must not depend on where a run writes its files.
std::map<std::string, std::string> checkpoint_meta(const RunConfig& config, int64_t step) {
  std::map<std::string, std::string> meta;
  for (const auto& [k, v] : config.to_meta()) {
    if (k.find("path") == std::string::npos) meta["run." + k] = v;
  }
  meta["run.step"] = std::to_string(step);
  meta["version"] = kVersion;
  return meta;
}

void write_run_header(const fs::path& out_dir, const RunConfig& config) {
  std::ofstream log(out_dir / "run.log");
  log << "# lure " << kVersion << " config-schema " << kConfigSchema << "\n";
  log << "# stage " << config.stage << " seed " << config.seed << "\n";
  for (const auto& [k, v] : config.to_meta()) log << k << " = " << v << "\n";
  for (const auto& [k, v] : config.model.to_meta()) log << "model." << k << " = " << v << "\n";
}

void log_step(TrainState& state, const StepLog& entry) {
  for (const auto& [term, value] : entry.terms) {
    state.metrics << entry.step << '\t' << term << '\t' << fmt_double(value) << '\n';
  }
  state.metrics << entry.step << "\tlr\t" << fmt_double(entry.lr) << '\n';
}

void set_lr(torch::optim::Adam& opt, double lr) {
  for (auto& group : opt.param_groups()) {
    static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
  }
}

void make_optimizer(TrainState& state, const RunConfig& config) {
  std::vector<torch::Tensor> params;
  state.trainable_names.clear();
  for (const auto& item : state.model->named_parameters()) {
    if (item.value().requires_grad()) {
      params.push_back(item.value());
      state.trainable_names.push_back(item.key());
    }
  }
  torch::optim::AdamOptions opts(config.lr);
  opts.betas({config.adam_beta1, config.adam_beta2});
  state.optimizer = std::make_unique<torch::optim::Adam>(params, opts);
}

void open_metrics(TrainState& state, const RunConfig& config) {
  const bool append = !config.resume.empty();
  state.metrics.open(config.out_dir / "metrics.tsv", append ? std::ios::app : std::ios::trunc);
  if (!state.metrics) throw InputError("cannot write " + (config.out_dir / "metrics.tsv").string());
  if (!append) state.metrics << "step\tterm\tvalue\n";
}

[[noreturn]] void abort_on_nan(const RunConfig& config, int64_t step,
                               const std::map<std::string, torch::Tensor>& batch,
                               const std::map<std::string, double>& terms) {
  Checkpoint dump;
  dump.meta["format"] = "lure-nan-dump";
  dump.meta["step"] = std::to_string(step);
  std::ostringstream which;
  for (const auto& [k, v] : terms) {
    dump.meta["term." + k] = fmt_double(v);
    if (!std::isfinite(v)) which << " " << k;
  }
  for (const auto& [k, v] : batch) dump.add(k, v.detach());
  const auto path = config.out_dir / "nan_dump.ckpt";
  dump.save(path);
  throw TrainingError("non-finite loss at step " + std::to_string(step) + " (terms:" + which.str() +
                      "); last batch written to " + path.string());
}

torch::Tensor stack_augmented(const std::vector<torch::Tensor>& chw, const std::vector<Augment>& augs) {
  std::vector<torch::Tensor> out;
  out.reserve(chw.size());
  for (size_t i = 0; i < chw.size(); ++i) out.push_back(augs[i].apply(chw[i]));
  return torch::stack(out);
}

int64_t effective_crop(int64_t crop, int64_t min_h, int64_t min_w, int64_t multiple) {
  const int64_t c = std::min({crop, min_h, min_w});
  const int64_t rounded = c / multiple * multiple;
  if (rounded <= 0) {
    throw InputError("training images are smaller than the encoder's spatial multiple (" +
                     std::to_string(multiple) + ")");
  }
  return rounded;
}

}  // namespace

RunConfig RunConfig::defaults(int stage) {
  RunConfig c;
  c.stage = stage;
  if (stage == 2) {
    c.steps = 1000;
    c.lr = 1e-4;
  }
  return c;
}

void RunConfig::validate() const {
  if (stage != 1 && stage != 2) throw ConfigError("stage must be 1 or 2");
  if (steps < 0) throw ConfigError("steps must be >= 0");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (crop < 1) throw ConfigError("crop must be >= 1");
  if (flip_p < 0.0 || flip_p > 1.0) throw ConfigError("flip probability must lie in [0, 1]");
  if (!(lr > 0.0)) throw ConfigError("learning rate must be > 0");
  if (lr_final_ratio < 0.0 || lr_final_ratio > 1.0) throw ConfigError("final lr ratio must lie in [0, 1]");
  if (variants < 1) throw ConfigError("variants must be >= 1");
  if (checkpoint_every < 0) throw ConfigError("checkpoint interval must be >= 0");
  if (stage == 2 && init_checkpoint.empty()) {
    throw ConfigError("stage 2 requires a stage-1 checkpoint");
  }
  for (auto k : kinds) {
    if (k == datagen::DegradationKind::kPD) throw ConfigError("PD is implicit and cannot be listed as a kind");
  }
  weights.validate();
  model.validate();
}

std::map<std::string, std::string> RunConfig::to_meta() const {
  return {
      {"stage", std::to_string(stage)},
      {"seed", std::to_string(seed)},
      {"steps", std::to_string(steps)},
      {"batch_size", std::to_string(batch_size)},
      {"crop", std::to_string(crop)},
      {"flip_p", fmt_double(flip_p)},
      {"lr", fmt_double(lr)},
      {"lr_final_ratio", fmt_double(lr_final_ratio)},
      {"adam_betas", fmt_double(adam_beta1) + "," + fmt_double(adam_beta2)},
      {"w_unified", fmt_double(weights.unified)},
      {"w_recon", fmt_double(weights.recon)},
      {"w_text", fmt_double(weights.text)},
      {"w_grad", fmt_double(weights.grad)},
      {"w_perceptual", fmt_double(weights.perceptual)},
      {"kinds", kinds_string(kinds)},
      {"variants", std::to_string(variants)},
      {"checkpoint_every", std::to_string(checkpoint_every)},
      {"train_decoder", train_decoder ? "1" : "0"},
      {"data_path", data_root.string()},
      {"out_path", out_dir.string()},
      {"init_path", init_checkpoint.string()},
      {"resume_path", resume.string()},
      {"catalog_path", catalog.string()},
  };
}

double cosine_lr(double base, double final_ratio, int64_t step, int64_t total) {
  if (total <= 0) return base;
  const double t = std::clamp(static_cast<double>(step) / static_cast<double>(total), 0.0, 1.0);
  const double floor = base * final_ratio;
  return floor + 0.5 * (base - floor) * (1.0 + std::cos(std::numbers::pi * t));
}

torch::Tensor match_channels(const torch::Tensor& decoded, int64_t target_channels) {
  if (decoded.size(1) == target_channels) return decoded;
  if (target_channels == 1) return decoded.mean(1, true);
  throw ShapeError("cannot match decoder output with " + std::to_string(decoded.size(1)) +
                   " channels to a " + std::to_string(target_channels) + "-channel target");
}

std::vector<std::string> frozen_groups(bool train_decoder) {
  std::vector<std::string> out = kTextGroup;
  out.insert(out.end(), kEncoderGroup.begin(), kEncoderGroup.end());
  if (!train_decoder) out.insert(out.end(), kDecoderGroup.begin(), kDecoderGroup.end());
  return out;
}

Checkpoint state_checkpoint(TrainState& state, const RunConfig& config) {
  auto ck = model_checkpoint(state.model, checkpoint_meta(config, state.step));
  if (!state.optimizer) return ck;
  auto& opt_state = state.optimizer->state();
  const auto params = state.model->named_parameters();
  // Step counts are per parameter: a group only seen by one modality skips
  // the steps whose batch had no sample of it.
  for (const auto& name : state.trainable_names) {
    const auto& p = params[name];
    auto it = opt_state.find(p.unsafeGetTensorImpl());
    if (it == opt_state.end()) continue;
    const auto& s = static_cast<const torch::optim::AdamParamState&>(*it->second);
    ck.add("adam/exp_avg/" + name, s.exp_avg());
    ck.add("adam/exp_avg_sq/" + name, s.exp_avg_sq());
    ck.add("adam/step/" + name, torch::tensor({s.step()}, torch::kInt64));
  }
  return ck;
}

void restore_state(TrainState& state, const Checkpoint& ckpt) {
  torch::NoGradGuard guard;
  auto params = state.model->named_parameters();
  for (auto& item : params) {
    const auto* t = ckpt.find("param/" + item.key());
    if (!t) throw CheckpointError("checkpoint: missing parameter '" + item.key() + "'");
    if (t->sizes() != item.value().sizes()) {
      throw CheckpointError("checkpoint: shape mismatch for parameter '" + item.key() + "'");
    }
    item.value().copy_(*t);
  }
  try {
    state.step = std::stoll(ckpt.meta_at("run.step"));
  } catch (const std::logic_error&) {
    throw CheckpointError("checkpoint: malformed step counter");
  }
  if (!state.optimizer) return;
  auto& opt_state = state.optimizer->state();
  for (const auto& name : state.trainable_names) {
    const auto* m = ckpt.find("adam/exp_avg/" + name);
    const auto* v = ckpt.find("adam/exp_avg_sq/" + name);
    const auto* k = ckpt.find("adam/step/" + name);
    if (!m || !v || !k) continue;
    if (m->sizes() != params[name].sizes() || v->sizes() != params[name].sizes() || k->numel() != 1) {
      throw CheckpointError("checkpoint: malformed optimizer state for '" + name + "'");
    }
    auto s = std::make_unique<torch::optim::AdamParamState>();
    s->step(k->item<int64_t>());
    s->exp_avg(m->clone());
    s->exp_avg_sq(v->clone());
    opt_state[params[name].unsafeGetTensorImpl()] = std::move(s);
  }
}

std::vector<RestorationSample> stage1_samples(const RunConfig& config) {
  const auto kinds = config.kinds.empty() ? datagen::all_real_kinds() : config.kinds;
  const auto specs = datagen::default_specs(kinds);
  std::vector<RestorationSample> out;
  for (Modality m : {Modality::kVisible, Modality::kInfrared}) {
    bool wanted = false;
    for (auto k : kinds) wanted = wanted || datagen::modality_of(k) == m;
    if (!wanted) continue;
    const auto dir = config.data_root / modality_name(m) / "clean";
    const auto files = list_pngs(dir);
    if (files.empty()) throw InputError("no clean PNG images in " + dir.string());
    std::vector<std::pair<std::string, ImageArray>> cleans;
    for (const auto& f : files) cleans.emplace_back(f.stem().string(), load_png(f, m));
    auto part = datagen::build_stage1_samples(cleans, m, specs, config.seed, config.variants);
    out.insert(out.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  return out;
}

Stage1Eval evaluate_stage1(LureModel& model, const std::vector<RestorationSample>& samples) {
  torch::NoGradGuard guard;
  const auto& catalog = model->catalog();
  const auto pd = static_cast<int64_t>(catalog.prompts_for(datagen::kPseudoTaskId).front());
  Stage1Eval ev;
  double recon_sum = 0.0, task_sum = 0.0, cos_sum = 0.0;
  size_t n_recon = 0, n_real = 0;
  for (const auto& s : samples) {
    const auto y = s.clean.tensor().unsqueeze(0);
    const auto z_pd = model->encoder->forward(y, model->describe({pd}), s.modality);
    if (s.task_id == datagen::kPseudoTaskId) {
      const auto out = match_channels(model->decoder->forward(z_pd), y.size(1));
      recon_sum += losses::loss_recon(out, y).item<double>();
      ++n_recon;
      continue;
    }
    const auto prompt = static_cast<int64_t>(catalog.prompts_for(s.task_id).front());
    const auto x = s.degraded.tensor().unsqueeze(0);
    const auto z = model->encoder->forward(x, model->describe({prompt}), s.modality);
    const auto out = match_channels(model->decoder->forward(z), y.size(1));
    task_sum += losses::loss_task(out, y).item<double>();
    cos_sum += losses::mean_cosine(z, z_pd);
    ++n_real;
  }
  ev.recon = n_recon ? recon_sum / static_cast<double>(n_recon) : 0.0;
  ev.task = n_real ? task_sum / static_cast<double>(n_real) : 0.0;
  ev.cosine = n_real ? cos_sum / static_cast<double>(n_real) : 0.0;
  ev.pairs = n_real;
  return ev;
}

Stage1Result train_stage1(const RunConfig& config) {
  config.validate();
  if (config.stage != 1) throw ConfigError("train_stage1 needs a stage-1 config");
  fs::create_directories(config.out_dir);
  write_run_header(config.out_dir, config);

  const auto samples = stage1_samples(config);
  const auto catalog = config.catalog.empty() ? conditioning::PromptCatalog::builtin()
                                              : conditioning::PromptCatalog::load(config.catalog);

  // Sampling pools: one per (modality, real task); pseudo pairs come from the
  // clean side of each drawn sample.
  std::map<std::pair<int, int>, std::vector<size_t>> pools;
  int64_t min_h = std::numeric_limits<int64_t>::max(), min_w = min_h;
  for (size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    min_h = std::min(min_h, s.clean.height());
    min_w = std::min(min_w, s.clean.width());
    if (s.task_id == datagen::kPseudoTaskId) continue;
    if (s.task_id >= catalog.num_classes()) {
      throw ConfigError("prompt catalog has no prompts for task " + std::to_string(s.task_id));
    }
    pools[{static_cast<int>(s.modality), s.task_id}].push_back(i);
  }
  if (pools.empty()) throw InputError("stage-1 dataset has no degraded samples");
  std::vector<std::vector<size_t>> pool_list;
  for (auto& [key, idx] : pools) pool_list.push_back(idx);

  TrainState state;
  state.model = make_model(config.model, catalog, config.seed);
  const int64_t crop = effective_crop(config.crop, min_h, min_w, config.model.encoder.spatial_multiple());
  make_optimizer(state, config);
  if (!config.resume.empty()) restore_state(state, Checkpoint::load(config.resume));
  open_metrics(state, config);

  std::vector<int64_t> all_prompts;
  std::vector<int64_t> all_tasks;
  for (size_t i = 0; i < catalog.size(); ++i) {
    all_prompts.push_back(static_cast<int64_t>(i));
    all_tasks.push_back(catalog.entry(i).task_id);
  }
  const auto prompt_ids = torch::tensor(all_prompts, torch::kInt64);
  const auto task_ids = torch::tensor(all_tasks, torch::kInt64);
  const auto pd_prompts = catalog.prompts_for(datagen::kPseudoTaskId);

  const int64_t snapshot_step = std::max<int64_t>(1, config.steps / 10);
  Stage1Result result;
  state.model->train();

  while (state.step < config.steps) {
    const int64_t step = state.step;
    Rng rng(derive_seed(config.seed, 0x5151, static_cast<uint64_t>(step)));
    std::vector<size_t> picks;
    std::vector<Augment> augs;
    std::vector<int64_t> task_prompt, pd_prompt;
    for (int64_t b = 0; b < config.batch_size; ++b) {
      const auto& pool = pool_list[rng.below(pool_list.size())];
      const size_t idx = pool[rng.below(pool.size())];
      const auto& s = samples[idx];
      picks.push_back(idx);
      augs.push_back(datagen::draw_augment(s.clean.height(), s.clean.width(), crop, config.flip_p, rng.next()));
      const auto options = catalog.prompts_for(s.task_id);
      task_prompt.push_back(static_cast<int64_t>(options[rng.below(options.size())]));
      pd_prompt.push_back(static_cast<int64_t>(pd_prompts[rng.below(pd_prompts.size())]));
    }

    losses::Stage1Terms terms{torch::zeros({}), torch::zeros({}), torch::zeros({}), torch::zeros({})};
    std::map<std::string, torch::Tensor> dump;
    for (Modality m : {Modality::kVisible, Modality::kInfrared}) {
      std::vector<torch::Tensor> xs, ys;
      std::vector<Augment> maug;
      std::vector<int64_t> prompts, pds;
      for (size_t b = 0; b < picks.size(); ++b) {
        const auto& s = samples[picks[b]];
        if (s.modality != m) continue;
        xs.push_back(s.degraded.tensor());
        ys.push_back(s.clean.tensor());
        maug.push_back(augs[b]);
        prompts.push_back(task_prompt[b]);
        pds.push_back(pd_prompt[b]);
      }
      if (xs.empty()) continue;
      const auto n = static_cast<int64_t>(xs.size());
      const auto x = stack_augmented(xs, maug);
      const auto y = stack_augmented(ys, maug);
      dump["batch/" + std::string(modality_name(m)) + "/x"] = x;
      dump["batch/" + std::string(modality_name(m)) + "/y"] = y;

      // Degraded and clean halves share one encoder pass.
      std::vector<int64_t> rows = prompts;
      rows.insert(rows.end(), pds.begin(), pds.end());
      const auto text = state.model->describe(rows);
      const auto z_all = state.model->encoder->forward(torch::cat({x, y}), text, m);
      const auto decoded = match_channels(state.model->decoder->forward(z_all), y.size(1));
      const auto z = z_all.slice(0, n);
      const auto z_pd = z_all.slice(n, 2 * n);

      const double share = static_cast<double>(n) / static_cast<double>(config.batch_size);
      terms.task = terms.task + share * losses::loss_task(decoded.slice(0, 0, n), y);
      terms.recon = terms.recon + share * losses::loss_recon(decoded.slice(0, n, 2 * n), y);
      terms.unified = terms.unified + share * losses::loss_unified(z, z_pd);
    }
    terms.text = losses::loss_text_from_logits(state.model->head->forward(state.model->text->forward(prompt_ids)),
                                               task_ids);
    auto breakdown = losses::loss_stage1(terms, config.weights);
    if (!std::isfinite(breakdown.total.item<double>())) abort_on_nan(config, step, dump, breakdown.terms);

    const double lr = cosine_lr(config.lr, config.lr_final_ratio, step, config.steps);
    set_lr(*state.optimizer, lr);
    state.optimizer->zero_grad();
    breakdown.total.backward();
    state.optimizer->step();
    ++state.step;

    StepLog entry{state.step, lr, breakdown.terms};
    log_step(state, entry);
    result.history.push_back(entry);
    state.best_loss = std::min(state.best_loss, breakdown.terms.at("L_1"));
    if (state.step % 50 == 0 || state.step == config.steps) {
      std::clog << "stage1 step " << state.step << "/" << config.steps << " L_1 " << breakdown.terms.at("L_1")
                << " L_recon " << breakdown.terms.at("L_recon") << " L_unified "
                << breakdown.terms.at("L_unified") << std::endl;
    }
    const bool periodic = config.checkpoint_every > 0 && state.step % config.checkpoint_every == 0;
    if ((state.step == snapshot_step || periodic) && state.step != config.steps) {
      const auto path = config.out_dir / snapshot_name(1, state.step);
      state_checkpoint(state, config).save(path);
      result.snapshots.push_back(path);
    }
  }
  state.metrics.flush();

  result.checkpoint = config.out_dir / "stage1.ckpt";
  state_checkpoint(state, config).save(result.checkpoint);
  result.snapshots.push_back(result.checkpoint);

  state.model->eval();
  result.eval = evaluate_stage1(state.model, samples);
  std::ofstream ev(config.out_dir / "stage1_eval.txt");
  ev << "pairs\t" << result.eval.pairs << "\nL_recon\t" << fmt_double(result.eval.recon) << "\nL_task\t"
     << fmt_double(result.eval.task) << "\ncosine\t" << fmt_double(result.eval.cosine) << "\n";
  return result;
}

namespace {

// Encoded latents for a batch of fusion pairs; frozen encoders make full-image
// latents reusable across steps.
class LatentCache {
 public:
  LatentCache(LureModel model, int64_t pd_prompt) : model_(std::move(model)), pd_(pd_prompt) {}

  std::pair<LatentStack, LatentStack> encode(const torch::Tensor& vi, const torch::Tensor& ir) {
    torch::NoGradGuard guard;
    const auto text = model_->describe({pd_});
    return {model_->encoder->forward(vi, text, Modality::kVisible),
            model_->encoder->forward(ir, text, Modality::kInfrared)};
  }

  std::pair<LatentStack, LatentStack> get(size_t pair, bool flip, const torch::Tensor& vi, const torch::Tensor& ir,
                                          bool cacheable) {
    if (!cacheable) return encode(vi, ir);
    const auto key = std::make_pair(pair, flip);
    auto it = entries_.find(key);
    if (it == entries_.end()) it = entries_.emplace(key, encode(vi, ir)).first;
    return it->second;
  }

 private:
  LureModel model_;
  int64_t pd_;
  std::map<std::pair<size_t, bool>, std::pair<LatentStack, LatentStack>> entries_;
};

}  // namespace

double evaluate_stage2_loss(LureModel& model, const std::vector<FusionPair>& pairs,
                            const losses::LossWeights& weights) {
  if (pairs.empty()) return 0.0;
  torch::NoGradGuard guard;
  const losses::PerceptualLoss perceptual;
  const auto pd = static_cast<int64_t>(model->catalog().prompts_for(datagen::kPseudoTaskId).front());
  LatentCache cache(model, pd);
  double sum = 0.0;
  for (const auto& p : pairs) {
    const auto vi = p.visible.tensor().unsqueeze(0);
    const auto ir = p.infrared.tensor().unsqueeze(0);
    const auto [z_vi, z_ir] = cache.encode(vi, ir);
    const auto out = model->decoder->forward(model->fusion->forward(z_vi, z_ir));
    sum += losses::loss_stage2(losses::stage2_terms(perceptual, out, ir, vi), weights).total.item<double>();
  }
  return sum / static_cast<double>(pairs.size());
}

Stage2Result train_stage2(const RunConfig& config) {
  config.validate();
  if (config.stage != 2) throw ConfigError("train_stage2 needs a stage-2 config");
  if (!fs::exists(config.init_checkpoint)) {
    throw CheckpointError("stage-1 checkpoint not found: " + config.init_checkpoint.string());
  }
  TrainState state;
  state.model = load_model(config.init_checkpoint);
  const auto multiple = state.model->config().encoder.spatial_multiple();
  const auto pairs = datagen::build_stage2_dataset(config.data_root, multiple);
  if (pairs.empty()) throw InputError("no fusion pairs under " + config.data_root.string());
  fs::create_directories(config.out_dir);
  write_run_header(config.out_dir, config);

  const auto frozen = frozen_groups(config.train_decoder);
  for (auto& item : state.model->named_parameters()) item.value().requires_grad_(!has_prefix(item.key(), frozen));
  Stage2Result result;
  result.frozen_checksum_before = parameter_checksum(*state.model, frozen);

  make_optimizer(state, config);
  if (!config.resume.empty()) restore_state(state, Checkpoint::load(config.resume));
  open_metrics(state, config);

  int64_t min_h = std::numeric_limits<int64_t>::max(), min_w = min_h;
  for (const auto& p : pairs) {
    min_h = std::min(min_h, p.visible.height());
    min_w = std::min(min_w, p.visible.width());
  }
  const int64_t crop = effective_crop(config.crop, min_h, min_w, multiple);
  const auto pd = static_cast<int64_t>(state.model->catalog().prompts_for(datagen::kPseudoTaskId).front());
  const losses::PerceptualLoss perceptual;
  LatentCache cache(state.model, pd);

  state.model->eval();
  result.initial_loss = evaluate_stage2_loss(state.model, pairs, config.weights);
  state.metrics << 0 << "\tL_2_eval\t" << fmt_double(result.initial_loss) << '\n';

  std::vector<torch::Tensor> frozen_params;
  for (const auto& item : state.model->named_parameters()) {
    if (has_prefix(item.key(), frozen)) frozen_params.push_back(item.value());
  }

  while (state.step < config.steps) {
    const int64_t step = state.step;
    Rng rng(derive_seed(config.seed, 0x5252, static_cast<uint64_t>(step)));
    std::vector<torch::Tensor> vis, irs;
    std::vector<LatentStack> zv, zi;
    for (int64_t b = 0; b < config.batch_size; ++b) {
      const size_t idx = rng.below(pairs.size());
      const auto& p = pairs[idx];
      const auto aug = datagen::draw_augment(p.visible.height(), p.visible.width(), crop, config.flip_p, rng.next());
      const auto vi = aug.apply(p.visible.tensor()).unsqueeze(0);
      const auto ir = aug.apply(p.infrared.tensor()).unsqueeze(0);
      const bool whole = aug.size_h == p.visible.height() && aug.size_w == p.visible.width();
      auto [a, c] = cache.get(idx, aug.flip, vi, ir, whole);
      vis.push_back(vi);
      irs.push_back(ir);
      zv.push_back(a);
      zi.push_back(c);
    }
    const auto vi = torch::cat(vis);
    const auto ir = torch::cat(irs);
    const auto fused = state.model->fusion->forward(LatentStack::concat(zv), LatentStack::concat(zi));
    const auto out = state.model->decoder->forward(fused);
    auto breakdown = losses::loss_stage2(losses::stage2_terms(perceptual, out, ir, vi), config.weights);
    if (!std::isfinite(breakdown.total.item<double>())) {
      abort_on_nan(config, step, {{"batch/vi", vi}, {"batch/ir", ir}}, breakdown.terms);
    }

    const double lr = cosine_lr(config.lr, config.lr_final_ratio, step, config.steps);
    set_lr(*state.optimizer, lr);
    state.optimizer->zero_grad();
    breakdown.total.backward();
    double frozen_norm = 0.0;
    for (const auto& p : frozen_params) {
      if (p.grad().defined()) frozen_norm = std::max(frozen_norm, p.grad().norm().item<double>());
    }
    result.max_frozen_grad = std::max(result.max_frozen_grad, frozen_norm);
    state.optimizer->step();
    ++state.step;

    StepLog entry{state.step, lr, breakdown.terms};
    entry.terms["frozen_grad_norm"] = frozen_norm;
    log_step(state, entry);
    result.history.push_back(entry);
    state.best_loss = std::min(state.best_loss, breakdown.terms.at("L_2"));
    if (state.step % 50 == 0 || state.step == config.steps) {
      std::clog << "stage2 step " << state.step << "/" << config.steps << " L_2 " << breakdown.terms.at("L_2")
                << std::endl;
    }
    if (config.checkpoint_every > 0 && state.step % config.checkpoint_every == 0 && state.step != config.steps) {
      state_checkpoint(state, config).save(config.out_dir / snapshot_name(2, state.step));
    }
  }

  result.final_loss = evaluate_stage2_loss(state.model, pairs, config.weights);
  state.metrics << state.step << "\tL_2_eval\t" << fmt_double(result.final_loss) << '\n';
  state.metrics.flush();
  result.frozen_checksum_after = parameter_checksum(*state.model, frozen);
  if (result.frozen_checksum_after != result.frozen_checksum_before) {
    throw TrainingError("frozen parameters changed during stage 2");
  }
  for (auto& item : state.model->named_parameters()) item.value().requires_grad_(true);
  result.checkpoint = config.out_dir / "stage2.ckpt";
  state_checkpoint(state, config).save(result.checkpoint);
  return result;
}

}  // namespace lure::trainer
