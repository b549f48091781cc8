#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <torch/torch.h>

#include "lure/datagen.hpp"
#include "lure/error.hpp"
#include "lure/inference.hpp"
#include "lure/latent_probe.hpp"
#include "lure/metrics.hpp"
#include "lure/trainer.hpp"
#include "lure/version.hpp"

namespace fs = std::filesystem;
using namespace lure;

namespace {

enum ExitCode { kOk = 0, kInternal = 1, kBadInput = 2, kBadCheckpoint = 3 };

// Config echo, version and seed of the run, written before any work starts.
void log_header(const CLI::App& sub) {
  std::clog << "# lure " << kVersion << " config-schema " << kConfigSchema << " " << sub.get_name() << "\n";
  std::istringstream echo(sub.config_to_str(true, false));
  for (std::string line; std::getline(echo, line);) {
    if (!line.empty()) std::clog << "#   " << line << "\n";
  }
}

LureModel open_model(const fs::path& path) {
  if (!fs::exists(path)) throw CheckpointError("checkpoint not found: " + path.string());
  auto model = load_model(path);
  model->eval();
  return model;
}

struct ModelFlags {
  std::string widths, reduced, k_tb, k_bt, decoder_blocks, fusion_blocks;

  void add(CLI::App* app, ModelConfig& m) {
    app->add_option("--widths", widths, "encoder widths per level (comma separated)");
    app->add_option("--reduced", reduced, "latent widths per level");
    app->add_option("--k-tb", k_tb, "TGA+BaseBlock pairs per level");
    app->add_option("--k-bt", k_bt, "TGA+BottleNeck pairs per level");
    app->add_option("--heads", m.encoder.heads, "attention heads in TGA blocks")->capture_default_str();
    app->add_option("--text-dim", m.encoder.text_dim, "description vector width")->capture_default_str();
    app->add_option("--decoder-blocks", decoder_blocks, "decoder blocks per level");
    app->add_option("--fusion-blocks", fusion_blocks, "cross-attention blocks per level");
    app->add_option("--fusion-heads", m.fusion_heads, "attention heads in fusion blocks")->capture_default_str();
  }

  void apply(ModelConfig& m) const {
    if (!widths.empty()) m.encoder.widths = parse_ints(widths);
    if (!reduced.empty()) m.encoder.reduced = parse_ints(reduced);
    if (!k_tb.empty()) m.encoder.k_tb = parse_ints(k_tb);
    if (!k_bt.empty()) m.encoder.k_bt = parse_ints(k_bt);
    if (!decoder_blocks.empty()) m.decoder_blocks = parse_ints(decoder_blocks);
    if (!fusion_blocks.empty()) m.fusion_blocks = parse_ints(fusion_blocks);
  }
};

struct TrainFlags {
  trainer::RunConfig run;
  ModelFlags model;
  std::string data, out, init, resume, catalog, kinds;

  explicit TrainFlags(int stage) : run(trainer::RunConfig::defaults(stage)) {}

  void add(CLI::App* app) {
    app->set_config("--config", "", "run config file (key = value lines; flags override it)");
    app->add_option("--data", data, "corpus root with {vi,ir}/clean and {vi,ir}/pairs")->required();
    app->add_option("--out", out, "output directory")->required();
    app->add_option("--seed", run.seed, "random seed")->capture_default_str();
    app->add_option("--steps", run.steps, "optimizer steps")->capture_default_str();
    app->add_option("--batch", run.batch_size, "batch size")->capture_default_str();
    app->add_option("--crop", run.crop, "random crop size")->capture_default_str();
    app->add_option("--flip", run.flip_p, "horizontal flip probability")->capture_default_str();
    app->add_option("--lr", run.lr, "initial learning rate")->capture_default_str();
    app->add_option("--lr-final-ratio", run.lr_final_ratio, "cosine decay floor as a fraction of --lr")
        ->capture_default_str();
    app->add_option("--checkpoint-every", run.checkpoint_every, "extra snapshot interval (0 = off)")
        ->capture_default_str();
    app->add_option("--resume", resume, "continue from a training-state checkpoint");
    app->add_option("--catalog", catalog, "prompt catalog file (task_id<TAB>prompt)");
    if (run.stage == 1) {
      app->add_option("--kinds", kinds, "degradation kinds, e.g. LL,HZ,OE,LC,SR4,SR8 (default all)");
      app->add_option("--variants", run.variants, "degraded variants per clean image and kind")
          ->capture_default_str();
      app->add_option("--w-unified", run.weights.unified, "weight of L_unified")->capture_default_str();
      app->add_option("--w-recon", run.weights.recon, "weight of L_recon")->capture_default_str();
      app->add_option("--w-text", run.weights.text, "weight of L_text")->capture_default_str();
      model.add(app, run.model);
    } else {
      app->add_option("--init", init, "stage-1 checkpoint")->required();
      app->add_option("--w-grad", run.weights.grad, "weight of L_grad")->capture_default_str();
      app->add_option("--w-perceptual", run.weights.perceptual, "weight of L_per")->capture_default_str();
      app->add_flag("--train-decoder", run.train_decoder, "also update the decoder");
    }
  }

  const trainer::RunConfig& finish() {
    run.data_root = data;
    run.out_dir = out;
    run.init_checkpoint = init;
    run.resume = resume;
    run.catalog = catalog;
    if (!kinds.empty()) run.kinds = datagen::parse_kinds(kinds);
    model.apply(run.model);
    return run;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lure: degradation-aware infrared/visible image fusion"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  // synth
  datagen::SynthOptions synth;
  std::string synth_root, synth_kinds;
  auto* s = app.add_subcommand("synth", "write a procedural toy corpus");
  s->add_option("--out", synth_root, "corpus root")->required();
  s->add_option("--clean", synth.clean_per_modality, "clean images per modality")->capture_default_str();
  s->add_option("--pairs", synth.fusion_pairs, "aligned fusion pairs")->capture_default_str();
  s->add_option("--height", synth.scene.height, "image height")->capture_default_str();
  s->add_option("--width", synth.scene.width, "image width")->capture_default_str();
  s->add_option("--seed", synth.seed, "random seed")->capture_default_str();
  s->add_option("--kinds", synth_kinds, "degradation kinds for the stage-1 set");

  TrainFlags stage1(1), stage2(2);
  auto* t1 = app.add_subcommand("train-stage1", "learn the unified latent space on restoration pairs");
  stage1.add(t1);
  auto* t2 = app.add_subcommand("train-stage2", "train the fusion module with frozen encoders");
  stage2.add(t2);

  std::string fuse_ir, fuse_vi, fuse_ir_prompt = "clean", fuse_vi_prompt = "clean", fuse_ckpt, fuse_out;
  auto* f = app.add_subcommand("fuse", "fuse an infrared/visible pair or two directories of pairs");
  f->set_config("--config", "", "config file (key = value lines; flags override it)");
  f->add_option("--ir", fuse_ir, "infrared PNG or directory")->required();
  f->add_option("--vi", fuse_vi, "visible PNG or directory")->required();
  f->add_option("--ir-prompt", fuse_ir_prompt, "degradation description of the infrared side")
      ->capture_default_str();
  f->add_option("--vi-prompt", fuse_vi_prompt, "degradation description of the visible side")
      ->capture_default_str();
  f->add_option("--ckpt", fuse_ckpt, "stage-2 checkpoint")->required();
  f->add_option("--out", fuse_out, "output PNG, or directory for directory inputs")->required();

  std::string eval_fused, eval_ir, eval_vi, eval_out;
  auto* e = app.add_subcommand("eval", "score fused images against their sources (CSV)");
  e->add_option("--fused", eval_fused, "directory of fused PNGs")->required();
  e->add_option("--ir", eval_ir, "directory of infrared sources")->required();
  e->add_option("--vi", eval_vi, "directory of visible sources")->required();
  e->add_option("--out", eval_out, "CSV path (default: stdout)");

  probe::ProbeConfig probe_cfg;
  std::string probe_ckpt, probe_data, probe_out;
  auto* p = app.add_subcommand("probe", "degradation probes, task divergences and a 2-D projection");
  p->set_config("--config", "", "config file (key = value lines; flags override it)");
  p->add_option("--ckpt", probe_ckpt, "stage-1 checkpoint")->required();
  p->add_option("--data", probe_data, "corpus root with {vi,ir}/clean")->required();
  p->add_option("--out", probe_out, "output directory (report.txt, projection.csv)")->required();
  p->add_option("--variants", probe_cfg.variants, "degradations per clean image and kind")->capture_default_str();
  p->add_option("--seed", probe_cfg.seed, "degradation seed")->capture_default_str();
  p->add_option("--probe-seed", probe_cfg.probe.seed, "probe training seed")->capture_default_str();
  p->add_option("--epochs", probe_cfg.probe.epochs, "probe training epochs")->capture_default_str();
  p->add_flag("--full-stack", probe_cfg.full_stack, "probe the pooled latents of every level");

  if (argc < 2) {
    std::cerr << app.help();
    return kBadInput;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kBadInput;
  }

  try {
    for (const auto* sub : app.get_subcommands()) log_header(*sub);
    if (s->parsed()) {
      synth.root = synth_root;
      if (!synth_kinds.empty()) synth.kinds = datagen::parse_kinds(synth_kinds);
      datagen::synthesize_toy_corpus(synth);
    } else if (t1->parsed()) {
      const auto result = trainer::train_stage1(stage1.finish());
      std::cout << "checkpoint " << result.checkpoint.string() << "\n"
                << "L_recon " << result.eval.recon << "\ncosine " << result.eval.cosine << "\n";
    } else if (t2->parsed()) {
      const auto result = trainer::train_stage2(stage2.finish());
      std::cout << "checkpoint " << result.checkpoint.string() << "\n"
                << "L_2 initial " << result.initial_loss << " final " << result.final_loss << "\n";
    } else if (f->parsed()) {
      auto model = open_model(fuse_ckpt);
      if (fs::is_directory(fuse_ir) || fs::is_directory(fuse_vi)) {
        const auto report = inference::fuse_batch(model, fuse_ir, fuse_vi, fuse_ir_prompt, fuse_vi_prompt, fuse_out);
        std::cout << "fused " << report.fused << " of " << report.rows.size() << " stems\n";
      } else {
        inference::FusionRequest request{load_png(fuse_ir, Modality::kInfrared), load_png(fuse_vi, Modality::kVisible)};
        save_png(fuse_out, inference::fuse(model, request, fuse_ir_prompt, fuse_vi_prompt));
      }
    } else if (e->parsed()) {
      std::vector<std::string> skipped;
      const auto rows = metrics::evaluate_directory(eval_fused, eval_ir, eval_vi, &skipped);
      for (const auto& stem : skipped) std::clog << "skipped " << stem << ": no matching sources\n";
      if (eval_out.empty()) {
        metrics::write_csv(std::cout, rows);
      } else {
        std::ofstream os(eval_out);
        if (!os) throw InputError("cannot write " + eval_out);
        metrics::write_csv(os, rows);
      }
    } else if (p->parsed()) {
      probe_cfg.data_root = probe_data;
      const auto report = probe::probe_ulfs(fs::path(probe_ckpt), probe_cfg);
      fs::create_directories(probe_out);
      std::ofstream rep(fs::path(probe_out) / "report.txt");
      probe::write_report(rep, report);
      std::ofstream proj(fs::path(probe_out) / "projection.csv");
      probe::write_projection_csv(proj, report);
      probe::write_report(std::cout, report);
    }
  } catch (const CheckpointError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kBadCheckpoint;
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kBadInput;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kBadInput;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kInternal;
  }
  return kOk;
}
