// Acceptance gate: one PASS/FAIL line per criterion on stdout, progress and
// measurements on stderr. Exit status 0 only when every criterion passes.

#include <sys/wait.h>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <torch/torch.h>

#include "lure/blocks.hpp"
#include "lure/checkpoint.hpp"
#include "lure/datagen.hpp"
#include "lure/error.hpp"
#include "lure/inference.hpp"
#include "lure/latent_probe.hpp"
#include "lure/losses.hpp"
#include "lure/model.hpp"
#include "lure/trainer.hpp"
#include "metric_suite.hpp"
#include "oracles.hpp"

using namespace lure;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(6) << v;
  return os.str();
}

void note(const std::string& s) { std::clog << "[acceptance] " << s << std::endl; }

LatentStack random_latents(const ModelConfig& cfg, int64_t h, int64_t w, at::Generator& gen) {
  LatentStack z;
  for (size_t i = 0; i < cfg.encoder.levels(); ++i) {
    z.levels.push_back(torch::randn({1, cfg.encoder.reduced[i], h >> i, w >> i}, gen));
  }
  return z;
}

// 1. Fresh fusion module: decode(fuse(a, b)) == decode(prior(a, b)) bit for bit.
Outcome zero_init_identity(LureModel& model) {
  torch::NoGradGuard guard;
  auto gen = at::make_generator<at::CPUGeneratorImpl>(101);
  int equal = 0;
  for (int i = 0; i < 5; ++i) {
    auto vi = random_latents(model->config(), 32, 32, gen);
    auto ir = random_latents(model->config(), 32, 32, gen);
    auto fused = model->decoder->forward(model->fusion->forward(vi, ir));
    auto prior = model->decoder->forward(prior_rule(vi, ir));
    equal += torch::equal(fused, prior) ? 1 : 0;
  }
  return {equal == 5, std::to_string(equal) + "/5 pairs bit-identical"};
}

// 2. z == Phi_t - Phi_d at every level of every pass in a 50-step training trace.
Outcome inner_residual(const ModelConfig& cfg, const fs::path& toy) {
  auto model = make_model(cfg, conditioning::PromptCatalog::builtin(), 7);
  torch::optim::Adam opt(model->parameters(), torch::optim::AdamOptions(2e-4));
  auto clean = list_pngs(toy / "vi/clean");
  int64_t checked = 0, exact = 0;
  for (int step = 0; step < 50; ++step) {
    auto y = load_png(clean[step % clean.size()], Modality::kVisible).tensor().unsqueeze(0);
    auto x = datagen::apply_degradation(ImageArray(y[0]),
                                        datagen::DegradationSpec::defaults(datagen::DegradationKind::kLL), step)
                 .tensor()
                 .unsqueeze(0);
    std::vector<EncoderLayerTrace> trace;
    auto z = model->encoder->forward(x, model->describe({3}), Modality::kVisible, &trace);
    for (size_t i = 0; i < z.size(); ++i) {
      ++checked;
      exact += torch::equal(z[i], trace[i].task_base - trace[i].degradation) ? 1 : 0;
    }
    auto loss = losses::loss_task(model->decoder->forward(z), y);
    opt.zero_grad();
    loss.backward();
    opt.step();
  }
  return {checked == exact && checked == 200, std::to_string(exact) + "/" + std::to_string(checked) + " level passes exact"};
}

// 3. Analytic vs central-difference gradients, double precision, 8x8 probes.
Outcome gradients() {
  auto rnd = [](std::vector<int64_t> shape, uint64_t seed) {
    auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
    return torch::rand(shape, gen, torch::kFloat64);
  };
  auto target = rnd({1, 3, 8, 8}, 1), vi = rnd({1, 3, 8, 8}, 2), ir = rnd({1, 1, 8, 8}, 3);
  losses::PerceptualLoss per;
  auto gen = at::make_generator<at::CPUGeneratorImpl>(5);
  LatentStack zpd{{torch::randn({1, 4, 8, 8}, gen, torch::kFloat64), torch::randn({1, 8, 4, 4}, gen, torch::kFloat64)}};
  auto z1 = torch::randn({1, 8, 4, 4}, gen, torch::kFloat64);

  nn::TGABlock tga(8, 8, 2);
  tga->to(torch::kFloat64);
  {
    torch::NoGradGuard guard;
    for (auto& p : tga->parameters()) p.copy_(torch::randn(p.sizes(), gen, torch::kFloat64) * 0.3);
  }
  auto text = torch::randn({1, 8}, gen, torch::kFloat64);
  auto weights = torch::randn({1, 8, 8, 8}, gen, torch::kFloat64);

  std::vector<std::pair<std::string, std::function<torch::Tensor(const torch::Tensor&)>>> cases = {
      {"unified", [&](const torch::Tensor& x) { return losses::loss_unified(LatentStack{{x.narrow(1, 0, 4), z1}}, zpd); }},
      {"task", [&](const torch::Tensor& x) { return losses::loss_task(x.narrow(1, 0, 3), target); }},
      {"color", [&](const torch::Tensor& x) { return losses::loss_color(x.narrow(1, 0, 3), vi); }},
      {"grad", [&](const torch::Tensor& x) { return losses::loss_grad(x.narrow(1, 0, 3), ir, vi); }},
      {"perceptual", [&](const torch::Tensor& x) { return per(x.narrow(1, 0, 3), ir, vi); }},
  };
  std::ostringstream detail;
  bool ok = true;
  auto probe = rnd({1, 4, 8, 8}, 6);
  for (auto& [name, f] : cases) {
    auto r = oracle::check_gradient(f, probe, 10, 7);
    ok = ok && r.max_rel_error < 1e-3;
    detail << name << " " << fmt(r.max_rel_error) << "; ";
  }
  auto tga_x = oracle::check_gradient([&](const torch::Tensor& x) { return (tga->forward(x, text) * weights).sum(); },
                                      rnd({1, 8, 8, 8}, 8), 10, 9);
  auto tga_t = oracle::check_gradient([&](const torch::Tensor& t) { return (tga->forward(probe.narrow(1, 0, 4).repeat({1, 2, 1, 1}), t) * weights).sum(); },
                                      text, 8, 10);
  ok = ok && tga_x.max_rel_error < 1e-3 && tga_t.max_rel_error < 1e-3;
  detail << "tga(x) " << fmt(tga_x.max_rel_error) << "; tga(text) " << fmt(tga_t.max_rel_error);
  return {ok, "max rel error: " + detail.str()};
}

// Reuses a finished run in `out` when its checkpoint was produced by the same
// configuration; training is deterministic, so the result is identical.
bool reusable(const trainer::RunConfig& config, const fs::path& ckpt) {
  if (!fs::exists(ckpt)) return false;
  try {
    auto ck = Checkpoint::load(ckpt);
    for (const auto& [k, v] : config.to_meta()) {
      if (k.find("path") != std::string::npos) continue;
      auto it = ck.meta.find("run." + k);
      if (it == ck.meta.end() || it->second != v) return false;
    }
    if (ck.meta_at("run.step") != std::to_string(config.steps)) return false;
    return model_from_checkpoint(ck)->config().to_meta() == config.model.to_meta();
  } catch (const Error&) {
    return false;
  }
}

struct Stage1Run {
  fs::path final_ckpt;
  fs::path snapshot;
  trainer::Stage1Eval eval;
};

Stage1Run stage1(const fs::path& toy, const fs::path& out) {
  auto config = trainer::RunConfig::defaults(1);
  config.data_root = toy;
  config.out_dir = out;
  Stage1Run run{out / "stage1.ckpt", out / "stage1_step000200.ckpt", {}};
  if (reusable(config, run.final_ckpt) && fs::exists(run.snapshot)) {
    note("stage 1: reusing the completed run in " + out.string());
    auto model = load_model(run.final_ckpt);
    model->eval();
    run.eval = trainer::evaluate_stage1(model, trainer::stage1_samples(config));
  } else {
    note("stage 1: training 2000 steps (progress on stderr)");
    auto result = trainer::train_stage1(config);
    run.eval = result.eval;
    run.snapshot = result.snapshots.front();
  }
  return run;
}

// 5. Probe accuracies per modality.
Outcome probe_gap(const fs::path& ckpt, const fs::path& toy, const fs::path& out) {
  probe::ProbeConfig cfg;
  cfg.data_root = toy;
  auto report = probe::probe_ulfs(ckpt, cfg);
  std::ofstream os(out / "probe_report.txt");
  probe::write_report(os, report);
  bool ok = true;
  std::ostringstream detail;
  for (const auto& [m, acc] : report.accuracy) {
    const double in = acc.at("input").accuracy, gt = acc.at("gt").accuracy, z = acc.at("ulfs").accuracy;
    ok = ok && (in - z > 0.20) && (z - gt < 0.10);
    detail << modality_name(m) << ": input " << fmt(in) << " ulfs " << fmt(z) << " gt " << fmt(gt) << "; ";
  }
  return {ok, detail.str()};
}

// 6. Mean off-diagonal task divergence, final vs 10% snapshot, per modality.
Outcome divergence_trend(const fs::path& snapshot, const fs::path& final_ckpt, const fs::path& toy) {
  probe::ProbeConfig cfg;
  cfg.data_root = toy;
  auto early_model = load_model(snapshot);
  auto late_model = load_model(final_ckpt);
  auto early = probe::divergence_by_modality(probe::encode_probe_set(early_model, cfg));
  auto late = probe::divergence_by_modality(probe::encode_probe_set(late_model, cfg));
  bool ok = true;
  std::ostringstream detail;
  for (const auto& [m, d] : late) {
    const double a = early.at(m).mean_off_diagonal(), b = d.mean_off_diagonal();
    ok = ok && b < 0.5 * a;
    detail << modality_name(m) << ": " << fmt(a) << " -> " << fmt(b) << " (ratio " << fmt(b / a) << "); ";
  }
  return {ok, detail.str()};
}

// 7. Stage 2 on 16 pairs for 1000 steps.
Outcome stage2(const fs::path& init, const fs::path& toy, const fs::path& out, fs::path* ckpt) {
  auto config = trainer::RunConfig::defaults(2);
  config.data_root = toy;
  config.out_dir = out;
  config.init_checkpoint = init;
  auto pairs = list_pngs(toy / "vi/pairs").size();
  auto r = trainer::train_stage2(config);
  *ckpt = r.checkpoint;
  const double drop = 1.0 - r.final_loss / r.initial_loss;
  const bool frozen = r.frozen_checksum_before == r.frozen_checksum_after &&
                      parameter_checksum(*load_model(init), trainer::frozen_groups(false)) ==
                          parameter_checksum(*load_model(r.checkpoint), trainer::frozen_groups(false));
  return {drop >= 0.5 && frozen && pairs == 16,
          std::to_string(pairs) + " pairs; L_2 " + fmt(r.initial_loss) + " -> " + fmt(r.final_loss) + " (drop " +
              fmt(100 * drop) + "%); frozen checksums " + (frozen ? "unchanged" : "CHANGED") +
              "; max frozen grad " + fmt(r.max_frozen_grad)};
}

// 8. Metric identities and loop oracles.
Outcome metric_oracles() {
  auto cases = metric_suite::run();
  size_t ok = 0;
  std::string failures;
  for (const auto& c : cases) {
    if (c.ok()) {
      ++ok;
    } else {
      failures += " " + c.name + " got " + fmt(c.got) + " want " + fmt(c.want) + ";";
    }
  }
  return {ok == cases.size(), std::to_string(ok) + "/" + std::to_string(cases.size()) + " cases" + failures};
}

// 9. LL on the visible side, LC on the infrared side, each with its own prompt.
Outcome combined_degradation(const fs::path& ckpt, const fs::path& toy) {
  auto model = load_model(ckpt);
  auto stem = list_pngs(toy / "vi/pairs").front().filename();
  auto vi = load_png(toy / "vi/pairs" / stem, Modality::kVisible);
  auto ir = load_png(toy / "ir/pairs" / stem, Modality::kInfrared);
  inference::FusionRequest req{
      datagen::apply_degradation(ir, datagen::DegradationSpec::defaults(datagen::DegradationKind::kLC), 3),
      datagen::apply_degradation(vi, datagen::DegradationSpec::defaults(datagen::DegradationKind::kLL), 3)};
  const auto& catalog = model->catalog();
  const auto ll = catalog.entry(catalog.prompts_for(1).front()).prompt;
  const auto lc = catalog.entry(catalog.prompts_for(4).front()).prompt;
  inference::FusionTrace trace;
  auto degraded = inference::fuse(model, req, lc, ll, &trace);
  auto clean = inference::fuse(model, req, "clean", "clean");
  const double lo = degraded.tensor().min().item<double>(), hi = degraded.tensor().max().item<double>();
  const double mad = (degraded.tensor() - clean.tensor()).abs().mean().item<double>();
  const bool ok = trace.vi_task == 1 && trace.ir_task == 4 && lo >= 0.0 && hi <= 1.0 && mad > 1e-3;
  return {ok, "tasks vi " + std::to_string(trace.vi_task) + " ir " + std::to_string(trace.ir_task) + "; range [" +
                  fmt(lo) + ", " + fmt(hi) + "]; MAD vs clean prompts " + fmt(mad)};
}

int sh(const std::string& cmd) {
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// 10. Reduced-step CLI pipeline twice; every checkpoint, PNG and CSV must match.
Outcome pipeline_determinism(const fs::path& work) {
  const std::string cli = LURE_CLI_PATH;
  const std::string model = " --widths 8,16,32 --reduced 4,8,16 --k-tb 1,1,1 --k-bt 1,1,1 --heads 2 --text-dim 16"
                            " --decoder-blocks 1,1,1 --fusion-blocks 1,1,1 --fusion-heads 2";
  auto run = [&](const fs::path& dir) {
    fs::remove_all(dir);
    fs::create_directories(dir);
    const std::string d = dir.string(), log = " >> " + d + "/pipeline.log 2>&1";
    std::vector<std::string> steps = {
        cli + " synth --out " + d + "/toy --clean 3 --pairs 4 --height 32 --width 32",
        cli + " train-stage1 --data " + d + "/toy --out " + d + "/s1 --steps 30 --crop 32" + model,
        cli + " train-stage2 --data " + d + "/toy --out " + d + "/s2 --init " + d + "/s1/stage1.ckpt --steps 15 --crop 32",
        cli + " fuse --ckpt " + d + "/s2/stage2.ckpt --ir " + d + "/toy/ir/pairs --vi " + d + "/toy/vi/pairs --out " + d +
            "/fused --vi-prompt ll",
        cli + " eval --fused " + d + "/fused --ir " + d + "/toy/ir/pairs --vi " + d + "/toy/vi/pairs --out " + d +
            "/eval.csv",
        cli + " probe --ckpt " + d + "/s1/stage1.ckpt --data " + d + "/toy --out " + d + "/probe --variants 2 --epochs 5",
    };
    for (const auto& s : steps) {
      if (sh(s + log) != 0) return s;
    }
    return std::string();
  };
  for (const char* name : {"run_a", "run_b"}) {
    if (auto failed = run(work / name); !failed.empty()) return {false, "command failed: " + failed};
  }
  size_t compared = 0;
  std::vector<std::string> differing;
  for (const auto& entry : fs::recursive_directory_iterator(work / "run_a")) {
    if (!entry.is_regular_file()) continue;
    const auto ext = entry.path().extension();
    if (ext != ".ckpt" && ext != ".png" && ext != ".csv") continue;
    const auto rel = fs::relative(entry.path(), work / "run_a");
    auto read = [](const fs::path& p) {
      std::ifstream in(p, std::ios::binary);
      return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    };
    ++compared;
    if (!fs::exists(work / "run_b" / rel) || read(entry.path()) != read(work / "run_b" / rel)) {
      differing.push_back(rel.string());
    }
  }
  std::string detail = std::to_string(compared) + " files compared, " + std::to_string(differing.size()) + " differ";
  for (const auto& d : differing) detail += " " + d;
  return {differing.empty() && compared > 0, detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance gate"};
  fs::path work = fs::temp_directory_path() / "lure_acceptance";
  std::vector<int> only;
  app.add_option("--work", work, "working directory (a finished stage-1 run there is reused)");
  app.add_option("--only", only, "run only these criteria (default: all)")->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(work);
  torch::set_num_threads(1);

  std::map<int, Outcome> results;
  auto selected = [&](int id) { return only.empty() || std::find(only.begin(), only.end(), id) != only.end(); };
  auto record = [&](int id, const std::function<Outcome()>& f, bool needed = false) {
    if (!selected(id) && !needed) return;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      results[id] = f();
    } catch (const std::exception& e) {
      results[id] = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    results[id].detail += " [" + fmt(secs) + " s]";
    note("criterion " + std::to_string(id) + (results[id].pass ? " PASS " : " FAIL ") + results[id].detail);
  };

  const auto toy = work / "toy";
  if (!fs::exists(toy / "stage1")) {
    datagen::SynthOptions synth;
    synth.root = toy;
    datagen::synthesize_toy_corpus(synth);
  }
  const ModelConfig defaults;

  record(1, [&] {
    auto model = make_model(defaults, conditioning::PromptCatalog::builtin(), 7);
    return zero_init_identity(model);
  });
  record(2, [&] { return inner_residual(defaults, toy); });
  record(3, gradients);
  record(8, metric_oracles);

  const bool needs_stage1 = selected(4) || selected(5) || selected(6) || selected(7) || selected(9);
  Stage1Run s1;
  bool have_stage1 = false;
  std::string stage1_error = "not run";
  if (needs_stage1) {
    const auto t0 = std::chrono::steady_clock::now();
    try {
      s1 = stage1(toy, work / "stage1");
      have_stage1 = true;
    } catch (const std::exception& e) {
      stage1_error = e.what();
    }
    note("stage 1 ready after " + fmt(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()) +
         " s");
  }
  record(4, [&] {
    if (!have_stage1) return Outcome{false, "stage 1 failed: " + stage1_error};
    return Outcome{s1.eval.recon < 0.02 && s1.eval.cosine > 0.9,
                   "L_recon " + fmt(s1.eval.recon) + ", cosine " + fmt(s1.eval.cosine) + " over " +
                       std::to_string(s1.eval.pairs) + " pairs"};
  });
  fs::path s2_ckpt;
  if (have_stage1) {
    record(5, [&] { return probe_gap(s1.final_ckpt, toy, work); });
    record(6, [&] { return divergence_trend(s1.snapshot, s1.final_ckpt, toy); });
    record(7, [&] { return stage2(s1.final_ckpt, toy, work / "stage2", &s2_ckpt); }, selected(9));
  } else {
    for (int id : {5, 6, 7}) {
      if (selected(id)) results[id] = {false, "stage 1 did not complete"};
    }
  }
  if (!s2_ckpt.empty()) {
    record(9, [&] { return combined_degradation(s2_ckpt, toy); });
  } else {
    if (selected(9)) results[9] = {false, "no stage-2 checkpoint"};
  }
  record(10, [&] { return pipeline_determinism(work / "pipeline"); });

  static const char* names[] = {"",
                                "zero-init fusion identity",
                                "inner-residual identity",
                                "gradient correctness",
                                "stage-1 convergence",
                                "ULFS probe gap",
                                "divergence trend",
                                "stage-2 convergence and freeze",
                                "metric oracle suite",
                                "combined-degradation path",
                                "end-to-end determinism"};
  bool all = true;
  for (int id = 1; id <= 10; ++id) {
    if (!selected(id)) {
      std::cout << "criterion " << std::setw(2) << id << " SKIP  " << names[id] << ": not selected\n";
      continue;
    }
    const auto& r = results[id];
    all = all && r.pass;
    std::cout << "criterion " << std::setw(2) << id << " " << (r.pass ? "PASS" : "FAIL") << "  " << names[id]
              << ": " << r.detail << "\n";
  }
  const char* scope = only.empty() ? "ALL" : "SELECTED";
  std::cout << scope << (all ? " CRITERIA PASS" : " CRITERIA: SOME FAIL") << std::endl;
  return all ? 0 : 1;
}
