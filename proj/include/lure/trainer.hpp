#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "lure/datagen.hpp"
#include "lure/losses.hpp"
#include "lure/model.hpp"

namespace lure::trainer {

/// Everything a training run depends on. Defaults are the documented values;
/// the CLI and config files override them field by field.
struct RunConfig {
  int stage = 1;
  uint64_t seed = 7;
  int64_t steps = 2000;
  int64_t batch_size = 2;
  int64_t crop = 64;
  double flip_p = 0.5;
  double lr = 2e-4;             // stage 2 default is 1e-4
  double lr_final_ratio = 0.0;  // cosine decay from lr to lr * ratio
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  losses::LossWeights weights;

  std::filesystem::path data_root;     // holds {vi,ir}/clean and {vi,ir}/pairs
  std::filesystem::path out_dir;       // checkpoints, metrics.tsv, run.log
  std::filesystem::path init_checkpoint;  // stage 2: the stage-1 model
  std::filesystem::path resume;        // optional training-state checkpoint
  std::filesystem::path catalog;       // empty: built-in prompts

  std::vector<datagen::DegradationKind> kinds;  // empty: all real kinds
  size_t variants = 1;                 // degradations drawn per clean image and kind
  int64_t checkpoint_every = 0;        // 0: only the 10% snapshot and the final one
  bool train_decoder = false;          // stage 2: unfreeze the decoder
  ModelConfig model;

  static RunConfig defaults(int stage);
  void validate() const;
  /// Flat key=value echo, used in the run log and checkpoint metadata.
  std::map<std::string, std::string> to_meta() const;
};

/// Cosine-decayed learning rate for `step` of `total`.
double cosine_lr(double base, double final_ratio, int64_t step, int64_t total);

struct StepLog {
  int64_t step = 0;
  double lr = 0.0;
  std::map<std::string, double> terms;
};

/// Mutable state of a run: the step counter, parameters, optimizer moments,
/// best loss and the metrics log.
struct TrainState {
  int64_t step = 0;
  LureModel model{nullptr};
  std::unique_ptr<torch::optim::Adam> optimizer;
  std::vector<std::string> trainable_names;
  double best_loss = std::numeric_limits<double>::infinity();
  std::ofstream metrics;
};

/// Model checkpoint plus Adam moments for the trainable parameters.
Checkpoint state_checkpoint(TrainState& state, const RunConfig& config);
/// Restores parameters, Adam moments and the step counter.
void restore_state(TrainState& state, const Checkpoint& ckpt);

/// Metrics measured on every training pair after stage 1.
struct Stage1Eval {
  double recon = 0.0;          // mean L_recon over pseudo pairs
  double task = 0.0;           // mean L_task over real pairs
  double cosine = 0.0;         // mean Gamma(Z, Z_pd) over real pairs
  size_t pairs = 0;
};

struct Stage1Result {
  std::filesystem::path checkpoint;
  std::vector<std::filesystem::path> snapshots;  // in step order
  std::vector<StepLog> history;
  Stage1Eval eval;
};

struct Stage2Result {
  std::filesystem::path checkpoint;
  std::vector<StepLog> history;
  double initial_loss = 0.0;  // L_2 over all pairs before the first update
  double final_loss = 0.0;    // same after the last update
  uint64_t frozen_checksum_before = 0;
  uint64_t frozen_checksum_after = 0;
  double max_frozen_grad = 0.0;  // largest frozen-group gradient norm seen
};

Stage1Result train_stage1(const RunConfig& config);
Stage2Result train_stage2(const RunConfig& config);

/// Evaluates the restoration objectives on `samples` without augmentation.
Stage1Eval evaluate_stage1(LureModel& model, const std::vector<datagen::RestorationSample>& samples);

/// Mean stage-2 objective over `pairs`, both sides encoded with c_pd.
double evaluate_stage2_loss(LureModel& model, const std::vector<datagen::FusionPair>& pairs,
                            const losses::LossWeights& weights);

/// Stage-1 samples for a run: clean images under data_root/{vi,ir}/clean.
std::vector<datagen::RestorationSample> stage1_samples(const RunConfig& config);

/// Decoder output compared against a target with `target_channels` channels:
/// infrared targets are matched by the channel mean.
torch::Tensor match_channels(const torch::Tensor& decoded, int64_t target_channels);

/// Names of the parameter groups frozen in stage 2.
std::vector<std::string> frozen_groups(bool train_decoder);

}  // namespace lure::trainer
