#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "lure/datagen.hpp"
#include "lure/model.hpp"

namespace lure::probe {

/// Labelled feature set: features [N, C, H, W] (vectors use H = W = 1).
struct LabeledSet {
  torch::Tensor features;
  std::vector<int64_t> labels;
};

struct ProbeOptions {
  int64_t epochs = 60;
  int64_t batch_size = 16;
  double lr = 1e-3;
  double test_fraction = 0.2;
  uint64_t seed = 11;
};

struct ProbeResult {
  double accuracy = 0.0;        // held-out
  double train_accuracy = 0.0;
  size_t train_size = 0;
  size_t test_size = 0;
  int64_t classes = 0;
};

/// Small convolutional classifier: three conv stages (conv, ReLU, 2x2 pooling
/// while the map is larger than 1x1), global average pooling and a linear head.
class ProbeNetImpl : public torch::nn::Module {
 public:
  ProbeNetImpl(int64_t in_channels, int64_t classes);
  torch::Tensor forward(torch::Tensor x);

  torch::nn::Conv2d c1{nullptr}, c2{nullptr}, c3{nullptr};
  torch::nn::Linear head{nullptr};
};
TORCH_MODULE(ProbeNet);

/// Per-class stratified split: the first ceil(test_fraction * n_c) indices of
/// a seeded shuffle of each class go to the test side.
std::pair<std::vector<size_t>, std::vector<size_t>> stratified_split(const std::vector<int64_t>& labels,
                                                                     double test_fraction, uint64_t seed);

/// Trains a probe on the train split and reports held-out accuracy. Labels
/// are remapped to 0..K-1. Throws InputError for fewer than two classes.
ProbeResult train_probe(const LabeledSet& set, const ProbeOptions& options = {});

/// Symmetrised KL divergence KL(p||q) + KL(q||p) between two diagonal Gaussians
/// of one dimension.
double symmetric_gaussian_kl(double mean_p, double var_p, double mean_q, double var_q);

struct DivergenceMatrix {
  std::vector<int> tasks;                 // row/column task ids
  std::vector<std::vector<double>> values;
  int64_t skipped_dimensions = 0;         // zero-variance dimensions left out
  double mean_off_diagonal() const;
};

/// Pairwise symmetrised KL between per-task diagonal-Gaussian fits of
/// `features` (one [N_t, D] tensor per task), summed over dimensions.
/// Dimensions where either task has (population) variance <= `min_variance`
/// are skipped. Throws InputError when a task has fewer than two samples.
DivergenceMatrix divergence_matrix(const std::map<int, torch::Tensor>& features, double min_variance = 1e-12);

/// Spatially average-pooled latents per level, concatenated: [B, sum C_i].
torch::Tensor pooled_latents(const LatentStack& z);

struct ProbeSample {
  std::string stem;
  Modality modality = Modality::kVisible;
  int task_id = 0;
  torch::Tensor input;  // [C, H, W] degraded image
  torch::Tensor gt;     // [C, H, W] clean image
  torch::Tensor ulfs;   // [D, 1, 1] probed latent
  torch::Tensor all_levels;  // [sum C_i] pooled latents of every level
};

struct ProbeConfig {
  std::filesystem::path data_root;  // <root>/{vi,ir}/clean
  size_t variants = 8;              // degradations per clean image and kind
  uint64_t seed = 1234;             // degradation draws
  bool full_stack = false;          // probe every level instead of the deepest
  ProbeOptions probe;
  uint64_t projection_seed = 5;
  double perplexity = 20.0;
};

/// Degraded samples plus their clean images; the pseudo task contributes the
/// clean image itself with the pseudo description.
std::vector<ProbeSample> encode_probe_set(LureModel& model, const ProbeConfig& config);

/// Divergence matrix per modality from the pooled latents of every level,
/// including the pseudo task.
std::map<Modality, DivergenceMatrix> divergence_by_modality(const std::vector<ProbeSample>& samples);

struct ProjectionPoint {
  std::string stem;
  Modality modality = Modality::kVisible;
  int task_id = 0;
  double x = 0.0;
  double y = 0.0;
};

struct ProbeReport {
  // accuracy[modality][source], source in {"input", "gt", "ulfs"}
  std::map<Modality, std::map<std::string, ProbeResult>> accuracy;
  std::map<Modality, DivergenceMatrix> divergence;
  std::vector<ProjectionPoint> projection;
  size_t samples = 0;
};

/// Builds the three feature sets per modality from degraded samples only
/// (real tasks), trains a probe on each, and fills divergences and the 2-D
/// projection of the probed latents.
ProbeReport probe_ulfs(LureModel& model, const ProbeConfig& config);
ProbeReport probe_ulfs(const std::filesystem::path& checkpoint, const ProbeConfig& config);

void write_report(std::ostream& os, const ProbeReport& report);
void write_projection_csv(std::ostream& os, const ProbeReport& report);

}  // namespace lure::probe
