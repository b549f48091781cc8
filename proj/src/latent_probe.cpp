#include "lure/latent_probe.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <set>

#include "lure/error.hpp"
#include "lure/rng.hpp"
#include "lure/tsne.hpp"

namespace fs = std::filesystem;

namespace lure::probe {

using datagen::RestorationSample;

ProbeNetImpl::ProbeNetImpl(int64_t in_channels, int64_t classes) {
  c1 = register_module("c1", torch::nn::Conv2d(torch::nn::Conv2dOptions(in_channels, 16, 3).padding(1)));
  c2 = register_module("c2", torch::nn::Conv2d(torch::nn::Conv2dOptions(16, 32, 3).padding(1)));
  c3 = register_module("c3", torch::nn::Conv2d(torch::nn::Conv2dOptions(32, 64, 3).padding(1)));
  head = register_module("head", torch::nn::Linear(64, classes));
}

torch::Tensor ProbeNetImpl::forward(torch::Tensor x) {
  for (auto* conv : {&c1, &c2, &c3}) {
    x = torch::relu((*conv)->forward(x));
    if (x.size(2) > 1 && x.size(3) > 1) x = torch::max_pool2d(x, 2);
  }
  return head->forward(x.mean({2, 3}));
}

std::pair<std::vector<size_t>, std::vector<size_t>> stratified_split(const std::vector<int64_t>& labels,
                                                                     double test_fraction, uint64_t seed) {
  std::map<int64_t, std::vector<size_t>> by_class;
  for (size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  std::vector<size_t> train, test;
  for (auto& [label, idx] : by_class) {
    Rng rng(derive_seed(seed, 0x7e57, static_cast<uint64_t>(label)));
    rng.shuffle(idx);
    auto n_test = static_cast<size_t>(std::ceil(test_fraction * static_cast<double>(idx.size())));
    n_test = std::min(n_test, idx.size() > 1 ? idx.size() - 1 : 0);
    test.insert(test.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
    train.insert(train.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_test), idx.end());
  }
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {train, test};
}

ProbeResult train_probe(const LabeledSet& set, const ProbeOptions& options) {
  if (!set.features.defined() || set.features.dim() != 4) {
    throw ShapeError("probe features must be [N, C, H, W]");
  }
  if (static_cast<size_t>(set.features.size(0)) != set.labels.size()) {
    throw ShapeError("probe features and labels differ in count");
  }
  const std::set<int64_t> distinct(set.labels.begin(), set.labels.end());
  if (distinct.size() < 2) throw InputError("probe needs at least two classes");
  std::map<int64_t, int64_t> remap;
  for (int64_t l : distinct) remap.emplace(l, static_cast<int64_t>(remap.size()));
  std::vector<int64_t> mapped;
  for (int64_t l : set.labels) mapped.push_back(remap.at(l));

  const auto [train_idx, test_idx] = stratified_split(mapped, options.test_fraction, options.seed);
  auto to_index = [](const std::vector<size_t>& v) {
    std::vector<int64_t> out(v.begin(), v.end());
    return torch::tensor(out, torch::kInt64);
  };
  const auto features = set.features.to(torch::kFloat32);
  const auto labels = torch::tensor(mapped, torch::kInt64);
  auto x_train = features.index_select(0, to_index(train_idx));
  auto y_train = labels.index_select(0, to_index(train_idx));

  // Per-channel standardisation with train-split statistics.
  const auto mean = x_train.mean({0, 2, 3}, true);
  const auto std = x_train.std({0, 2, 3}, false, true).clamp_min(1e-6);
  x_train = (x_train - mean) / std;

  torch::manual_seed(options.seed);
  ProbeNet net(features.size(1), static_cast<int64_t>(distinct.size()));
  torch::optim::Adam opt(net->parameters(), torch::optim::AdamOptions(options.lr));
  const auto n = static_cast<size_t>(x_train.size(0));
  for (int64_t epoch = 0; epoch < options.epochs; ++epoch) {
    const auto order = shuffled_order(n, derive_seed(options.seed, 0xe90c, static_cast<uint64_t>(epoch)));
    for (size_t start = 0; start < n; start += static_cast<size_t>(options.batch_size)) {
      const auto end = std::min(n, start + static_cast<size_t>(options.batch_size));
      std::vector<int64_t> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                order.begin() + static_cast<std::ptrdiff_t>(end));
      const auto idx = torch::tensor(rows, torch::kInt64);
      const auto loss = torch::nn::functional::cross_entropy(net->forward(x_train.index_select(0, idx)),
                                                             y_train.index_select(0, idx));
      opt.zero_grad();
      loss.backward();
      opt.step();
    }
  }

  torch::NoGradGuard guard;
  auto accuracy = [&](const torch::Tensor& x, const torch::Tensor& y) {
    if (x.size(0) == 0) return 0.0;
    const auto pred = net->forward(x).argmax(1);
    return pred.eq(y).to(torch::kFloat64).mean().item<double>();
  };
  ProbeResult r;
  r.classes = static_cast<int64_t>(distinct.size());
  r.train_size = train_idx.size();
  r.test_size = test_idx.size();
  r.train_accuracy = accuracy(x_train, y_train);
  const auto x_test = (features.index_select(0, to_index(test_idx)) - mean) / std;
  r.accuracy = accuracy(x_test, labels.index_select(0, to_index(test_idx)));
  return r;
}

double symmetric_gaussian_kl(double mean_p, double var_p, double mean_q, double var_q) {
  const double d = mean_p - mean_q;
  return 0.5 * (var_p / var_q + var_q / var_p) - 1.0 + 0.5 * d * d * (1.0 / var_p + 1.0 / var_q);
}

double DivergenceMatrix::mean_off_diagonal() const {
  const size_t k = values.size();
  if (k < 2) return 0.0;
  double s = 0.0;
  for (size_t i = 0; i < k; ++i) {
    for (size_t j = 0; j < k; ++j) {
      if (i != j) s += values[i][j];
    }
  }
  return s / static_cast<double>(k * (k - 1));
}

DivergenceMatrix divergence_matrix(const std::map<int, torch::Tensor>& features, double min_variance) {
  DivergenceMatrix out;
  std::vector<torch::Tensor> means, vars;
  int64_t dim = -1;
  for (const auto& [task, f] : features) {
    if (f.dim() != 2) throw ShapeError("divergence features must be [N, D]");
    if (f.size(0) < 2) throw InputError("task " + std::to_string(task) + " has fewer than two samples");
    if (dim >= 0 && f.size(1) != dim) throw ShapeError("divergence features differ in dimension");
    dim = f.size(1);
    const auto d = f.to(torch::kFloat64);
    out.tasks.push_back(task);
    means.push_back(d.mean(0));
    vars.push_back(d.var(0, false));
  }
  const size_t k = out.tasks.size();
  out.values.assign(k, std::vector<double>(k, 0.0));
  if (k == 0) return out;

  auto usable = torch::ones({dim}, torch::kBool);
  for (const auto& v : vars) usable = usable.logical_and(v > min_variance);
  out.skipped_dimensions = dim - usable.sum().item<int64_t>();

  std::vector<std::vector<double>> mu(k), var(k);
  for (size_t t = 0; t < k; ++t) {
    const auto m = means[t].index({usable}).contiguous();
    const auto v = vars[t].index({usable}).contiguous();
    mu[t].assign(m.data_ptr<double>(), m.data_ptr<double>() + m.numel());
    var[t].assign(v.data_ptr<double>(), v.data_ptr<double>() + v.numel());
  }
  for (size_t a = 0; a < k; ++a) {
    for (size_t b = a + 1; b < k; ++b) {
      double s = 0.0;
      for (size_t i = 0; i < mu[a].size(); ++i) s += symmetric_gaussian_kl(mu[a][i], var[a][i], mu[b][i], var[b][i]);
      out.values[a][b] = out.values[b][a] = s;
    }
  }
  return out;
}

torch::Tensor pooled_latents(const LatentStack& z) {
  std::vector<torch::Tensor> parts;
  for (const auto& level : z.levels) parts.push_back(level.mean({2, 3}));
  return torch::cat(parts, 1);
}

std::vector<ProbeSample> encode_probe_set(LureModel& model, const ProbeConfig& config) {
  torch::NoGradGuard guard;
  const auto& catalog = model->catalog();
  std::vector<datagen::DegradationSpec> specs;
  for (auto k : datagen::all_real_kinds()) {
    if (datagen::task_id(k) < catalog.num_classes()) specs.push_back(datagen::DegradationSpec::defaults(k));
  }
  constexpr int64_t kChunk = 16;
  std::vector<ProbeSample> out;
  for (Modality m : {Modality::kVisible, Modality::kInfrared}) {
    const auto files = list_pngs(config.data_root / modality_name(m) / "clean");
    if (files.empty()) continue;
    std::vector<std::pair<std::string, ImageArray>> cleans;
    for (const auto& f : files) cleans.emplace_back(f.stem().string(), load_png(f, m));
    const auto samples = datagen::build_stage1_samples(cleans, m, specs, config.seed, config.variants);

    // Batch samples that share a description.
    std::map<int, std::vector<size_t>> by_task;
    for (size_t i = 0; i < samples.size(); ++i) by_task[samples[i].task_id].push_back(i);
    std::vector<ProbeSample> part(samples.size());
    for (const auto& [task, idx] : by_task) {
      const auto row = static_cast<int64_t>(catalog.prompts_for(task).front());
      for (size_t start = 0; start < idx.size(); start += kChunk) {
        const size_t end = std::min(idx.size(), start + kChunk);
        std::vector<torch::Tensor> xs;
        for (size_t i = start; i < end; ++i) xs.push_back(samples[idx[i]].degraded.tensor());
        const auto z = model->encoder->forward(torch::stack(xs), model->describe({row}), m);
        const auto all = pooled_latents(z);
        const auto deepest = z.levels.back().mean({2, 3});
        for (size_t i = start; i < end; ++i) {
          const auto& s = samples[idx[i]];
          const auto r = static_cast<int64_t>(i - start);
          auto& p = part[idx[i]];
          p.stem = s.stem;
          p.modality = m;
          p.task_id = s.task_id;
          p.input = s.degraded.tensor();
          p.gt = s.clean.tensor();
          p.all_levels = all[r].clone();
          p.ulfs = (config.full_stack ? all[r] : deepest[r]).clone().view({-1, 1, 1});
        }
      }
    }
    out.insert(out.end(), part.begin(), part.end());
  }
  if (out.empty()) throw InputError("no clean images under " + config.data_root.string());
  return out;
}

std::map<Modality, DivergenceMatrix> divergence_by_modality(const std::vector<ProbeSample>& samples) {
  std::map<Modality, std::map<int, std::vector<torch::Tensor>>> grouped;
  for (const auto& s : samples) grouped[s.modality][s.task_id].push_back(s.all_levels);
  std::map<Modality, DivergenceMatrix> out;
  for (const auto& [m, tasks] : grouped) {
    std::map<int, torch::Tensor> features;
    for (const auto& [t, rows] : tasks) features[t] = torch::stack(rows);
    out[m] = divergence_matrix(features);
  }
  return out;
}

ProbeReport probe_ulfs(LureModel& model, const ProbeConfig& config) {
  const auto samples = encode_probe_set(model, config);
  ProbeReport report;
  report.samples = samples.size();
  report.divergence = divergence_by_modality(samples);

  for (Modality m : {Modality::kVisible, Modality::kInfrared}) {
    std::vector<torch::Tensor> inputs, gts, ulfs;
    std::vector<int64_t> labels;
    std::vector<std::vector<double>> points;
    std::vector<const ProbeSample*> members;
    for (const auto& s : samples) {
      if (s.modality != m) continue;
      const auto flat = s.ulfs.flatten().to(torch::kFloat64).contiguous();
      points.emplace_back(flat.data_ptr<double>(), flat.data_ptr<double>() + flat.numel());
      members.push_back(&s);
      if (s.task_id == datagen::kPseudoTaskId) continue;
      inputs.push_back(s.input);
      gts.push_back(s.gt);
      ulfs.push_back(s.ulfs);
      labels.push_back(s.task_id);
    }
    if (members.empty()) continue;
    auto& acc = report.accuracy[m];
    acc["input"] = train_probe({torch::stack(inputs), labels}, config.probe);
    acc["gt"] = train_probe({torch::stack(gts), labels}, config.probe);
    acc["ulfs"] = train_probe({torch::stack(ulfs), labels}, config.probe);

    TsneOptions topts;
    topts.perplexity = config.perplexity;
    topts.seed = config.projection_seed;
    const auto coords = tsne(points, topts);
    for (size_t i = 0; i < members.size(); ++i) {
      report.projection.push_back({members[i]->stem, m, members[i]->task_id, coords[i][0], coords[i][1]});
    }
  }
  return report;
}

ProbeReport probe_ulfs(const fs::path& checkpoint, const ProbeConfig& config) {
  if (!fs::exists(checkpoint)) throw CheckpointError("checkpoint not found: " + checkpoint.string());
  auto model = load_model(checkpoint);
  model->eval();
  return probe_ulfs(model, config);
}

void write_report(std::ostream& os, const ProbeReport& report) {
  os << std::setprecision(10);
  os << "# probe report: accuracy is held-out; ulfs = deepest latent, spatially averaged\n";
  os << "samples\t" << report.samples << "\n\n[accuracy]\n";
  os << "modality\tsource\taccuracy\ttrain_accuracy\ttrain\ttest\tclasses\n";
  for (const auto& [m, sources] : report.accuracy) {
    for (const char* src : {"input", "gt", "ulfs"}) {
      const auto& r = sources.at(src);
      os << modality_name(m) << '\t' << src << '\t' << r.accuracy << '\t' << r.train_accuracy << '\t'
         << r.train_size << '\t' << r.test_size << '\t' << r.classes << '\n';
    }
  }
  for (const auto& [m, d] : report.divergence) {
    os << "\n[divergence " << modality_name(m) << "]\ntask";
    for (int t : d.tasks) os << '\t' << t;
    os << '\n';
    for (size_t i = 0; i < d.tasks.size(); ++i) {
      os << d.tasks[i];
      for (double v : d.values[i]) os << '\t' << v;
      os << '\n';
    }
    os << "mean_off_diagonal\t" << d.mean_off_diagonal() << "\nskipped_dimensions\t" << d.skipped_dimensions
       << '\n';
  }
}

void write_projection_csv(std::ostream& os, const ProbeReport& report) {
  os << std::setprecision(10) << "stem,modality,task,x,y\n";
  for (const auto& p : report.projection) {
    os << p.stem << ',' << modality_name(p.modality) << ',' << p.task_id << ',' << p.x << ',' << p.y << '\n';
  }
}

}  // namespace lure::probe
