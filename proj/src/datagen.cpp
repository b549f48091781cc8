#include "lure/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "lure/error.hpp"
#include "lure/rng.hpp"

namespace lure::datagen {
namespace fs = std::filesystem;
namespace F = torch::nn::functional;

namespace {

constexpr DegradationKind kAllKinds[] = {DegradationKind::kLL,  DegradationKind::kHZ,
                                         DegradationKind::kOE,  DegradationKind::kLC,
                                         DegradationKind::kSR4, DegradationKind::kSR8,
                                         DegradationKind::kPD};

torch::Tensor bicubic_resize(const torch::Tensor& chw, int64_t h, int64_t w, bool antialias) {
  auto opts = F::InterpolateFuncOptions()
                  .size(std::vector<int64_t>{h, w})
                  .mode(torch::kBicubic)
                  .align_corners(false)
                  .antialias(antialias);
  return F::interpolate(chw.unsqueeze(0), opts).squeeze(0);
}

// Smooth field in [0, 1]: coarse uniform noise upsampled bicubically and
// rescaled to span the full unit interval.
torch::Tensor smooth_field(int64_t h, int64_t w, int64_t coarse, at::Generator& gen) {
  auto noise = torch::rand({1, coarse, coarse}, gen);
  auto field = bicubic_resize(noise, h, w, false);
  auto lo = field.min();
  auto hi = field.max();
  auto span = hi - lo;
  if (span.item<float>() <= 1e-6f) return torch::full({1, h, w}, 0.5f);
  return (field - lo) / span;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw InputError("cannot open " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

int task_id(DegradationKind kind) {
  switch (kind) {
    case DegradationKind::kPD: return 0;
    case DegradationKind::kLL: return 1;
    case DegradationKind::kHZ: return 2;
    case DegradationKind::kOE: return 3;
    case DegradationKind::kLC: return 4;
    case DegradationKind::kSR4: return 5;
    case DegradationKind::kSR8: return 6;
  }
  throw ConfigError("unknown degradation kind");
}

DegradationKind kind_from_task(int id) {
  for (auto k : kAllKinds) {
    if (task_id(k) == id) return k;
  }
  throw ConfigError("no degradation kind for task id " + std::to_string(id));
}

std::string_view kind_name(DegradationKind kind) {
  switch (kind) {
    case DegradationKind::kLL: return "LL";
    case DegradationKind::kHZ: return "HZ";
    case DegradationKind::kOE: return "OE";
    case DegradationKind::kLC: return "LC";
    case DegradationKind::kSR4: return "SR4";
    case DegradationKind::kSR8: return "SR8";
    case DegradationKind::kPD: return "PD";
  }
  return "?";
}

DegradationKind parse_kind(std::string_view name) {
  std::string upper(name);
  std::transform(upper.begin(), upper.end(), upper.begin(), ::toupper);
  for (auto k : kAllKinds) {
    if (kind_name(k) == upper) return k;
  }
  throw ConfigError("unknown degradation kind '" + std::string(name) +
                    "' (expected LL, HZ, OE, LC, SR4, SR8 or PD)");
}

std::vector<DegradationKind> parse_kinds(std::string_view csv) {
  std::vector<DegradationKind> out;
  std::string item;
  std::stringstream ss{std::string(csv)};
  while (std::getline(ss, item, ',')) {
    item.erase(std::remove_if(item.begin(), item.end(), ::isspace), item.end());
    if (!item.empty()) out.push_back(parse_kind(item));
  }
  return out;
}

std::optional<Modality> modality_of(DegradationKind kind) {
  switch (kind) {
    case DegradationKind::kLL:
    case DegradationKind::kHZ:
    case DegradationKind::kOE: return Modality::kVisible;
    case DegradationKind::kLC:
    case DegradationKind::kSR4:
    case DegradationKind::kSR8: return Modality::kInfrared;
    case DegradationKind::kPD: return std::nullopt;
  }
  return std::nullopt;
}

DegradationSpec DegradationSpec::defaults(DegradationKind kind) {
  DegradationSpec spec;
  spec.kind = kind;
  return spec;
}

int DegradationSpec::sr_scale() const {
  if (kind == DegradationKind::kSR4) return 4;
  if (kind == DegradationKind::kSR8) return 8;
  return 0;
}

std::vector<DegradationKind> all_real_kinds() {
  return {DegradationKind::kLL, DegradationKind::kHZ,  DegradationKind::kOE,
          DegradationKind::kLC, DegradationKind::kSR4, DegradationKind::kSR8};
}

std::vector<DegradationSpec> default_specs(const std::vector<DegradationKind>& kinds) {
  std::vector<DegradationSpec> specs;
  for (auto k : kinds) specs.push_back(DegradationSpec::defaults(k));
  return specs;
}

ImageArray apply_degradation(const ImageArray& clean, const DegradationSpec& spec, uint64_t seed) {
  if (!clean.defined()) throw InputError("apply_degradation: undefined image");
  if (spec.kind == DegradationKind::kPD) {
    throw ConfigError("apply_degradation: PD is the identity task and takes no degradation");
  }
  Rng rng(derive_seed(seed, static_cast<uint64_t>(task_id(spec.kind))));
  const auto& v = clean.tensor();
  torch::Tensor out;
  switch (spec.kind) {
    case DegradationKind::kLL: {
      const double gamma = rng.uniform(spec.gamma.lo, spec.gamma.hi);
      const double scale = rng.uniform(spec.brightness.lo, spec.brightness.hi);
      out = v.pow(gamma).mul(scale);
      break;
    }
    case DegradationKind::kHZ: {
      const double airlight = rng.uniform(spec.airlight.lo, spec.airlight.hi);
      auto gen = make_generator(rng.next());
      auto field = smooth_field(clean.height(), clean.width(), 4, gen);
      auto tr = spec.transmission.lo + (spec.transmission.hi - spec.transmission.lo) * field;
      out = v * tr + airlight * (1.0 - tr);
      break;
    }
    case DegradationKind::kOE: {
      const double gamma = rng.uniform(spec.gamma.lo, spec.gamma.hi);
      out = v.pow(1.0 / gamma);
      break;
    }
    case DegradationKind::kLC: {
      const double factor = rng.uniform(spec.contrast.lo, spec.contrast.hi);
      auto mean = v.mean({1, 2}, /*keepdim=*/true);
      out = (v - mean) * factor + mean;
      break;
    }
    case DegradationKind::kSR4:
    case DegradationKind::kSR8: {
      const int k = spec.sr_scale();
      const auto h = std::max<int64_t>(1, (clean.height() + k / 2) / k);
      const auto w = std::max<int64_t>(1, (clean.width() + k / 2) / k);
      auto small = bicubic_resize(v, h, w, true);
      out = bicubic_resize(small, clean.height(), clean.width(), false);
      break;
    }
    case DegradationKind::kPD: break;
  }
  return ImageArray(out.clamp(0.0, 1.0).contiguous());
}

RestorationSample make_pseudo_sample(const ImageArray& clean, Modality modality, std::string stem) {
  if (clean.channels() != channels_for(modality)) {
    throw ShapeError("pseudo sample: channel count does not match modality");
  }
  return RestorationSample{clean, clean, modality, kPseudoTaskId, std::move(stem)};
}

std::vector<RestorationSample> build_stage1_samples(
    const std::vector<std::pair<std::string, ImageArray>>& cleans, Modality modality,
    const std::vector<DegradationSpec>& specs, uint64_t seed, size_t variants) {
  std::vector<RestorationSample> out;
  for (const auto& spec : specs) {
    if (spec.kind == DegradationKind::kPD) {
      throw ConfigError("PD must not be listed as a degradation; it is added automatically");
    }
  }
  for (size_t i = 0; i < cleans.size(); ++i) {
    const auto& [stem, clean] = cleans[i];
    for (size_t j = 0; j < specs.size(); ++j) {
      if (modality_of(specs[j].kind) != modality) continue;
      for (size_t v = 0; v < variants; ++v) {
        const auto s = derive_seed(seed, static_cast<uint64_t>(modality) * 1000003ULL + i,
                                   static_cast<uint64_t>(task_id(specs[j].kind)), v);
        out.push_back(RestorationSample{apply_degradation(clean, specs[j], s), clean, modality,
                                        task_id(specs[j].kind), stem});
      }
    }
    out.push_back(make_pseudo_sample(clean, modality, stem));
  }
  return out;
}

std::vector<RestorationSample> build_stage1_dataset(const std::vector<CleanSource>& sources,
                                                    const std::vector<DegradationSpec>& specs,
                                                    uint64_t seed) {
  std::vector<RestorationSample> out;
  for (const auto& source : sources) {
    const auto files = list_pngs(source.directory);
    if (files.empty()) {
      throw InputError("no PNG images in " + source.directory.string());
    }
    std::vector<std::pair<std::string, ImageArray>> cleans;
    for (const auto& f : files) cleans.emplace_back(f.stem().string(), load_png(f, source.modality));
    auto part = build_stage1_samples(cleans, source.modality, specs, seed);
    out.insert(out.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  return out;
}

std::vector<std::pair<fs::path, fs::path>> match_stems(const fs::path& ir_dir, const fs::path& vi_dir,
                                                       std::vector<std::string>* unmatched) {
  std::map<std::string, fs::path> ir;
  std::map<std::string, fs::path> vi;
  for (const auto& p : list_pngs(ir_dir)) ir[p.stem().string()] = p;
  for (const auto& p : list_pngs(vi_dir)) vi[p.stem().string()] = p;

  std::vector<std::pair<fs::path, fs::path>> out;
  for (const auto& [stem, path] : vi) {
    auto it = ir.find(stem);
    if (it == ir.end()) {
      if (!unmatched) throw InputError("stem '" + stem + "' has a visible image but no infrared image");
      unmatched->push_back(stem);
      continue;
    }
    out.emplace_back(it->second, path);
  }
  for (const auto& [stem, path] : ir) {
    if (vi.count(stem)) continue;
    if (!unmatched) throw InputError("stem '" + stem + "' has an infrared image but no visible image");
    unmatched->push_back(stem);
  }
  return out;
}

std::vector<FusionPair> build_stage2_dataset(const fs::path& root, int64_t multiple) {
  const auto ir_dir = root / "ir" / "pairs";
  const auto vi_dir = root / "vi" / "pairs";
  if (!fs::is_directory(ir_dir) || !fs::is_directory(vi_dir)) {
    throw InputError("expected " + ir_dir.string() + " and " + vi_dir.string());
  }
  std::vector<FusionPair> out;
  for (const auto& [ir_path, vi_path] : match_stems(ir_dir, vi_dir)) {
    auto ir = load_png(ir_path, Modality::kInfrared);
    auto vi = load_png(vi_path, Modality::kVisible);
    if (ir.height() != vi.height() || ir.width() != vi.width()) {
      throw ShapeError("pair '" + ir_path.stem().string() + "' has mismatched spatial sizes");
    }
    auto pir = pad_to_multiple(ir.tensor(), multiple);
    auto pvi = pad_to_multiple(vi.tensor(), multiple);
    FusionPair pair;
    pair.infrared = ImageArray(pir.pixels.contiguous());
    pair.visible = ImageArray(pvi.pixels.contiguous());
    pair.stem = ir_path.stem().string();
    pair.original_height = pir.original_height;
    pair.original_width = pir.original_width;
    pair.pad_bottom = pir.pad_bottom;
    pair.pad_right = pir.pad_right;
    out.push_back(std::move(pair));
  }
  return out;
}

void save_dataset(const fs::path& root, const std::vector<RestorationSample>& samples) {
  fs::create_directories(root / "samples");
  std::ofstream manifest(root / kManifestName);
  if (!manifest) throw InputError("cannot write manifest under " + root.string());
  manifest << "# stem\ttask_id\tmodality\tdegraded\tclean\n";
  char index[16];
  for (size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    std::snprintf(index, sizeof(index), "%05zu", i);
    const std::string base = std::string("samples/") + index + "_" + s.stem + "_t" +
                             std::to_string(s.task_id) + "_" + std::string(modality_name(s.modality));
    const std::string deg = base + "_deg.png";
    const std::string cln = base + "_clean.png";
    save_png(root / deg, s.degraded);
    save_png(root / cln, s.clean);
    manifest << s.stem << '\t' << s.task_id << '\t' << static_cast<int>(s.modality) << '\t' << deg
             << '\t' << cln << '\n';
  }
}

std::vector<RestorationSample> load_dataset(const fs::path& root) {
  std::stringstream lines(read_text(root / kManifestName));
  std::vector<RestorationSample> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(lines, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::stringstream fields(line);
    std::string stem, task, mod, deg, cln;
    if (!std::getline(fields, stem, '\t') || !std::getline(fields, task, '\t') ||
        !std::getline(fields, mod, '\t') || !std::getline(fields, deg, '\t') ||
        !std::getline(fields, cln, '\t')) {
      throw InputError("malformed manifest line " + std::to_string(lineno));
    }
    const auto m = parse_modality(mod);
    RestorationSample s;
    s.stem = stem;
    s.task_id = std::stoi(task);
    s.modality = m;
    s.degraded = load_png(root / deg, m);
    s.clean = load_png(root / cln, m);
    out.push_back(std::move(s));
  }
  return out;
}

torch::Tensor Augment::apply(const torch::Tensor& chw) const {
  using torch::indexing::Slice;
  auto out = chw.index({"...", Slice(top, top + size_h), Slice(left, left + size_w)});
  if (flip) out = out.flip({-1});
  return out.contiguous();
}

Augment draw_augment(int64_t height, int64_t width, int64_t crop, double flip_p, uint64_t seed) {
  Rng rng(seed);
  Augment a;
  a.size_h = crop > 0 ? std::min(crop, height) : height;
  a.size_w = crop > 0 ? std::min(crop, width) : width;
  a.top = static_cast<int64_t>(rng.below(static_cast<uint64_t>(height - a.size_h + 1)));
  a.left = static_cast<int64_t>(rng.below(static_cast<uint64_t>(width - a.size_w + 1)));
  a.flip = rng.bernoulli(flip_p);
  return a;
}

std::pair<ImageArray, ImageArray> render_scene(const SceneOptions& options, uint64_t seed) {
  const auto h = options.height;
  const auto w = options.width;
  Rng rng(seed);
  auto gen = make_generator(derive_seed(seed, 1));

  auto ys = torch::linspace(0.0, 1.0, h).view({h, 1}).expand({h, w});
  auto xs = torch::linspace(0.0, 1.0, w).view({1, w}).expand({h, w});

  // Visible background: two-colour gradient along a random direction with a
  // low-frequency texture and a fine grain.
  const double angle = rng.uniform(0.0, 2.0 * M_PI);
  auto ramp = (std::cos(angle) * (xs - 0.5) + std::sin(angle) * (ys - 0.5)) + 0.5;
  ramp = ramp.clamp(0.0, 1.0);
  auto top = torch::rand({3, 1, 1}, gen) * 0.7 + 0.15;
  auto bottom = torch::rand({3, 1, 1}, gen) * 0.7 + 0.15;
  auto visible = top * (1.0 - ramp) + bottom * ramp;
  auto texture = smooth_field(h, w, 6, gen) - 0.5;
  visible = visible + 0.15 * texture;
  visible = visible + 0.03 * (torch::rand({1, h, w}, gen) - 0.5);

  // Infrared background: its own smooth temperature field.
  auto infrared = 0.25 + 0.2 * smooth_field(h, w, 4, gen);

  // Stripe patch gives both modalities some periodic structure.
  {
    const double freq = rng.uniform(6.0, 14.0);
    const double x0 = rng.uniform(0.0, 0.6), y0 = rng.uniform(0.0, 0.6);
    auto mask = ((xs >= x0) & (xs < x0 + 0.35) & (ys >= y0) & (ys < y0 + 0.35)).to(torch::kFloat32);
    auto stripes = 0.5 + 0.5 * torch::sin(2.0 * M_PI * freq * (xs + ys));
    auto tint = torch::rand({3, 1, 1}, gen) * 0.6 + 0.2;
    visible = visible * (1.0 - mask) + mask * (0.3 * tint + 0.6 * stripes * tint);
    infrared = infrared * (1.0 - mask) + mask * (0.3 + 0.15 * stripes);
  }

  const int objects = 3 + static_cast<int>(rng.below(4));
  for (int k = 0; k < objects; ++k) {
    const double cx = rng.uniform(0.1, 0.9), cy = rng.uniform(0.1, 0.9);
    const double rx = rng.uniform(0.06, 0.22), ry = rng.uniform(0.06, 0.22);
    torch::Tensor mask;
    if (rng.bernoulli(0.5)) {
      mask = (((xs - cx) / rx).pow(2) + ((ys - cy) / ry).pow(2) <= 1.0);
    } else {
      mask = ((xs - cx).abs() <= rx) & ((ys - cy).abs() <= ry);
    }
    auto m = mask.to(torch::kFloat32);
    // Hot objects are bright in infrared and low-contrast in visible light.
    const bool hot = rng.bernoulli(0.5);
    auto color = torch::rand({3, 1, 1}, gen) * 0.8 + 0.1;
    if (hot) color = 0.6 * color + 0.4 * visible.mean({1, 2}, true);
    const double temperature = hot ? rng.uniform(0.75, 0.98) : rng.uniform(0.1, 0.5);
    auto shading = 0.85 + 0.15 * (1.0 - ((xs - cx).pow(2) + (ys - cy).pow(2)).sqrt() / (rx + ry));
    visible = visible * (1.0 - m) + m * color * shading.clamp(0.7, 1.0);
    infrared = infrared * (1.0 - m) + m * temperature * shading.clamp(0.8, 1.0);
  }

  visible = visible.clamp(0.0, 1.0).contiguous();
  infrared = infrared.view({1, h, w}).clamp(0.0, 1.0).contiguous();
  return {ImageArray(visible), ImageArray(infrared)};
}

void synthesize_toy_corpus(const SynthOptions& options) {
  const auto& root = options.root;
  char name[32];
  for (size_t i = 0; i < options.clean_per_modality; ++i) {
    std::snprintf(name, sizeof(name), "scene_%03zu.png", i);
    auto vi_scene = render_scene(options.scene, derive_seed(options.seed, 11, i));
    auto ir_scene = render_scene(options.scene, derive_seed(options.seed, 13, i));
    save_png(root / "vi" / "clean" / name, vi_scene.first);
    save_png(root / "ir" / "clean" / name, ir_scene.second);
  }
  for (size_t i = 0; i < options.fusion_pairs; ++i) {
    std::snprintf(name, sizeof(name), "pair_%03zu.png", i);
    auto [vi, ir] = render_scene(options.scene, derive_seed(options.seed, 17, i));
    save_png(root / "vi" / "pairs" / name, vi);
    save_png(root / "ir" / "pairs" / name, ir);
  }
  const auto kinds = options.kinds.empty() ? all_real_kinds() : options.kinds;
  auto samples = build_stage1_dataset({{Modality::kVisible, root / "vi" / "clean"},
                                       {Modality::kInfrared, root / "ir" / "clean"}},
                                      default_specs(kinds), options.seed);
  save_dataset(root / "stage1", samples);
}

}  // namespace lure::datagen
