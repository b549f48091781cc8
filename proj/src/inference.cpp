#include "lure/inference.hpp"

#include <algorithm>
#include <fstream>

#include "lure/datagen.hpp"
#include "lure/error.hpp"

namespace fs = std::filesystem;

namespace lure::inference {

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

ImageArray fuse(LureModel& model, const FusionRequest& request, std::string_view ir_prompt,
                std::string_view vi_prompt, FusionTrace* trace) {
  const auto& ir = request.infrared;
  const auto& vi = request.visible;
  if (!ir.defined() || !vi.defined()) throw InputError("fusion needs both an infrared and a visible image");
  if (ir.channels() != 1) throw ShapeError("infrared image must have 1 channel");
  if (vi.channels() != 3) throw ShapeError("visible image must have 3 channels");
  if (ir.height() != vi.height() || ir.width() != vi.width()) {
    throw ShapeError("infrared " + std::to_string(ir.height()) + "x" + std::to_string(ir.width()) +
                     " and visible " + std::to_string(vi.height()) + "x" + std::to_string(vi.width()) +
                     " images differ in size");
  }
  const auto& catalog = model->catalog();
  const size_t ir_row = catalog.resolve(ir_prompt);
  const size_t vi_row = catalog.resolve(vi_prompt);

  const auto multiple = model->config().encoder.spatial_multiple();
  const auto ir_pad = pad_to_multiple(ir.tensor(), multiple);
  const auto vi_pad = pad_to_multiple(vi.tensor(), multiple);
  if (trace) {
    trace->ir_prompt = ir_row;
    trace->vi_prompt = vi_row;
    trace->ir_task = catalog.entry(ir_row).task_id;
    trace->vi_task = catalog.entry(vi_row).task_id;
    trace->padded_height = ir_pad.pixels.size(1);
    trace->padded_width = ir_pad.pixels.size(2);
  }

  torch::NoGradGuard guard;
  const auto z_ir = model->encoder->forward(ir_pad.pixels.unsqueeze(0),
                                            model->describe({static_cast<int64_t>(ir_row)}), Modality::kInfrared);
  const auto z_vi = model->encoder->forward(vi_pad.pixels.unsqueeze(0),
                                            model->describe({static_cast<int64_t>(vi_row)}), Modality::kVisible);
  const auto out = model->decoder->forward(model->fusion->forward(z_vi, z_ir)).squeeze(0);
  const auto cropped = crop_to(out, ir.height(), ir.width());
  return ImageArray::from_unclamped(torch::nan_to_num(cropped, 0.0, 1.0, 0.0));
}

BatchReport fuse_batch(LureModel& model, const fs::path& ir_dir, const fs::path& vi_dir,
                       std::string_view ir_prompt, std::string_view vi_prompt, const fs::path& out_dir) {
  for (const auto& dir : {ir_dir, vi_dir}) {
    if (!fs::is_directory(dir)) throw InputError("not a directory: " + dir.string());
  }
  // Validate prompts once so a typo fails the whole run instead of every row.
  model->catalog().resolve(ir_prompt);
  model->catalog().resolve(vi_prompt);
  fs::create_directories(out_dir);

  BatchReport report;
  std::vector<std::string> unmatched;
  const auto pairs = datagen::match_stems(ir_dir, vi_dir, &unmatched);
  for (const auto& [ir_path, vi_path] : pairs) {
    ManifestRow row;
    row.stem = vi_path.stem().string();
    try {
      FusionRequest request{load_png(ir_path, Modality::kInfrared), load_png(vi_path, Modality::kVisible)};
      const auto fused = fuse(model, request, ir_prompt, vi_prompt);
      row.output = row.stem + ".png";
      save_png(out_dir / row.output, fused);
      row.status = "ok";
      ++report.fused;
    } catch (const InputError& e) {
      row.status = std::string("error: ") + e.what();
      ++report.failed;
    }
    report.rows.push_back(row);
  }
  for (const auto& stem : unmatched) report.rows.push_back({stem, "unmatched", ""});
  std::sort(report.rows.begin(), report.rows.end(),
            [](const ManifestRow& a, const ManifestRow& b) { return a.stem < b.stem; });

  std::ofstream mf(out_dir / kFuseManifest);
  if (!mf) throw InputError("cannot write " + (out_dir / kFuseManifest).string());
  mf << "stem,ir_prompt,vi_prompt,output,status,EN,AG,SD,SF,CC,SCD,PSNR,SSIM,MS_SSIM\n";
  for (const auto& r : report.rows) {
    mf << csv_field(r.stem) << ',' << csv_field(std::string(ir_prompt)) << ',' << csv_field(std::string(vi_prompt))
       << ',' << csv_field(r.output) << ',' << csv_field(r.status) << ",,,,,,,,,\n";
  }
  return report;
}

}  // namespace lure::inference
