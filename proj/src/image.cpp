#include "lure/image.hpp"

#include <algorithm>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "lure/error.hpp"

namespace lure {

int channels_for(Modality m) { return m == Modality::kVisible ? 3 : 1; }

std::string_view modality_name(Modality m) {
  return m == Modality::kVisible ? "vi" : "ir";
}

Modality parse_modality(std::string_view name) {
  if (name == "vi" || name == "visible" || name == "0") return Modality::kVisible;
  if (name == "ir" || name == "infrared" || name == "1") return Modality::kInfrared;
  throw InputError("unknown modality '" + std::string(name) + "' (expected vi or ir)");
}

ImageArray::ImageArray(torch::Tensor chw) {
  if (!chw.defined() || chw.dim() != 3) {
    throw ShapeError("image must be a 3-D channels x height x width tensor");
  }
  const auto c = chw.size(0);
  if (c != 1 && c != 3) {
    throw ShapeError("image must have 1 or 3 channels, got " + std::to_string(c));
  }
  if (chw.size(1) == 0 || chw.size(2) == 0) throw ShapeError("image has zero spatial size");
  chw = chw.detach().to(torch::kFloat32).contiguous();
  if (!torch::isfinite(chw).all().item<bool>()) throw InputError("image has non-finite pixels");
  if (chw.min().item<float>() < 0.0f || chw.max().item<float>() > 1.0f) {
    throw InputError("image pixels must lie in [0, 1]");
  }
  pixels_ = std::move(chw);
}

ImageArray ImageArray::from_unclamped(const torch::Tensor& chw) {
  return ImageArray(torch::nan_to_num(chw.detach().to(torch::kFloat32), 0.0).clamp(0.0, 1.0));
}

ImageArray ImageArray::zeros(int64_t channels, int64_t height, int64_t width) {
  return ImageArray(torch::zeros({channels, height, width}));
}

bool ImageArray::same_shape(const ImageArray& other) const {
  return pixels_.sizes() == other.pixels_.sizes();
}

bool ImageArray::identical(const ImageArray& other) const {
  return same_shape(other) && torch::equal(pixels_, other.pixels_);
}

int64_t round_up(int64_t size, int64_t multiple) {
  return ((size + multiple - 1) / multiple) * multiple;
}

PaddedImage pad_to_multiple(const torch::Tensor& chw, int64_t multiple) {
  PaddedImage out;
  out.original_height = chw.size(-2);
  out.original_width = chw.size(-1);
  out.pad_bottom = round_up(out.original_height, multiple) - out.original_height;
  out.pad_right = round_up(out.original_width, multiple) - out.original_width;
  if (out.pad_bottom == 0 && out.pad_right == 0) {
    out.pixels = chw;
    return out;
  }
  namespace F = torch::nn::functional;
  const bool can_reflect =
      out.pad_bottom < out.original_height && out.pad_right < out.original_width;
  auto batched = chw.dim() == 3 ? chw.unsqueeze(0) : chw;
  auto opts = F::PadFuncOptions({0, out.pad_right, 0, out.pad_bottom});
  if (can_reflect) {
    opts.mode(torch::kReflect);
  } else {
    opts.mode(torch::kReplicate);
  }
  auto padded = F::pad(batched, opts);
  out.pixels = chw.dim() == 3 ? padded.squeeze(0) : padded;
  return out;
}

torch::Tensor crop_to(const torch::Tensor& t, int64_t height, int64_t width) {
  using torch::indexing::Slice;
  return t.index({"...", Slice(0, height), Slice(0, width)});
}

torch::Tensor luma(const torch::Tensor& t) {
  const auto c = t.size(-3);
  if (c == 1) return t;
  if (c != 3) throw ShapeError("luma expects 1 or 3 channels");
  auto ch = t.unbind(-3);
  return (0.299 * ch[0] + 0.587 * ch[1] + 0.114 * ch[2]).unsqueeze(-3);
}

ImageArray load_png(const std::filesystem::path& path, Modality m) {
  cv::Mat raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (raw.empty()) throw InputError("cannot read image: " + path.string());
  if (raw.depth() == CV_16U) raw.convertTo(raw, CV_8U, 1.0 / 257.0);
  if (raw.depth() != CV_8U) throw InputError("unsupported pixel depth in " + path.string());
  if (raw.channels() == 4) cv::cvtColor(raw, raw, cv::COLOR_BGRA2BGR);

  cv::Mat converted;
  if (m == Modality::kInfrared) {
    if (raw.channels() == 3) {
      cv::cvtColor(raw, converted, cv::COLOR_BGR2GRAY);
    } else {
      converted = raw;
    }
  } else {
    if (raw.channels() == 1) {
      cv::cvtColor(raw, converted, cv::COLOR_GRAY2RGB);
    } else {
      cv::cvtColor(raw, converted, cv::COLOR_BGR2RGB);
    }
  }
  converted = converted.clone();
  const int c = converted.channels();
  auto hwc = torch::from_blob(converted.data, {converted.rows, converted.cols, c}, torch::kUInt8);
  auto chw = hwc.permute({2, 0, 1}).to(torch::kFloat32).div(255.0).contiguous();
  return ImageArray(chw);
}

void save_png(const std::filesystem::path& path, const ImageArray& image) {
  auto bytes = image.tensor().mul(255.0).round().clamp(0, 255).to(torch::kUInt8);
  auto hwc = bytes.permute({1, 2, 0}).contiguous();
  const int c = static_cast<int>(image.channels());
  cv::Mat mat(static_cast<int>(image.height()), static_cast<int>(image.width()),
              c == 3 ? CV_8UC3 : CV_8UC1, hwc.data_ptr<uint8_t>());
  cv::Mat out;
  if (c == 3) {
    cv::cvtColor(mat, out, cv::COLOR_RGB2BGR);
  } else {
    out = mat;
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), out)) throw InputError("cannot write image: " + path.string());
}

std::vector<std::filesystem::path> list_pngs(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> out;
  if (!std::filesystem::is_directory(dir)) return out;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    auto ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
    if (ext == ".png") out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace lure
