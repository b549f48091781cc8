#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include <torch/torch.h>

namespace lure {

// m = 0 visible, m = 1 infrared.
enum class Modality : int { kVisible = 0, kInfrared = 1 };

int channels_for(Modality m);
std::string_view modality_name(Modality m);  // "vi" / "ir"
Modality parse_modality(std::string_view name);

/// A single image, channels x height x width, float32 values in [0, 1].
/// Visible images carry 3 channels, infrared images 1.
class ImageArray {
 public:
  ImageArray() = default;
  /// Validates rank, channel count and value range; throws ShapeError/InputError.
  explicit ImageArray(torch::Tensor chw);

  /// Clamps to [0, 1] instead of rejecting out-of-range values.
  static ImageArray from_unclamped(const torch::Tensor& chw);
  static ImageArray zeros(int64_t channels, int64_t height, int64_t width);

  const torch::Tensor& tensor() const { return pixels_; }
  int64_t channels() const { return pixels_.size(0); }
  int64_t height() const { return pixels_.size(1); }
  int64_t width() const { return pixels_.size(2); }
  bool defined() const { return pixels_.defined(); }
  bool same_shape(const ImageArray& other) const;

  /// Bitwise equality of shape and pixel values.
  bool identical(const ImageArray& other) const;

 private:
  torch::Tensor pixels_;
};

/// Image padded on the bottom/right edge to a spatial multiple.
struct PaddedImage {
  torch::Tensor pixels;  // C x H' x W'
  int64_t original_height = 0;
  int64_t original_width = 0;
  int64_t pad_bottom = 0;
  int64_t pad_right = 0;
};

/// Smallest multiple of `multiple` that is >= `size`.
int64_t round_up(int64_t size, int64_t multiple);

/// Reflection padding to the next multiple; falls back to edge replication
/// when the image is too small to reflect.
PaddedImage pad_to_multiple(const torch::Tensor& chw, int64_t multiple);

/// Inverse of pad_to_multiple for a tensor with trailing H, W dims.
torch::Tensor crop_to(const torch::Tensor& t, int64_t height, int64_t width);

/// BT.601 luma for 3-channel input; identity for 1 channel. Works on
/// tensors of shape [..., C, H, W] and returns [..., 1, H, W].
torch::Tensor luma(const torch::Tensor& t);

// 8-bit PNG on disk. Loading converts to the modality's channel count.
ImageArray load_png(const std::filesystem::path& path, Modality m);
void save_png(const std::filesystem::path& path, const ImageArray& image);

/// Sorted list of *.png files in a directory (non-recursive).
std::vector<std::filesystem::path> list_pngs(const std::filesystem::path& dir);

}  // namespace lure
