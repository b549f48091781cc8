#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

namespace lure {

/// Versioned key -> array container used for every checkpoint.
///
/// Layout (little-endian):
///   "LURECKPT"            8-byte magic
///   u32 version           currently 1
///   u32 meta_count        then per entry: u32 len, key bytes, u32 len, value bytes
///   u32 array_count       then per entry: u32 len, name bytes, u8 dtype
///                         (1 = f32, 2 = f64, 3 = i64), u8 ndim, i64 dims[ndim],
///                         raw contiguous data
/// Metadata entries are written in key order, arrays in insertion order, so
/// identical contents always produce identical bytes.
struct Checkpoint {
  static constexpr uint32_t kVersion = 1;

  std::map<std::string, std::string> meta;
  std::vector<std::pair<std::string, torch::Tensor>> arrays;

  void add(std::string name, const torch::Tensor& t);
  /// nullptr when absent.
  const torch::Tensor* find(const std::string& name) const;
  const std::string& meta_at(const std::string& key) const;  // throws CheckpointError

  std::string serialize() const;
  static Checkpoint deserialize(const std::string& bytes);

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

  /// Bytes of the array section only (names, shapes, data).
  std::string array_payload() const;
};

/// FNV-1a 64-bit hash.
uint64_t fnv1a(const void* data, size_t size, uint64_t seed = 0xcbf29ce484222325ULL);

/// Hash over the names and bytes of the parameters whose names start with any
/// of `prefixes` (all parameters when empty).
uint64_t parameter_checksum(const torch::nn::Module& module, const std::vector<std::string>& prefixes = {});

}  // namespace lure
