#include "lure/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "lure/error.hpp"

namespace lure {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

namespace {

constexpr char kMagic[8] = {'L', 'U', 'R', 'E', 'C', 'K', 'P', 'T'};

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

void put_string(std::string& out, const std::string& s) {
  put<uint32_t>(out, static_cast<uint32_t>(s.size()));
  out.append(s);
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::string get_string() {
    const auto n = get<uint32_t>();
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  const char* take(size_t n) {
    need(n);
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(size_t n) const {
    if (pos_ + n > bytes_.size()) throw CheckpointError("checkpoint is truncated");
  }
  const std::string& bytes_;
  size_t pos_ = 0;
};

uint8_t dtype_code(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return 1;
    case torch::kFloat64: return 2;
    case torch::kInt64: return 3;
    default: throw CheckpointError("checkpoint: unsupported array dtype");
  }
}

torch::ScalarType dtype_from(uint8_t code) {
  switch (code) {
    case 1: return torch::kFloat32;
    case 2: return torch::kFloat64;
    case 3: return torch::kInt64;
    default: throw CheckpointError("checkpoint: unknown dtype code " + std::to_string(code));
  }
}

void put_arrays(std::string& out, const std::vector<std::pair<std::string, torch::Tensor>>& arrays) {
  put<uint32_t>(out, static_cast<uint32_t>(arrays.size()));
  for (const auto& [name, tensor] : arrays) {
    auto t = tensor.detach().cpu().contiguous();
    put_string(out, name);
    put<uint8_t>(out, dtype_code(t.scalar_type()));
    put<uint8_t>(out, static_cast<uint8_t>(t.dim()));
    for (auto d : t.sizes()) put<int64_t>(out, d);
    out.append(static_cast<const char*>(t.data_ptr()), t.numel() * t.element_size());
  }
}

}  // namespace

void Checkpoint::add(std::string name, const torch::Tensor& t) {
  arrays.emplace_back(std::move(name), t.detach().cpu().contiguous().clone());
}

const torch::Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : arrays) {
    if (n == name) return &t;
  }
  return nullptr;
}

const std::string& Checkpoint::meta_at(const std::string& key) const {
  auto it = meta.find(key);
  if (it == meta.end()) throw CheckpointError("checkpoint: missing metadata key '" + key + "'");
  return it->second;
}

std::string Checkpoint::serialize() const {
  std::string out(kMagic, sizeof(kMagic));
  put<uint32_t>(out, kVersion);
  put<uint32_t>(out, static_cast<uint32_t>(meta.size()));
  for (const auto& [k, v] : meta) {
    put_string(out, k);
    put_string(out, v);
  }
  put_arrays(out, arrays);
  return out;
}

std::string Checkpoint::array_payload() const {
  std::string out;
  put_arrays(out, arrays);
  return out;
}

Checkpoint Checkpoint::deserialize(const std::string& bytes) {
  Reader r(bytes);
  if (std::memcmp(r.take(sizeof(kMagic)), kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError("not a checkpoint file (bad magic)");
  }
  const auto version = r.get<uint32_t>();
  if (version != kVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  const auto n_meta = r.get<uint32_t>();
  for (uint32_t i = 0; i < n_meta; ++i) {
    auto k = r.get_string();
    ck.meta[k] = r.get_string();
  }
  const auto n_arrays = r.get<uint32_t>();
  for (uint32_t i = 0; i < n_arrays; ++i) {
    auto name = r.get_string();
    const auto dtype = dtype_from(r.get<uint8_t>());
    const auto ndim = r.get<uint8_t>();
    std::vector<int64_t> dims(ndim);
    int64_t numel = 1;
    for (auto& d : dims) {
      d = r.get<int64_t>();
      if (d < 0) throw CheckpointError("checkpoint: negative dimension");
      numel *= d;
    }
    auto t = torch::empty(dims, torch::TensorOptions().dtype(dtype));
    const size_t nbytes = static_cast<size_t>(numel) * t.element_size();
    std::memcpy(t.data_ptr(), r.take(nbytes), nbytes);
    ck.arrays.emplace_back(std::move(name), std::move(t));
  }
  if (!r.done()) throw CheckpointError("checkpoint has trailing bytes");
  return ck;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto bytes = serialize();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return deserialize(ss.str());
}

uint64_t fnv1a(const void* data, size_t size, uint64_t hash) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < size; ++i) {
    hash ^= p[i];
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

uint64_t parameter_checksum(const torch::nn::Module& module, const std::vector<std::string>& prefixes) {
  uint64_t hash = 0xcbf29ce484222325ULL;
  for (const auto& item : module.named_parameters()) {
    bool selected = prefixes.empty();
    for (const auto& p : prefixes) selected = selected || item.key().rfind(p, 0) == 0;
    if (!selected) continue;
    auto t = item.value().detach().cpu().contiguous();
    hash = fnv1a(item.key().data(), item.key().size(), hash);
    hash = fnv1a(t.data_ptr(), t.numel() * t.element_size(), hash);
  }
  return hash;
}

}  // namespace lure
