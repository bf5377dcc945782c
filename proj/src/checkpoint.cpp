#include "vitforge/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "vitforge/image_io.hpp"

namespace vitforge {

namespace {

using Kind = CheckpointError::Kind;

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void f32_data(std::span<const float> data) {
    out_.reserve(out_.size() + data.size() * 4);
    for (float v : data) u32(std::bit_cast<std::uint32_t>(v));
  }
  void tensor(const std::string& name, const Tensor<float>& t) {
    u32(static_cast<std::uint32_t>(name.size()));
    bytes(name.data(), name.size());
    u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) u64(d);
    u8(kDtypeFloat32);
    f32_data(t.data());
  }
  std::vector<std::uint8_t>& buffer() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  Reader(std::span<const std::uint8_t> bytes, std::string_view source)
      : bytes_(bytes), source_(source) {}

  std::size_t remaining() const { return bytes_.size() - pos_; }
  std::size_t position() const { return pos_; }

  void need(std::size_t n, const char* what) {
    if (remaining() < n) {
      throw CheckpointError(Kind::truncated, std::string(source_) + ": truncated while reading " +
                                                 what + " at byte " + std::to_string(pos_));
    }
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return bytes_[pos_++];
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{bytes_[pos_ + i]} << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{bytes_[pos_ + i]} << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64(const char* what) { return std::bit_cast<double>(u64(what)); }

  std::pair<std::string, Tensor<float>> tensor(std::size_t trailer) {
    const std::uint32_t len = u32("tensor name length");
    need(len, "tensor name");
    std::string name(reinterpret_cast<const char*>(bytes_.data() + pos_), len);
    pos_ += len;
    const std::uint32_t rank = u32("tensor rank");
    if (rank == 0 || rank > 8) {
      throw CheckpointError(Kind::shape_mismatch, std::string(source_) + ": tensor '" + name +
                                                      "' has unsupported rank " + std::to_string(rank));
    }
    Shape shape;
    std::size_t numel = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const std::uint64_t d = u64("tensor dims");
      if (d == 0 || d > (std::uint64_t{1} << 40) || numel > (std::uint64_t{1} << 40) / d) {
        throw CheckpointError(Kind::shape_mismatch, std::string(source_) + ": tensor '" + name +
                                                        "' has invalid dims");
      }
      numel *= d;
      shape.push_back(d);
    }
    const std::uint8_t dtype = u8("tensor dtype");
    if (dtype != kDtypeFloat32) {
      throw CheckpointError(Kind::bad_dtype, std::string(source_) + ": tensor '" + name +
                                                 "' has unknown dtype tag " + std::to_string(dtype));
    }
    if (remaining() < trailer || remaining() - trailer < numel * 4) {
      throw CheckpointError(Kind::shape_mismatch,
                            std::string(source_) + ": tensor '" + name + "' dims " + shape_str(shape) +
                                " need " + std::to_string(numel * 4) + " payload bytes, only " +
                                std::to_string(remaining() > trailer ? remaining() - trailer : 0) +
                                " remain");
    }
    std::vector<float> data(numel);
    for (std::size_t i = 0; i < numel; ++i) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= std::uint32_t{bytes_[pos_ + 4 * i + b]} << (8 * b);
      data[i] = std::bit_cast<float>(bits);
    }
    pos_ += numel * 4;
    return {std::move(name), Tensor<float>(std::move(shape), std::move(data))};
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::string_view source_;
  std::size_t pos_ = 0;
};

constexpr char kMagic[4] = {'V', 'I', 'T', 'C'};
constexpr std::size_t kChecksumBytes = 8;

}  // namespace

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& checkpoint) {
  const ViTConfig& c = checkpoint.config;
  Writer w;
  w.bytes(kMagic, 4);
  w.u32(kCheckpointVersion);
  for (std::uint32_t v : {c.image_size, c.channels, c.patch_size, c.hidden_dim, c.mlp_dim,
                          c.num_heads, c.num_layers, c.num_classes})
    w.u32(v);
  w.u64(checkpoint.params.size());
  for (const auto& [name, p] : checkpoint.params) w.tensor(name, p.value);
  if (checkpoint.optimizer) {
    const auto& s = *checkpoint.optimizer;
    w.u8(1);
    w.u64(s.step);
    for (double v : {s.config.lr, s.config.beta1, s.config.beta2, s.config.eps, s.config.weight_decay})
      w.f64(v);
    w.u64(s.m.size() + s.v.size());
    // "m/..." sorts before "v/...", keeping the section in sorted name order.
    for (const auto& [name, t] : s.m) w.tensor("m/" + name, t);
    for (const auto& [name, t] : s.v) w.tensor("v/" + name, t);
  } else {
    w.u8(0);
  }
  w.u64(fnv1a64(w.buffer()));
  return std::move(w.buffer());
}

Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes, std::string_view source) {
  const std::string src(source);
  if (bytes.size() < 4) throw CheckpointError(Kind::truncated, src + ": file too short for magic");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw CheckpointError(Kind::bad_magic, src + ": not a checkpoint (bad magic)");
  }
  Reader r(bytes, source);
  r.u32("magic");
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError(Kind::unsupported_version,
                          src + ": unsupported format version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ViTConfig& c = ckpt.config;
  for (std::uint32_t* field : {&c.image_size, &c.channels, &c.patch_size, &c.hidden_dim,
                               &c.mlp_dim, &c.num_heads, &c.num_layers, &c.num_classes})
    *field = r.u32("config");

  const std::uint64_t count = r.u64("tensor count");
  std::vector<std::pair<std::string, Tensor<float>>> tensors;
  for (std::uint64_t i = 0; i < count; ++i) tensors.push_back(r.tensor(kChecksumBytes + 1));

  const std::uint8_t has_optimizer = r.u8("optimizer flag");
  std::optional<AdamWState<float>> optimizer;
  std::vector<std::pair<std::string, Tensor<float>>> moments;
  if (has_optimizer > 1) {
    throw CheckpointError(Kind::truncated, src + ": corrupt optimizer flag");
  }
  if (has_optimizer == 1) {
    AdamWState<float> s;
    s.step = r.u64("optimizer step");
    s.config.lr = r.f64("optimizer lr");
    s.config.beta1 = r.f64("optimizer beta1");
    s.config.beta2 = r.f64("optimizer beta2");
    s.config.eps = r.f64("optimizer eps");
    s.config.weight_decay = r.f64("optimizer weight decay");
    const std::uint64_t n = r.u64("optimizer tensor count");
    for (std::uint64_t i = 0; i < n; ++i) moments.push_back(r.tensor(kChecksumBytes));
    optimizer = std::move(s);
  }
  const std::size_t body = r.position();
  const std::uint64_t stored = r.u64("checksum");
  if (r.remaining() != 0) {
    throw CheckpointError(Kind::truncated, src + ": " + std::to_string(r.remaining()) +
                                               " unexpected trailing bytes");
  }
  if (fnv1a64(bytes.subspan(0, body)) != stored) {
    throw CheckpointError(Kind::checksum_mismatch, src + ": checksum mismatch");
  }

  for (auto& [name, t] : tensors) {
    if (ckpt.params.contains(name)) {
      throw CheckpointError(Kind::config_mismatch, src + ": duplicate tensor '" + name + "'");
    }
    ckpt.params.add(name, std::move(t));
  }
  try {
    validate_params(ckpt.params, ckpt.config);
  } catch (const ShapeError& e) {
    throw CheckpointError(Kind::shape_mismatch, src + ": " + e.what());
  } catch (const ValidationError& e) {
    throw CheckpointError(Kind::config_mismatch, src + ": " + e.what());
  }
  if (optimizer) {
    for (auto& [name, t] : moments) {
      const bool is_m = name.starts_with("m/");
      if (!is_m && !name.starts_with("v/")) {
        throw CheckpointError(Kind::config_mismatch, src + ": bad optimizer tensor name '" + name + "'");
      }
      std::string param = name.substr(2);
      if (!ckpt.params.contains(param) || ckpt.params.value(param).shape() != t.shape()) {
        throw CheckpointError(Kind::shape_mismatch,
                              src + ": optimizer tensor '" + name + "' does not match any parameter");
      }
      (is_m ? optimizer->m : optimizer->v).emplace(std::move(param), std::move(t));
    }
    ckpt.optimizer = std::move(optimizer);
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(checkpoint);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError(Kind::io, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError(Kind::io, "write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::vector<std::uint8_t> bytes;
  try {
    bytes = read_file(path);
  } catch (const IoError& e) {
    throw CheckpointError(Kind::io, e.what());
  }
  return parse_checkpoint(bytes, path.string());
}

Checkpoint replace_head(const Checkpoint& checkpoint, std::uint32_t num_classes, Rng& rng) {
  if (num_classes < 2) {
    throw ValidationError("replace_head: need at least 2 classes, got " + std::to_string(num_classes));
  }
  Checkpoint out;
  out.config = checkpoint.config;
  out.config.num_classes = num_classes;
  for (const auto& [name, p] : checkpoint.params)
    if (!param_names::is_head(name)) out.params.add(name, p.value, p.trainable);
  const std::size_t d = checkpoint.config.hidden_dim;
  Tensor<float> weight({d, num_classes});
  for (float& v : weight.data()) v = static_cast<float>(rng.truncated_normal(0.02));
  out.params.add(std::string(param_names::kHeadWeight), std::move(weight));
  out.params.add(std::string(param_names::kHeadBias), Tensor<float>({num_classes}));
  return out;
}

std::vector<TensorManifestEntry> tensor_manifest(const ModelParams<float>& params) {
  std::vector<TensorManifestEntry> out;
  for (const auto& [name, p] : params) {
    Writer w;
    w.f32_data(p.value.data());
    out.push_back({name, p.value.shape(), fnv1a64(w.buffer())});
  }
  return out;
}

}  // namespace vitforge
