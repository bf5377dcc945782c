#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vitforge/train.hpp"
#include "vitforge/vit.hpp"

namespace vitforge {

/// Byte layout (all integers little-endian); see docs/checkpoint_format.md.
///
///   "VITC" | u32 version | 8 × u32 config | u64 tensor count | tensors
///   | u8 has_optimizer [ u64 step | 5 × f64 hyperparameters
///                        | u64 tensor count | tensors ]
///   | u64 FNV-1a of every preceding byte
///
///   tensor = u32 name length | UTF-8 name | u32 rank | rank × u64 dims
///            | u8 dtype (1 = f32) | f32 data
///
/// Tensors are written in sorted name order, so equal states serialize to
/// equal bytes.
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint8_t kDtypeFloat32 = 1;

class CheckpointError : public Error {
 public:
  enum class Kind {
    io,
    truncated,
    bad_magic,
    unsupported_version,
    checksum_mismatch,
    shape_mismatch,
    config_mismatch,
    bad_dtype,
  };

  CheckpointError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

struct Checkpoint {
  ViTConfig config;
  ModelParams<float> params;
  std::optional<AdamWState<float>> optimizer;
};

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& checkpoint);

/// Structural parse, then checksum, then config/shape consistency. Nothing is
/// returned unless all three pass.
Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes, std::string_view source = "checkpoint");

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// New head for `num_classes` classes (truncated-normal weights, zero bias).
/// Backbone tensors are copied unchanged; optimizer state is dropped.
Checkpoint replace_head(const Checkpoint& checkpoint, std::uint32_t num_classes, Rng& rng);

struct TensorManifestEntry {
  std::string name;
  Shape shape;
  std::uint64_t checksum = 0;  // FNV-1a over the tensor's little-endian f32 bytes
};

std::vector<TensorManifestEntry> tensor_manifest(const ModelParams<float>& params);

}  // namespace vitforge
