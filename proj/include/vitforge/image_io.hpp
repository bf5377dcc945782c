#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "vitforge/tensor.hpp"

namespace vitforge {

struct ImageInfo {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;
};

/// True when PNG files can be decoded in this build.
bool png_supported();

/// Reads only the header of a PPM (P6), PGM (P5) or PNG file.
ImageInfo probe_image(const std::filesystem::path& path);

/// Decodes a file to a 3×H×W tensor with values p/maxval (p/255 for 8-bit).
/// Single-channel images are replicated across the three channels.
Tensor<float> decode_image(const std::filesystem::path& path);

/// As decode_image, from bytes already in memory. `name` is used in errors.
Tensor<float> decode_image_bytes(std::span<const std::uint8_t> bytes, std::string_view name);

/// Writes a C×H×W tensor in [0,1] as binary PGM (C=1) or PPM (C=3), rounding
/// to 8 bits.
void write_pnm(const std::filesystem::path& path, const Tensor<float>& image);

/// Raw-tensor sidecar: rank and dims as 64-bit little-endian unsigned
/// integers, then the data as little-endian 32-bit floats.
void write_raw_tensor(const std::filesystem::path& path, const Tensor<float>& tensor);
Tensor<float> read_raw_tensor(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

}  // namespace vitforge
