#include "vitforge/image_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <string>

#include "vitforge/error.hpp"

#ifdef VITFORGE_HAVE_PNG
#include <png.h>
#endif

namespace vitforge {

namespace {

constexpr std::uint8_t kPngSignature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

bool is_png(std::span<const std::uint8_t> bytes) {
  return bytes.size() >= 8 && std::memcmp(bytes.data(), kPngSignature, 8) == 0;
}

struct PnmHeader {
  ImageInfo info;
  std::size_t maxval = 0;
  std::size_t data_offset = 0;
};

/// Parses "P5"/"P6" + width + height + maxval with '#' comments, followed by
/// exactly one whitespace byte before the raster.
PnmHeader parse_pnm_header(std::span<const std::uint8_t> bytes, std::string_view name) {
  auto fail = [&](const std::string& why) -> DecodeError {
    return DecodeError(std::string(name) + ": " + why);
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw fail("unsupported image format (expected binary PGM/PPM or PNG)");
  }
  PnmHeader h;
  h.info.channels = bytes[1] == '5' ? 1 : 3;
  std::size_t pos = 2;
  auto next_field = [&]() -> std::size_t {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    if (pos >= bytes.size() || !std::isdigit(bytes[pos])) throw fail("truncated or corrupt header");
    std::size_t v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos] - '0');
      if (v > (1u << 30)) throw fail("header field out of range");
      ++pos;
    }
    return v;
  };
  h.info.width = next_field();
  h.info.height = next_field();
  h.maxval = next_field();
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw fail("truncated or corrupt header");
  h.data_offset = pos + 1;
  if (h.info.width == 0 || h.info.height == 0) throw fail("zero image extent");
  if (h.maxval == 0 || h.maxval > 65535) throw fail("invalid maxval " + std::to_string(h.maxval));
  return h;
}

Tensor<float> decode_pnm(std::span<const std::uint8_t> bytes, std::string_view name) {
  const PnmHeader h = parse_pnm_header(bytes, name);
  const std::size_t w = h.info.width, ht = h.info.height, c = h.info.channels;
  const std::size_t bps = h.maxval > 255 ? 2 : 1;
  const std::size_t need = w * ht * c * bps;
  if (bytes.size() - h.data_offset < need) {
    throw DecodeError(std::string(name) + ": truncated raster, expected " + std::to_string(need) +
                      " bytes, found " + std::to_string(bytes.size() - h.data_offset));
  }
  const std::uint8_t* raster = bytes.data() + h.data_offset;
  const float maxval = static_cast<float>(h.maxval);
  Tensor<float> out({3, ht, w});
  for (std::size_t y = 0; y < ht; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const std::size_t src_ch = c == 1 ? 0 : ch;
        const std::size_t idx = ((y * w + x) * c + src_ch) * bps;
        const std::size_t p = bps == 1 ? raster[idx] : (raster[idx] << 8 | raster[idx + 1]);
        if (p > h.maxval) throw DecodeError(std::string(name) + ": sample exceeds maxval");
        out.at(ch, y, x) = static_cast<float>(p) / maxval;
      }
  return out;
}

#ifdef VITFORGE_HAVE_PNG
Tensor<float> decode_png(std::span<const std::uint8_t> bytes, std::string_view name) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw DecodeError(std::string(name) + ": " + image.message);
  }
  const bool gray = (image.format & PNG_FORMAT_FLAG_COLOR) == 0;
  image.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    throw DecodeError(std::string(name) + ": " + msg);
  }
  const std::size_t w = image.width, h = image.height, c = gray ? 1 : 3;
  Tensor<float> out({3, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < 3; ++ch)
        out.at(ch, y, x) = buffer[(y * w + x) * c + (c == 1 ? 0 : ch)] / 255.0f;
  return out;
}
#endif

void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

}  // namespace

bool png_supported() {
#ifdef VITFORGE_HAVE_PNG
  return true;
#else
  return false;
#endif
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return bytes;
}

ImageInfo probe_image(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  if (is_png(bytes)) {
#ifdef VITFORGE_HAVE_PNG
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
      throw DecodeError(path.string() + ": " + image.message);
    }
    ImageInfo info{image.width, image.height, (image.format & PNG_FORMAT_FLAG_COLOR) ? 3u : 1u};
    png_image_free(&image);
    return info;
#else
    throw DecodeError(path.string() + ": PNG support not compiled in");
#endif
  }
  return parse_pnm_header(bytes, path.string()).info;
}

Tensor<float> decode_image_bytes(std::span<const std::uint8_t> bytes, std::string_view name) {
  if (is_png(bytes)) {
#ifdef VITFORGE_HAVE_PNG
    return decode_png(bytes, name);
#else
    throw DecodeError(std::string(name) + ": PNG support not compiled in");
#endif
  }
  return decode_pnm(bytes, name);
}

Tensor<float> decode_image(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return decode_image_bytes(bytes, path.string());
}

void write_pnm(const std::filesystem::path& path, const Tensor<float>& image) {
  if (image.rank() != 3 || (image.dim(0) != 1 && image.dim(0) != 3)) {
    throw ShapeError("write_pnm: expected 1×H×W or 3×H×W, got " + shape_str(image.shape()));
  }
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << (c == 1 ? "P5" : "P6") << "\n" << w << " " << h << "\n255\n";
  std::vector<char> raster(c * h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const float v = std::clamp(image.at(ch, y, x), 0.0f, 1.0f);
        raster[(y * w + x) * c + ch] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0f)));
      }
  out.write(raster.data(), static_cast<std::streamsize>(raster.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

void write_raw_tensor(const std::filesystem::path& path, const Tensor<float>& tensor) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  put_u64(out, tensor.rank());
  for (std::size_t d : tensor.shape()) put_u64(out, d);
  for (float v : tensor.data()) {
    const std::uint32_t bits = std::bit_cast<std::uint32_t>(v);
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 4);
  }
  if (!out) throw IoError("write failed for " + path.string());
}

Tensor<float> read_raw_tensor(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  std::size_t pos = 0;
  auto u64 = [&]() {
    if (bytes.size() - pos < 8) throw DecodeError(path.string() + ": truncated raw tensor");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{bytes[pos + i]} << (8 * i);
    pos += 8;
    return v;
  };
  const std::uint64_t rank = u64();
  if (rank == 0 || rank > 8) throw DecodeError(path.string() + ": unsupported rank " + std::to_string(rank));
  Shape shape;
  for (std::uint64_t i = 0; i < rank; ++i) shape.push_back(u64());
  const std::size_t n = shape_numel(shape);
  if ((bytes.size() - pos) != n * 4) {
    throw DecodeError(path.string() + ": payload holds " + std::to_string(bytes.size() - pos) +
                      " bytes, dims " + shape_str(shape) + " need " + std::to_string(n * 4));
  }
  std::vector<float> data(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= std::uint32_t{bytes[pos + 4 * i + b]} << (8 * b);
    data[i] = std::bit_cast<float>(bits);
  }
  return Tensor<float>(std::move(shape), std::move(data));
}

}  // namespace vitforge
