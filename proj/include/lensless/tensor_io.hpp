#pragma once

#include <png.h>

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "lensless/error.hpp"
#include "lensless/tensor.hpp"

namespace lensless {

// LTNSR1 container: "LTNSR1" | dtype u8 (0x01 = f32 LE) | ndim u8 (= 3) |
// ndim x u32 LE dims (height, width, channels) | raw f32 LE data.
namespace ltnsr {

inline constexpr std::array<char, 6> kMagic = {'L', 'T', 'N', 'S', 'R', '1'};
inline constexpr std::uint8_t kDtypeF32 = 0x01;
inline constexpr std::size_t kHeaderBytes = 6 + 1 + 1 + 3 * 4;

static_assert(std::endian::native == std::endian::little, "LTNSR1 I/O assumes a little-endian host");
static_assert(sizeof(float) == 4);

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xffu));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

template <class T>
std::string encode(const Tensor3<T>& t) {
  std::string out;
  out.reserve(kHeaderBytes + t.size() * 4);
  out.append(kMagic.data(), kMagic.size());
  out.push_back(static_cast<char>(kDtypeF32));
  out.push_back(static_cast<char>(3));
  put_u32(out, static_cast<std::uint32_t>(t.height()));
  put_u32(out, static_cast<std::uint32_t>(t.width()));
  put_u32(out, static_cast<std::uint32_t>(t.channels()));
  const std::size_t base = out.size();
  out.resize(base + t.size() * 4);
  for (std::size_t n = 0; n < t.size(); ++n) {
    const float f = static_cast<float>(t[n]);
    std::memcpy(out.data() + base + 4 * n, &f, 4);
  }
  return out;
}

/// Decodes one tensor from `bytes` starting at `offset`; advances `offset`.
inline Image decode(std::string_view bytes, std::size_t& offset) {
  if (bytes.size() < offset + kHeaderBytes) throw FormatError("LTNSR1: truncated header");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + offset;
  if (std::memcmp(p, kMagic.data(), kMagic.size()) != 0) throw FormatError("LTNSR1: bad magic");
  if (p[6] != kDtypeF32) throw FormatError("LTNSR1: unsupported dtype code " + std::to_string(p[6]));
  if (p[7] != 3) throw FormatError("LTNSR1: unsupported ndim " + std::to_string(p[7]));
  const std::uint64_t h = get_u32(p + 8), w = get_u32(p + 12), c = get_u32(p + 16);
  constexpr std::uint64_t kMaxDim = static_cast<std::uint64_t>(std::numeric_limits<int>::max());
  if (h > kMaxDim || w > kMaxDim || c > kMaxDim) throw FormatError("LTNSR1: dimension overflow");
  const std::uint64_t count = h * w * c;
  if ((w != 0 && c != 0 && count / (w * c) != h) || count > (std::uint64_t{1} << 40)) {
    throw FormatError("LTNSR1: dimension overflow");
  }
  offset += kHeaderBytes;
  if (bytes.size() - offset < count * 4) throw FormatError("LTNSR1: truncated data");
  std::vector<float> values(count);
  std::memcpy(values.data(), bytes.data() + offset, count * 4);
  offset += count * 4;
  return Image(Shape{static_cast<int>(h), static_cast<int>(w), static_cast<int>(c)}, std::move(values));
}

}  // namespace ltnsr

inline std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failure on " + path.string());
  return bytes;
}

inline void write_file_bytes(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failure on " + path.string());
}

template <class T>
void save_tensor(const Tensor3<T>& t, const std::filesystem::path& path) {
  write_file_bytes(path, ltnsr::encode(t));
}

inline Image load_tensor(const std::filesystem::path& path) {
  const std::string bytes = read_file_bytes(path);
  std::size_t offset = 0;
  Image t = ltnsr::decode(bytes, offset);
  if (offset != bytes.size()) throw FormatError("LTNSR1: trailing bytes in " + path.string());
  return t;
}

/// Loads an 8-bit grayscale or RGB PNG, values scaled to [0, 1].
inline Image load_png(const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
    throw IoError("cannot read PNG " + path.string() + ": " + image.message);
  }
  if (image.format & PNG_FORMAT_FLAG_LINEAR) {
    png_image_free(&image);
    throw FormatError("unsupported PNG bit depth (16-bit) in " + path.string());
  }
  const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  const int channels = color ? 3 : 1;
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    throw IoError("cannot decode PNG " + path.string() + ": " + msg);
  }
  Image out(static_cast<int>(image.height), static_cast<int>(image.width), channels);
  for (std::size_t n = 0; n < out.size(); ++n) out[n] = static_cast<float>(buffer[n]) / 255.0f;
  return out;
}

/// Saves 1- or 3-channel tensors as 8-bit PNG: clamp to [0,1], then round(v * 255).
template <class T>
void save_png(const Tensor3<T>& t, const std::filesystem::path& path) {
  if (t.channels() != 1 && t.channels() != 3) {
    throw ShapeError("save_png: need 1 or 3 channels, got " + std::to_string(t.channels()));
  }
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::vector<png_byte> buffer(t.size());
  for (std::size_t n = 0; n < t.size(); ++n) {
    double v = static_cast<double>(t[n]);
    if (!std::isfinite(v)) v = 0.0;
    v = std::clamp(v, 0.0, 1.0);
    buffer[n] = static_cast<png_byte>(std::lround(v * 255.0));
  }
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(t.width());
  image.height = static_cast<png_uint_32>(t.height());
  image.format = t.channels() == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, buffer.data(), 0, nullptr)) {
    throw IoError("cannot write PNG " + path.string() + ": " + image.message);
  }
}

/// Dispatches on extension: ".png" goes through PNG, everything else is LTNSR1.
inline Image load_image_any(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" ? load_png(path) : load_tensor(path);
}

}  // namespace lensless
