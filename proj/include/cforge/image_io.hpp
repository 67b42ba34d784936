#pragma once

#include "cforge/image.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace cforge {

/// 8-bit RGB PNG; values are clamped to [0, 1] and rounded.
std::vector<std::uint8_t> encode_png(const Image& img);
Image decode_png(const std::vector<std::uint8_t>& bytes);

void write_png(const std::filesystem::path& path, const Image& img);
Image read_png(const std::filesystem::path& path);

/// Raw little-endian float32 payload at `path` plus `path` + ".json" header
/// ({"height", "width", "channels", "dtype", "byte_order"}).
void write_float_image(const std::filesystem::path& path, const Image& img);
Image read_float_image(const std::filesystem::path& path);

}  // namespace cforge
