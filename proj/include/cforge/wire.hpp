#pragma once

#include "cforge/image.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

// Encoding helpers shared by the scorer, noise-predictor and analyzer HTTP
// protocols.
namespace cforge {

std::string base64_encode(std::span<const std::uint8_t> bytes);
/// Throws FormatError on characters outside the standard alphabet.
std::vector<std::uint8_t> base64_decode(std::string_view text);

std::vector<std::uint8_t> encode_float32_le(std::span<const double> values);
std::vector<double> decode_float32_le(std::span<const std::uint8_t> bytes);

/// Base64 of the little-endian float32 payload of an H x W x 3 array.
std::string encode_float_image_b64(const Image& img);
Image decode_float_image_b64(std::string_view b64, int height, int width);

std::string encode_png_b64(const Image& img);
Image decode_png_b64(std::string_view b64);

/// Splits "http://host:port/prefix" into the scheme+authority and the path prefix.
struct EndpointUrl {
    std::string origin;
    std::string path_prefix;
};
EndpointUrl parse_endpoint(std::string_view url);

}  // namespace cforge
