#include "cforge/wire.hpp"

#include "cforge/errors.hpp"
#include "cforge/image_io.hpp"

#include <array>
#include <bit>
#include <cstring>

namespace cforge {

namespace {

constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

constexpr std::array<int, 256> make_decode_table() {
    std::array<int, 256> table{};
    for (auto& v : table) v = -1;
    for (int i = 0; i < 64; ++i) table[static_cast<unsigned char>(kAlphabet[i])] = i;
    return table;
}

constexpr auto kDecode = make_decode_table();

static_assert(std::endian::native == std::endian::little, "wire encoding assumes a little-endian host");

}  // namespace

std::string base64_encode(std::span<const std::uint8_t> bytes) {
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    std::size_t i = 0;
    for (; i + 2 < bytes.size(); i += 3) {
        const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
        out.push_back(kAlphabet[(v >> 18) & 63]);
        out.push_back(kAlphabet[(v >> 12) & 63]);
        out.push_back(kAlphabet[(v >> 6) & 63]);
        out.push_back(kAlphabet[v & 63]);
    }
    const std::size_t rest = bytes.size() - i;
    if (rest == 1) {
        const std::uint32_t v = bytes[i] << 16;
        out.push_back(kAlphabet[(v >> 18) & 63]);
        out.push_back(kAlphabet[(v >> 12) & 63]);
        out += "==";
    } else if (rest == 2) {
        const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8);
        out.push_back(kAlphabet[(v >> 18) & 63]);
        out.push_back(kAlphabet[(v >> 12) & 63]);
        out.push_back(kAlphabet[(v >> 6) & 63]);
        out.push_back('=');
    }
    return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
    std::vector<std::uint8_t> out;
    out.reserve(text.size() / 4 * 3);
    std::uint32_t acc = 0;
    int bits = 0;
    for (char ch : text) {
        if (ch == '=') break;
        if (ch == '\n' || ch == '\r') continue;
        const int v = kDecode[static_cast<unsigned char>(ch)];
        if (v < 0) throw FormatError("invalid base64 character");
        acc = (acc << 6) | static_cast<std::uint32_t>(v);
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out.push_back(static_cast<std::uint8_t>((acc >> bits) & 0xFF));
        }
    }
    return out;
}

std::vector<std::uint8_t> encode_float32_le(std::span<const double> values) {
    std::vector<std::uint8_t> out(values.size() * 4);
    for (std::size_t i = 0; i < values.size(); ++i) {
        const float f = static_cast<float>(values[i]);
        std::memcpy(out.data() + i * 4, &f, 4);
    }
    return out;
}

std::vector<double> decode_float32_le(std::span<const std::uint8_t> bytes) {
    if (bytes.size() % 4 != 0) throw FormatError("float32 payload length is not a multiple of 4");
    std::vector<double> out(bytes.size() / 4);
    for (std::size_t i = 0; i < out.size(); ++i) {
        float f;
        std::memcpy(&f, bytes.data() + i * 4, 4);
        out[i] = f;
    }
    return out;
}

std::string encode_float_image_b64(const Image& img) { return base64_encode(encode_float32_le(img.values())); }

Image decode_float_image_b64(std::string_view b64, int height, int width) {
    Image img(height, width);
    const auto values = decode_float32_le(base64_decode(b64));
    if (values.size() != img.size()) throw FormatError("float image payload does not match declared shape");
    std::copy(values.begin(), values.end(), img.data.begin());
    return img;
}

std::string encode_png_b64(const Image& img) { return base64_encode(encode_png(img)); }

Image decode_png_b64(std::string_view b64) { return decode_png(base64_decode(b64)); }

EndpointUrl parse_endpoint(std::string_view url) {
    const auto scheme = url.find("://");
    if (scheme == std::string_view::npos) throw InvalidParameter("endpoint URL needs a scheme: " + std::string(url));
    const auto slash = url.find('/', scheme + 3);
    if (slash == std::string_view::npos) return {std::string(url), ""};
    std::string prefix(url.substr(slash));
    while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
    return {std::string(url.substr(0, slash)), prefix};
}

}  // namespace cforge
