#include "cforge/image_io.hpp"

#include "cforge/errors.hpp"
#include "cforge/wire.hpp"

#include <nlohmann/json.hpp>
#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstring>
#include <fstream>
#include <iterator>

namespace cforge {

namespace {

std::uint8_t to_byte(double v) {
    const double c = std::clamp(std::isfinite(v) ? v : 0.0, 0.0, 1.0);
    return static_cast<std::uint8_t>(std::lround(c * 255.0));
}

struct PngReadCursor {
    const std::vector<std::uint8_t>* bytes;
    std::size_t offset;
};

void read_from_memory(png_structp png, png_bytep out, png_size_t length) {
    auto* cursor = static_cast<PngReadCursor*>(png_get_io_ptr(png));
    if (cursor->offset + length > cursor->bytes->size()) png_error(png, "truncated PNG");
    std::memcpy(out, cursor->bytes->data() + cursor->offset, length);
    cursor->offset += length;
}

void write_to_memory(png_structp png, png_bytep data, png_size_t length) {
    auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
    out->insert(out->end(), data, data + length);
}

void flush_noop(png_structp) {}

void png_warn(png_structp, png_const_charp) {}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& path, const void* data, std::size_t size) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write " + path.string());
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
}

}  // namespace

std::vector<std::uint8_t> encode_png(const Image& img) {
    if (img.height <= 0 || img.width <= 0) throw ShapeError("cannot encode an empty image");
    std::vector<std::uint8_t> pixels(img.size());
    std::transform(img.data.begin(), img.data.end(), pixels.begin(), to_byte);
    std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
    for (int y = 0; y < img.height; ++y) rows[y] = pixels.data() + static_cast<std::size_t>(y) * img.width * 3;
    std::vector<std::uint8_t> out;

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, png_warn);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw FormatError("png: out of memory");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw FormatError("png: encoding failed");
    }
    png_set_write_fn(png, &out, write_to_memory, flush_noop);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_set_rows(png, info, rows.data());
    png_write_png(png, info, PNG_TRANSFORM_IDENTITY, nullptr);
    png_destroy_write_struct(&png, &info);
    return out;
}

namespace {

// Kept free of non-trivial locals so the libpng longjmp never skips a destructor.
bool decode_png_into(png_structp png, png_infop info, PngReadCursor* cursor, std::vector<std::uint8_t>* pixels,
                     std::vector<png_bytep>* rows, png_uint_32* width, png_uint_32* height) {
    if (setjmp(png_jmpbuf(png))) return false;
    png_set_read_fn(png, cursor, read_from_memory);
    png_read_info(png, info);
    *width = png_get_image_width(png, info);
    *height = png_get_image_height(png, info);
    const auto color = png_get_color_type(png, info);
    const auto depth = png_get_bit_depth(png, info);
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    if (png_get_rowbytes(png, info) != static_cast<png_size_t>(*width) * 3) png_error(png, "unexpected row layout");
    pixels->resize(static_cast<std::size_t>(*width) * *height * 3);
    rows->resize(*height);
    for (png_uint_32 y = 0; y < *height; ++y) (*rows)[y] = pixels->data() + static_cast<std::size_t>(y) * *width * 3;
    png_read_image(png, rows->data());
    return true;
}

}  // namespace

Image decode_png(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) throw FormatError("not a PNG stream");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, png_warn);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("png: out of memory");
    }
    PngReadCursor cursor{&bytes, 0};
    std::vector<std::uint8_t> pixels;
    std::vector<png_bytep> rows;
    png_uint_32 width = 0;
    png_uint_32 height = 0;
    const bool ok = decode_png_into(png, info, &cursor, &pixels, &rows, &width, &height);
    png_destroy_read_struct(&png, &info, nullptr);
    if (!ok) throw FormatError("png: malformed stream");

    Image img(static_cast<int>(height), static_cast<int>(width));
    for (std::size_t i = 0; i < pixels.size(); ++i) img.data[i] = pixels[i] / 255.0;
    return img;
}

void write_png(const std::filesystem::path& path, const Image& img) {
    const auto bytes = encode_png(img);
    write_bytes(path, bytes.data(), bytes.size());
}

Image read_png(const std::filesystem::path& path) { return decode_png(read_bytes(path)); }

void write_float_image(const std::filesystem::path& path, const Image& img) {
    const auto payload = encode_float32_le(img.values());
    write_bytes(path, payload.data(), payload.size());
    nlohmann::json header = {{"height", img.height},
                             {"width", img.width},
                             {"channels", Image::channels},
                             {"dtype", "float32"},
                             {"byte_order", "little"}};
    const std::string text = header.dump(2) + "\n";
    write_bytes(std::filesystem::path(path.string() + ".json"), text.data(), text.size());
}

Image read_float_image(const std::filesystem::path& path) {
    const auto header_bytes = read_bytes(std::filesystem::path(path.string() + ".json"));
    const auto header = nlohmann::json::parse(header_bytes.begin(), header_bytes.end());
    if (header.at("dtype") != "float32" || header.at("byte_order") != "little" || header.at("channels") != 3) {
        throw FormatError("unsupported float image header for " + path.string());
    }
    Image img(header.at("height").get<int>(), header.at("width").get<int>());
    const auto values = decode_float32_le(read_bytes(path));
    if (values.size() != img.size()) throw FormatError("float image payload size mismatch for " + path.string());
    std::copy(values.begin(), values.end(), img.data.begin());
    return img;
}

}  // namespace cforge
