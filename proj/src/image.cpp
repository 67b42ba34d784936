#include "cforge/image.hpp"

#include "cforge/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace cforge {

Image::Image(int h, int w, double fill) : height(h), width(w) {
    if (h < 0 || w < 0) throw ShapeError("image dimensions must be non-negative");
    data.assign(static_cast<std::size_t>(h) * w * channels, fill);
}

void require_same_shape(const Image& a, const Image& b, const char* what) {
    if (!a.same_shape(b) || a.size() != b.size()) {
        throw ShapeError(std::string(what) + ": image shape mismatch (" + std::to_string(a.height) + "x" +
                         std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" +
                         std::to_string(b.width) + ")");
    }
}

Image& Image::operator+=(const Image& rhs) {
    require_same_shape(*this, rhs, "image +=");
    for (std::size_t i = 0; i < data.size(); ++i) data[i] += rhs.data[i];
    return *this;
}

Image& Image::operator-=(const Image& rhs) {
    require_same_shape(*this, rhs, "image -=");
    for (std::size_t i = 0; i < data.size(); ++i) data[i] -= rhs.data[i];
    return *this;
}

Image& Image::operator*=(double s) {
    for (double& v : data) v *= s;
    return *this;
}

Image operator+(Image lhs, const Image& rhs) { return lhs += rhs; }
Image operator-(Image lhs, const Image& rhs) { return lhs -= rhs; }
Image operator*(Image lhs, double s) { return lhs *= s; }
Image operator*(double s, Image rhs) { return rhs *= s; }

double mean_value(const Image& img) {
    if (img.empty()) return 0.0;
    double sum = 0.0;
    for (double v : img.data) sum += v;
    return sum / static_cast<double>(img.size());
}

double dot(const Image& a, const Image& b) {
    require_same_shape(a, b, "dot");
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) sum += a.data[i] * b.data[i];
    return sum;
}

double norm(const Image& a) { return std::sqrt(dot(a, a)); }

double max_abs_diff(const Image& a, const Image& b) {
    require_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

double mse(const Image& a, const Image& b) {
    require_same_shape(a, b, "mse");
    if (a.empty()) return 0.0;
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        sum += d * d;
    }
    return sum / static_cast<double>(a.size());
}

double psnr(const Image& a, const Image& b) {
    const double e = mse(a, b);
    if (e <= 0.0) return std::numeric_limits<double>::infinity();
    return -10.0 * std::log10(e);
}

bool all_finite(const Image& a) {
    return std::all_of(a.data.begin(), a.data.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace cforge
