#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace cforge {

/// Dense H x W x 3 image, row-major, channels interleaved. Values are
/// nominally in [0, 1] for renders; gradients and noise are unbounded.
struct Image {
    int height = 0;
    int width = 0;
    std::vector<double> data;

    Image() = default;
    Image(int h, int w, double fill = 0.0);

    static constexpr int channels = 3;

    std::size_t size() const { return data.size(); }
    std::size_t pixel_count() const { return static_cast<std::size_t>(height) * width; }
    bool empty() const { return data.empty(); }

    double& at(int y, int x, int c) { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    double at(int y, int x, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }

    bool same_shape(const Image& other) const { return height == other.height && width == other.width; }

    std::span<double> values() { return data; }
    std::span<const double> values() const { return data; }

    Image& operator+=(const Image& rhs);
    Image& operator-=(const Image& rhs);
    Image& operator*=(double s);
};

Image operator+(Image lhs, const Image& rhs);
Image operator-(Image lhs, const Image& rhs);
Image operator*(Image lhs, double s);
Image operator*(double s, Image rhs);

/// Throws ShapeError naming `what` when shapes differ.
void require_same_shape(const Image& a, const Image& b, const char* what);

double mean_value(const Image& img);
double dot(const Image& a, const Image& b);
double norm(const Image& a);
double max_abs_diff(const Image& a, const Image& b);
double mse(const Image& a, const Image& b);
/// Peak signal-to-noise ratio for a peak value of 1.
double psnr(const Image& a, const Image& b);
bool all_finite(const Image& a);

}  // namespace cforge
