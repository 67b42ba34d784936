#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

namespace cforge {

/// Zeroth-order spherical harmonic constant; colors are stored as DC
/// coefficients so clouds interoperate with the usual splat PLY layout.
inline constexpr double kShC0 = 0.28209479177387814;

template <typename T>
T sigmoid(T x) {
    return T(1) / (T(1) + std::exp(-x));
}

template <typename T>
T logit(T p) {
    return std::log(p / (T(1) - p));
}

/// Optimizable splat parameters in their stored (pre-activation) form:
/// log scales, raw quaternions (w, x, y, z), color DC coefficients and
/// opacity logits.
template <typename T>
struct BasicGaussianCloud {
    using Scalar = T;
    using Vec3T = std::array<T, 3>;
    using QuatT = std::array<T, 4>;

    std::vector<Vec3T> positions;
    std::vector<Vec3T> log_scales;
    std::vector<QuatT> rotations;
    std::vector<Vec3T> color_dc;
    std::vector<T> opacity_logits;

    std::size_t size() const { return positions.size(); }
    bool empty() const { return positions.empty(); }

    /// Throws ShapeError unless every attribute array has the same length.
    void validate() const;

    T opacity(std::size_t i) const { return sigmoid(opacity_logits[i]); }
    Vec3T scale(std::size_t i) const;
    /// Activated color, clamped to [0, 1].
    Vec3T color(std::size_t i) const;

    void push_back(const Vec3T& position, const Vec3T& log_scale, const QuatT& rotation, const Vec3T& rgb,
                   T opacity);
    void append_from(const BasicGaussianCloud& other, std::size_t i);
    /// Keeps entries whose mask value is true, preserving order.
    void retain(const std::vector<bool>& keep);
    void reserve(std::size_t n);
};

using GaussianCloud = BasicGaussianCloud<float>;
using GaussianCloudD = BasicGaussianCloud<double>;

template <typename To, typename From>
BasicGaussianCloud<To> cloud_cast(const BasicGaussianCloud<From>& in) {
    BasicGaussianCloud<To> out;
    auto cast3 = [](const std::array<From, 3>& v) { return std::array<To, 3>{To(v[0]), To(v[1]), To(v[2])}; };
    out.reserve(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) {
        out.positions.push_back(cast3(in.positions[i]));
        out.log_scales.push_back(cast3(in.log_scales[i]));
        const auto& q = in.rotations[i];
        out.rotations.push_back({To(q[0]), To(q[1]), To(q[2]), To(q[3])});
        out.color_dc.push_back(cast3(in.color_dc[i]));
        out.opacity_logits.push_back(To(in.opacity_logits[i]));
    }
    return out;
}

template <typename T>
T color_to_dc(T rgb) {
    return (rgb - T(0.5)) / T(kShC0);
}

template <typename T>
T dc_to_color(T dc) {
    return T(0.5) + T(kShC0) * dc;
}

}  // namespace cforge
