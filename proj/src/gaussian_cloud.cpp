#include "cforge/gaussian_cloud.hpp"

#include "cforge/errors.hpp"

#include <algorithm>

namespace cforge {

template <typename T>
void BasicGaussianCloud<T>::validate() const {
    const std::size_t n = positions.size();
    if (log_scales.size() != n || rotations.size() != n || color_dc.size() != n || opacity_logits.size() != n) {
        throw ShapeError("gaussian cloud attribute arrays differ in length");
    }
}

template <typename T>
typename BasicGaussianCloud<T>::Vec3T BasicGaussianCloud<T>::scale(std::size_t i) const {
    const auto& s = log_scales[i];
    return {std::exp(s[0]), std::exp(s[1]), std::exp(s[2])};
}

template <typename T>
typename BasicGaussianCloud<T>::Vec3T BasicGaussianCloud<T>::color(std::size_t i) const {
    const auto& c = color_dc[i];
    return {std::clamp(dc_to_color(c[0]), T(0), T(1)), std::clamp(dc_to_color(c[1]), T(0), T(1)),
            std::clamp(dc_to_color(c[2]), T(0), T(1))};
}

template <typename T>
void BasicGaussianCloud<T>::push_back(const Vec3T& position, const Vec3T& log_scale, const QuatT& rotation,
                                      const Vec3T& rgb, T opacity) {
    positions.push_back(position);
    log_scales.push_back(log_scale);
    rotations.push_back(rotation);
    color_dc.push_back({color_to_dc(rgb[0]), color_to_dc(rgb[1]), color_to_dc(rgb[2])});
    opacity_logits.push_back(logit(opacity));
}

template <typename T>
void BasicGaussianCloud<T>::append_from(const BasicGaussianCloud& other, std::size_t i) {
    positions.push_back(other.positions[i]);
    log_scales.push_back(other.log_scales[i]);
    rotations.push_back(other.rotations[i]);
    color_dc.push_back(other.color_dc[i]);
    opacity_logits.push_back(other.opacity_logits[i]);
}

namespace {

template <typename V>
void retain_vector(V& v, const std::vector<bool>& keep) {
    std::size_t out = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (keep[i]) v[out++] = v[i];
    }
    v.resize(out);
}

}  // namespace

template <typename T>
void BasicGaussianCloud<T>::retain(const std::vector<bool>& keep) {
    if (keep.size() != size()) throw ShapeError("retain mask length differs from cloud size");
    retain_vector(positions, keep);
    retain_vector(log_scales, keep);
    retain_vector(rotations, keep);
    retain_vector(color_dc, keep);
    retain_vector(opacity_logits, keep);
}

template <typename T>
void BasicGaussianCloud<T>::reserve(std::size_t n) {
    positions.reserve(n);
    log_scales.reserve(n);
    rotations.reserve(n);
    color_dc.reserve(n);
    opacity_logits.reserve(n);
}

template struct BasicGaussianCloud<float>;
template struct BasicGaussianCloud<double>;

}  // namespace cforge
