#pragma once

#include "cforge/camera.hpp"
#include "cforge/gaussian_cloud.hpp"
#include "cforge/image.hpp"

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace cforge {

struct RenderSettings {
    std::array<double, 3> background{1.0, 1.0, 1.0};
    double cov2d_dilation = 0.3;        ///< px^2 added to the projected covariance diagonal
    double max_alpha = 0.99;            ///< per-splat density clamp
    double min_alpha = 1.0 / 255.0;     ///< densities below this are skipped
    int tile_size = 16;

    bool operator==(const RenderSettings&) const = default;
};

/// Screen-space footprint of one splat.
template <typename T>
struct Projection {
    std::array<T, 2> mean{};
    std::array<T, 3> cov{};      ///< (xx, xy, yy), dilation included
    std::array<T, 3> conic{};    ///< inverse covariance (xx, xy, yy)
    std::array<T, 3> camera{};   ///< camera-space center
    T depth = 0;
    bool culled = true;
};

/// EWA projection of a single splat (center, log scale, raw quaternion).
/// Splats outside [near, far] or with a singular footprint come back culled.
template <typename T>
Projection<T> project_gaussian(const std::array<T, 3>& position, const std::array<T, 3>& log_scale,
                               const std::array<T, 4>& rotation, const CameraFrame& frame, double dilation);

template <typename T>
Projection<T> project_gaussian(const BasicGaussianCloud<T>& cloud, std::size_t i, const CameraPose& camera,
                               const RenderSettings& settings = {});

/// Per-splat data produced by the forward pass and reused by the backward pass.
template <typename T>
struct SplatFootprint {
    Projection<T> proj;
    T opacity = 0;
    std::array<T, 3> color{};
    T radius = 0;
    int tile_x0 = 0, tile_y0 = 0, tile_x1 = -1, tile_y1 = -1;
    bool visible = false;
};

template <typename T>
struct RenderOutput {
    int height = 0;
    int width = 0;
    std::vector<T> image;   ///< H x W x 3
    std::vector<T> alpha;   ///< H x W accumulated opacity

    // Compositing records for render_backward.
    CameraPose camera;
    RenderSettings settings;
    std::size_t splat_count = 0;
    std::vector<SplatFootprint<T>> footprints;
    std::vector<std::uint32_t> tile_offsets;     ///< CSR row pointers, one row per tile
    std::vector<std::uint32_t> tile_splats;      ///< front-to-back splat ids per tile
    std::vector<T> final_transmittance;          ///< per pixel
    std::vector<std::uint32_t> contributor_end;  ///< per pixel: tile-list position after the last contributor

    Image to_image() const;
    int tiles_x() const { return (width + settings.tile_size - 1) / settings.tile_size; }
    int tiles_y() const { return (height + settings.tile_size - 1) / settings.tile_size; }
};

/// Gradients with respect to the stored cloud parameters, plus the
/// screen-space center gradient the densification policy consumes.
template <typename T>
struct CloudGradients {
    std::vector<std::array<T, 3>> positions;
    std::vector<std::array<T, 3>> log_scales;
    std::vector<std::array<T, 4>> rotations;
    std::vector<std::array<T, 3>> color_dc;
    std::vector<T> opacity_logits;
    std::vector<std::array<T, 2>> mean2d;
    std::vector<std::uint8_t> visible;

    explicit CloudGradients(std::size_t n = 0);
    std::size_t size() const { return positions.size(); }
    bool all_finite() const;
    CloudGradients& operator+=(const CloudGradients& rhs);
    CloudGradients& operator*=(T s);
};

/// Tile-parallel forward pass (OpenMP over 16x16 tiles).
template <typename T>
RenderOutput<T> render(const BasicGaussianCloud<T>& cloud, const CameraPose& camera,
                       const RenderSettings& settings = {});

/// Exact gradients of sum(image_gradient * image) through the compositing
/// equation. `output` must come from render() on the same cloud and camera.
template <typename T>
CloudGradients<T> render_backward(const BasicGaussianCloud<T>& cloud, const CameraPose& camera,
                                  const RenderOutput<T>& output, std::span<const T> image_gradient);

template <typename T>
CloudGradients<T> render_backward(const BasicGaussianCloud<T>& cloud, const CameraPose& camera,
                                  const RenderOutput<T>& output, const Image& image_gradient);

}  // namespace cforge
