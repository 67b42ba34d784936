#pragma once

#include "cforge/splat_render.hpp"

#include <Eigen/Core>

#include <vector>

// Straightforward serial renderer kept as a test oracle for the tiled
// kernels: no tiles, no culling radius, Eigen matrix algebra throughout.
namespace cforge::reference {

struct Footprint {
    Eigen::Vector2d mean;
    Eigen::Matrix2d cov;
    double depth = 0;
    bool culled = true;
};

Footprint project(const GaussianCloudD& cloud, std::size_t i, const CameraFrame& frame, double dilation);

/// Which splats composited into a pixel, front to back, and whether each hit
/// the density clamp.
struct TraceEntry {
    int splat;
    bool clamped;
};

struct Trace {
    int width = 0;
    int height = 0;
    std::vector<std::vector<TraceEntry>> pixels;
};

struct Result {
    Image image;
    std::vector<double> alpha;
    Trace trace;
};

Result render(const GaussianCloudD& cloud, const CameraPose& camera, const RenderSettings& settings = {});

/// Re-evaluates the compositing sum with the per-pixel active set and order
/// frozen to `trace`: the smooth piece of the renderer containing the point
/// where the trace was recorded.
Image render_frozen(const GaussianCloudD& cloud, const CameraPose& camera, const RenderSettings& settings,
                    const Trace& trace);

/// Per-splat compositing weights at one pixel plus the background remainder
/// as the last element.
std::vector<double> compositing_weights(const GaussianCloudD& cloud, const CameraPose& camera,
                                        const RenderSettings& settings, int px, int py);

}  // namespace cforge::reference
