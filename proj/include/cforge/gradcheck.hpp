#pragma once

#include "cforge/random.hpp"
#include "cforge/splat_render.hpp"

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace cforge {

/// Finite-difference validation of render_backward on random double-precision
/// scenes. Central differences are taken on the serial reference renderer
/// with each pixel's active splat set frozen at the unperturbed point, so a
/// step never straddles the density skip threshold or a depth swap.
struct GradcheckOptions {
    int scenes = 100;
    int max_splats = 10;
    int image_size = 16;
    double step = 1e-3;
    double tolerance = 1e-3;
    /// Denominator floor for groups whose numeric gradient vanishes.
    double magnitude_floor = 1e-9;
    std::uint64_t seed = 0;
};

inline constexpr std::array<const char*, 5> kParameterGroups = {"position", "log_scale", "rotation", "color",
                                                                 "opacity"};

/// Per parameter group, rel_error is |analytic - numeric| / |numeric| over the
/// group's whole gradient vector; max_entry_error is the worst single entry
/// (diagnostic only, dominated by O(step^2) truncation on small entries).
struct GradcheckSceneResult {
    int scene = 0;
    int splats = 0;
    std::array<double, 5> rel_error{};
    std::array<double, 5> max_entry_error{};
    bool pass = false;
};

struct GradcheckReport {
    std::vector<GradcheckSceneResult> scenes;
    std::array<double, 5> worst{};
    std::array<double, 5> worst_entry{};
    int checked_entries = 0;
    bool pass = false;
};

CameraPose gradcheck_camera(int image_size);
GaussianCloudD random_gradcheck_scene(Rng& rng, int splats);

/// |a - f| / max(|f|, floor) in the Euclidean norm.
double gradient_relative_error(std::span<const double> analytic, std::span<const double> numeric, double floor);

GradcheckSceneResult check_scene(const GaussianCloudD& cloud, const CameraPose& camera, const RenderSettings& settings,
                                 const std::vector<double>& loss_weights, const GradcheckOptions& options);

GradcheckReport run_gradcheck(const GradcheckOptions& options);

}  // namespace cforge
