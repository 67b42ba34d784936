#include "cforge/gradcheck.hpp"

#include "cforge/errors.hpp"
#include "cforge/splat_reference.hpp"

#include <algorithm>
#include <cmath>

namespace cforge {

CameraPose gradcheck_camera(int image_size) {
    CameraPose cam;
    cam.distance = 2.0;
    cam.fovy_deg = 50.0;
    cam.elevation_deg = 15.0;
    cam.azimuth_deg = 30.0;
    cam.width = image_size;
    cam.height = image_size;
    return cam;
}

GaussianCloudD random_gradcheck_scene(Rng& rng, int splats) {
    GaussianCloudD cloud;
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int i = 0; i < splats; ++i) {
        const std::array<double, 3> pos{uniform(rng, -0.35, 0.35), uniform(rng, -0.35, 0.35), uniform(rng, -0.35, 0.35)};
        const std::array<double, 3> log_scale{std::log(uniform(rng, 0.08, 0.3)), std::log(uniform(rng, 0.08, 0.3)),
                                              std::log(uniform(rng, 0.08, 0.3))};
        std::array<double, 4> q{normal(rng), normal(rng), normal(rng), normal(rng)};
        const std::array<double, 3> rgb{uniform(rng, 0.05, 0.95), uniform(rng, 0.05, 0.95), uniform(rng, 0.05, 0.95)};
        cloud.push_back(pos, log_scale, q, rgb, uniform(rng, 0.2, 0.999));
    }
    return cloud;
}

double gradient_relative_error(std::span<const double> analytic, std::span<const double> numeric, double floor) {
    if (analytic.size() != numeric.size()) throw ShapeError("gradient vectors differ in length");
    double diff = 0.0;
    double ref = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
        ref += numeric[i] * numeric[i];
    }
    return std::sqrt(diff) / std::max(std::sqrt(ref), floor);
}

namespace {

double weighted_loss(const Image& img, const std::vector<double>& weights) {
    double sum = 0.0;
    for (std::size_t i = 0; i < img.size(); ++i) sum += weights[i] * img.data[i];
    return sum;
}

}  // namespace

GradcheckSceneResult check_scene(const GaussianCloudD& cloud, const CameraPose& camera, const RenderSettings& settings,
                                 const std::vector<double>& loss_weights, const GradcheckOptions& options) {
    GradcheckSceneResult result;
    result.splats = static_cast<int>(cloud.size());

    const auto fwd = render(cloud, camera, settings);
    const auto grads = render_backward(cloud, camera, fwd, std::span<const double>(loss_weights));
    const auto trace = reference::render(cloud, camera, settings).trace;

    GaussianCloudD probe = cloud;
    const double h = options.step;
    auto numeric = [&](double& param) {
        const double saved = param;
        param = saved + h;
        const double plus = weighted_loss(reference::render_frozen(probe, camera, settings, trace), loss_weights);
        param = saved - h;
        const double minus = weighted_loss(reference::render_frozen(probe, camera, settings, trace), loss_weights);
        param = saved;
        return (plus - minus) / (2.0 * h);
    };
    std::array<std::vector<double>, 5> analytic_values;
    std::array<std::vector<double>, 5> numeric_values;
    auto record = [&](int group, double analytic, double& param) {
        const double fd = numeric(param);
        analytic_values[group].push_back(analytic);
        numeric_values[group].push_back(fd);
        const double entry = std::abs(analytic - fd) / std::max({std::abs(analytic), std::abs(fd), 1e-6});
        result.max_entry_error[group] = std::max(result.max_entry_error[group], entry);
    };

    for (std::size_t i = 0; i < cloud.size(); ++i) {
        for (int k = 0; k < 3; ++k) {
            record(0, grads.positions[i][k], probe.positions[i][k]);
            record(1, grads.log_scales[i][k], probe.log_scales[i][k]);
            record(3, grads.color_dc[i][k], probe.color_dc[i][k]);
        }
        for (int k = 0; k < 4; ++k) record(2, grads.rotations[i][k], probe.rotations[i][k]);
        record(4, grads.opacity_logits[i], probe.opacity_logits[i]);
    }
    for (int g = 0; g < 5; ++g) {
        result.rel_error[g] = gradient_relative_error(analytic_values[g], numeric_values[g], options.magnitude_floor);
    }
    result.pass = std::all_of(result.rel_error.begin(), result.rel_error.end(),
                              [&](double e) { return e <= options.tolerance; });
    return result;
}

GradcheckReport run_gradcheck(const GradcheckOptions& options) {
    GradcheckReport report;
    const RenderSettings settings;
    const CameraPose camera = gradcheck_camera(options.image_size);
    for (int s = 0; s < options.scenes; ++s) {
        Rng rng = make_stream(options.seed, 1000 + static_cast<std::uint64_t>(s));
        std::uniform_int_distribution<int> count(1, std::max(1, options.max_splats));
        const GaussianCloudD cloud = random_gradcheck_scene(rng, count(rng));
        std::vector<double> weights(static_cast<std::size_t>(camera.width) * camera.height * 3);
        for (double& w : weights) w = uniform(rng, -1.0, 1.0);

        GradcheckSceneResult res = check_scene(cloud, camera, settings, weights, options);
        res.scene = s;
        report.checked_entries += res.splats * 14;
        for (int g = 0; g < 5; ++g) {
            report.worst[g] = std::max(report.worst[g], res.rel_error[g]);
            report.worst_entry[g] = std::max(report.worst_entry[g], res.max_entry_error[g]);
        }
        report.scenes.push_back(res);
    }
    report.pass = std::all_of(report.scenes.begin(), report.scenes.end(), [](const auto& r) { return r.pass; });
    return report;
}

}  // namespace cforge
