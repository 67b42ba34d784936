#include "cforge/splat_reference.hpp"

#include "cforge/errors.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cforge::reference {

Footprint project(const GaussianCloudD& cloud, std::size_t i, const CameraFrame& frame, double dilation) {
    Footprint fp;
    const auto& p = cloud.positions[i];
    const Eigen::Vector3d t = frame.world_to_camera * (Eigen::Vector3d(p[0], p[1], p[2]) - frame.eye);
    fp.depth = t.z();
    if (t.z() < frame.near_plane || t.z() > frame.far_plane) return fp;

    const auto& q = cloud.rotations[i];
    const Eigen::Quaterniond quat(q[0], q[1], q[2], q[3]);
    if (quat.norm() == 0.0) return fp;
    const Eigen::Matrix3d rot = quat.normalized().toRotationMatrix();
    const auto& s = cloud.log_scales[i];
    const Eigen::Vector3d scale(std::exp(s[0]), std::exp(s[1]), std::exp(s[2]));
    const Eigen::Matrix3d sigma = rot * scale.cwiseAbs2().asDiagonal() * rot.transpose();

    Eigen::Matrix<double, 2, 3> jac;
    jac << frame.fx / t.z(), 0.0, -frame.fx * t.x() / (t.z() * t.z()),
           0.0, frame.fy / t.z(), -frame.fy * t.y() / (t.z() * t.z());
    const Eigen::Matrix<double, 2, 3> jw = jac * frame.world_to_camera;
    fp.cov = jw * sigma * jw.transpose() + dilation * Eigen::Matrix2d::Identity();
    fp.mean = Eigen::Vector2d(frame.fx * t.x() / t.z() + frame.cx, frame.fy * t.y() / t.z() + frame.cy);
    fp.culled = !(fp.cov.determinant() > 0.0);
    return fp;
}

namespace {

struct Prepared {
    std::vector<Footprint> footprints;
    std::vector<Eigen::Matrix2d> inverse;
    std::vector<int> order;
};

Prepared prepare(const GaussianCloudD& cloud, const CameraFrame& frame, double dilation) {
    Prepared prep;
    prep.footprints.resize(cloud.size());
    prep.inverse.resize(cloud.size());
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        prep.footprints[i] = project(cloud, i, frame, dilation);
        if (prep.footprints[i].culled) continue;
        prep.inverse[i] = prep.footprints[i].cov.inverse();
        prep.order.push_back(static_cast<int>(i));
    }
    std::stable_sort(prep.order.begin(), prep.order.end(),
                     [&](int a, int b) { return prep.footprints[a].depth < prep.footprints[b].depth; });
    return prep;
}

double gaussian_at(const Prepared& prep, int i, double px, double py) {
    const Eigen::Vector2d d = Eigen::Vector2d(px, py) - prep.footprints[i].mean;
    return std::exp(-0.5 * d.dot(prep.inverse[i] * d));
}

Eigen::Vector3d activated_color(const GaussianCloudD& cloud, int i) {
    Eigen::Vector3d c;
    for (int k = 0; k < 3; ++k) c[k] = std::clamp(0.5 + kShC0 * cloud.color_dc[i][k], 0.0, 1.0);
    return c;
}

}  // namespace

Result render(const GaussianCloudD& cloud, const CameraPose& camera, const RenderSettings& settings) {
    cloud.validate();
    const CameraFrame frame = camera.frame();
    const Prepared prep = prepare(cloud, frame, settings.cov2d_dilation);
    const Eigen::Vector3d bg(settings.background[0], settings.background[1], settings.background[2]);

    Result res;
    res.image = Image(camera.height, camera.width);
    res.alpha.assign(static_cast<std::size_t>(camera.width) * camera.height, 0.0);
    res.trace.width = camera.width;
    res.trace.height = camera.height;
    res.trace.pixels.resize(res.alpha.size());

    for (int py = 0; py < camera.height; ++py) {
        for (int px = 0; px < camera.width; ++px) {
            const std::size_t p = static_cast<std::size_t>(py) * camera.width + px;
            double trans = 1.0;
            Eigen::Vector3d color = Eigen::Vector3d::Zero();
            for (int i : prep.order) {
                const double raw = cloud.opacity(i) * gaussian_at(prep, i, px + 0.5, py + 0.5);
                const double sigma = std::min(settings.max_alpha, raw);
                if (sigma < settings.min_alpha) continue;
                color += activated_color(cloud, i) * sigma * trans;
                trans *= 1.0 - sigma;
                res.trace.pixels[p].push_back({i, raw > settings.max_alpha});
            }
            color += bg * trans;
            for (int c = 0; c < 3; ++c) res.image.at(py, px, c) = color[c];
            res.alpha[p] = 1.0 - trans;
        }
    }
    return res;
}

Image render_frozen(const GaussianCloudD& cloud, const CameraPose& camera, const RenderSettings& settings,
                    const Trace& trace) {
    if (trace.width != camera.width || trace.height != camera.height) throw ContractError("trace size mismatch");
    const CameraFrame frame = camera.frame();
    const Prepared prep = prepare(cloud, frame, settings.cov2d_dilation);
    const Eigen::Vector3d bg(settings.background[0], settings.background[1], settings.background[2]);
    Image img(camera.height, camera.width);
    for (int py = 0; py < camera.height; ++py) {
        for (int px = 0; px < camera.width; ++px) {
            double trans = 1.0;
            Eigen::Vector3d color = Eigen::Vector3d::Zero();
            for (const TraceEntry& e : trace.pixels[static_cast<std::size_t>(py) * camera.width + px]) {
                const double sigma =
                    e.clamped ? settings.max_alpha : cloud.opacity(e.splat) * gaussian_at(prep, e.splat, px + 0.5, py + 0.5);
                color += activated_color(cloud, e.splat) * sigma * trans;
                trans *= 1.0 - sigma;
            }
            color += bg * trans;
            for (int c = 0; c < 3; ++c) img.at(py, px, c) = color[c];
        }
    }
    return img;
}

std::vector<double> compositing_weights(const GaussianCloudD& cloud, const CameraPose& camera,
                                        const RenderSettings& settings, int px, int py) {
    const CameraFrame frame = camera.frame();
    const Prepared prep = prepare(cloud, frame, settings.cov2d_dilation);
    std::vector<double> weights(cloud.size() + 1, 0.0);
    double trans = 1.0;
    for (int i : prep.order) {
        const double sigma = std::min(settings.max_alpha, cloud.opacity(i) * gaussian_at(prep, i, px + 0.5, py + 0.5));
        if (sigma < settings.min_alpha) continue;
        weights[i] = sigma * trans;
        trans *= 1.0 - sigma;
    }
    weights.back() = trans;
    return weights;
}

}  // namespace cforge::reference
