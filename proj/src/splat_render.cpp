#include "cforge/splat_render.hpp"

#include "cforge/errors.hpp"

#include <Eigen/Geometry>
#include <omp.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

namespace cforge {

// ---------------------------------------------------------------------------
// Camera
// ---------------------------------------------------------------------------

void CameraPose::validate() const {
    if (!(distance > 0.0) || !std::isfinite(distance)) throw InvalidParameter("camera distance must be positive");
    if (!(fovy_deg > 0.0 && fovy_deg < 180.0)) throw InvalidParameter("camera fovy must lie in (0, 180) degrees");
    if (!(std::abs(elevation_deg) < 89.9)) throw InvalidParameter("camera elevation must lie in (-90, 90) degrees");
    if (!std::isfinite(azimuth_deg)) throw InvalidParameter("camera azimuth must be finite");
    if (width <= 0 || height <= 0) throw InvalidParameter("camera image size must be positive");
    if (!(near_plane > 0.0 && far_plane > near_plane)) throw InvalidParameter("camera needs 0 < near < far");
}

CameraFrame CameraPose::frame() const {
    validate();
    constexpr double deg = std::numbers::pi / 180.0;
    const double el = elevation_deg * deg;
    const double az = azimuth_deg * deg;
    const Eigen::Vector3d tgt(target[0], target[1], target[2]);
    const Eigen::Vector3d offset(std::cos(el) * std::sin(az), std::sin(el), std::cos(el) * std::cos(az));

    CameraFrame f;
    f.eye = tgt + distance * offset;
    const Eigen::Vector3d forward = (tgt - f.eye).normalized();
    const Eigen::Vector3d right = forward.cross(Eigen::Vector3d::UnitY()).normalized();
    const Eigen::Vector3d down = forward.cross(right);
    f.world_to_camera.row(0) = right;
    f.world_to_camera.row(1) = down;
    f.world_to_camera.row(2) = forward;
    f.fy = 0.5 * height / std::tan(0.5 * fovy_deg * deg);
    f.fx = f.fy;
    f.cx = 0.5 * width;
    f.cy = 0.5 * height;
    f.width = width;
    f.height = height;
    f.near_plane = near_plane;
    f.far_plane = far_plane;
    return f;
}

namespace {

template <typename T>
using Mat3 = std::array<std::array<T, 3>, 3>;

template <typename T>
Mat3<T> quat_to_rotation(T w, T x, T y, T z) {
    Mat3<T> r;
    r[0] = {T(1) - T(2) * (y * y + z * z), T(2) * (x * y - w * z), T(2) * (x * z + w * y)};
    r[1] = {T(2) * (x * y + w * z), T(1) - T(2) * (x * x + z * z), T(2) * (y * z - w * x)};
    r[2] = {T(2) * (x * z - w * y), T(2) * (y * z + w * x), T(1) - T(2) * (x * x + y * y)};
    return r;
}

/// Frame quantities converted once to the kernel's scalar type.
template <typename T>
struct KernelFrame {
    Mat3<T> w;
    std::array<T, 3> eye;
    T fx, fy, cx, cy, near_plane, far_plane;

    explicit KernelFrame(const CameraFrame& f) {
        for (int i = 0; i < 3; ++i) {
            for (int j = 0; j < 3; ++j) w[i][j] = T(f.world_to_camera(i, j));
            eye[i] = T(f.eye[i]);
        }
        fx = T(f.fx);
        fy = T(f.fy);
        cx = T(f.cx);
        cy = T(f.cy);
        near_plane = T(f.near_plane);
        far_plane = T(f.far_plane);
    }
};

/// Intermediate values of the projection reused by the backward pass.
template <typename T>
struct ProjectionTerms {
    std::array<T, 4> qhat;     // normalized quaternion
    T qnorm;
    Mat3<T> rot;
    std::array<T, 3> scale;
    Mat3<T> sigma;             // world covariance
    std::array<std::array<T, 3>, 2> jw;  // J * W
};

template <typename T>
bool project_kernel(const std::array<T, 3>& pos, const std::array<T, 3>& log_scale, const std::array<T, 4>& q,
                    const KernelFrame<T>& f, T dilation, Projection<T>& out, ProjectionTerms<T>* terms) {
    out.culled = true;
    const T qn = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
    if (!(qn > T(0)) || !std::isfinite(qn)) return false;

    std::array<T, 3> d{pos[0] - f.eye[0], pos[1] - f.eye[1], pos[2] - f.eye[2]};
    std::array<T, 3> t{};
    for (int i = 0; i < 3; ++i) t[i] = f.w[i][0] * d[0] + f.w[i][1] * d[1] + f.w[i][2] * d[2];
    out.camera = t;
    out.depth = t[2];
    if (!(t[2] >= f.near_plane && t[2] <= f.far_plane)) return false;

    const std::array<T, 4> qh{q[0] / qn, q[1] / qn, q[2] / qn, q[3] / qn};
    const Mat3<T> r = quat_to_rotation(qh[0], qh[1], qh[2], qh[3]);
    const std::array<T, 3> s{std::exp(log_scale[0]), std::exp(log_scale[1]), std::exp(log_scale[2])};

    Mat3<T> m;  // R * S
    for (int i = 0; i < 3; ++i) {
        for (int k = 0; k < 3; ++k) m[i][k] = r[i][k] * s[k];
    }
    Mat3<T> sigma;
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) sigma[i][j] = m[i][0] * m[j][0] + m[i][1] * m[j][1] + m[i][2] * m[j][2];
    }

    const T iz = T(1) / t[2];
    const T iz2 = iz * iz;
    const T j00 = f.fx * iz, j02 = -f.fx * t[0] * iz2;
    const T j11 = f.fy * iz, j12 = -f.fy * t[1] * iz2;
    std::array<std::array<T, 3>, 2> jw;
    for (int c = 0; c < 3; ++c) {
        jw[0][c] = j00 * f.w[0][c] + j02 * f.w[2][c];
        jw[1][c] = j11 * f.w[1][c] + j12 * f.w[2][c];
    }
    // cov2 = JW * Sigma * (JW)^T
    std::array<std::array<T, 3>, 2> js{};
    for (int a = 0; a < 2; ++a) {
        for (int c = 0; c < 3; ++c) js[a][c] = jw[a][0] * sigma[0][c] + jw[a][1] * sigma[1][c] + jw[a][2] * sigma[2][c];
    }
    const T cxx = js[0][0] * jw[0][0] + js[0][1] * jw[0][1] + js[0][2] * jw[0][2] + dilation;
    const T cxy = js[0][0] * jw[1][0] + js[0][1] * jw[1][1] + js[0][2] * jw[1][2];
    const T cyy = js[1][0] * jw[1][0] + js[1][1] * jw[1][1] + js[1][2] * jw[1][2] + dilation;
    out.cov = {cxx, cxy, cyy};
    out.mean = {f.fx * t[0] * iz + f.cx, f.fy * t[1] * iz + f.cy};

    const T det = cxx * cyy - cxy * cxy;
    if (!(det > T(0)) || !std::isfinite(det)) return false;
    out.conic = {cyy / det, -cxy / det, cxx / det};
    out.culled = false;

    if (terms) {
        terms->qhat = qh;
        terms->qnorm = qn;
        terms->rot = r;
        terms->scale = s;
        terms->sigma = sigma;
        terms->jw = jw;
    }
    return true;
}

template <typename T>
struct ScreenGrad {
    T mean[2] = {0, 0};
    T conic[3] = {0, 0, 0};
    T opacity = 0;
    T color[3] = {0, 0, 0};
};

template <typename T>
void check_output(const BasicGaussianCloud<T>& cloud, const CameraPose& camera, const RenderOutput<T>& out) {
    if (out.splat_count != cloud.size() || out.footprints.size() != cloud.size()) {
        throw ContractError("render output was produced for a cloud of a different size");
    }
    if (!(out.camera == camera)) throw ContractError("render output was produced from a different camera");
}

}  // namespace

template <typename T>
Projection<T> project_gaussian(const std::array<T, 3>& position, const std::array<T, 3>& log_scale,
                               const std::array<T, 4>& rotation, const CameraFrame& frame, double dilation) {
    const KernelFrame<T> kf(frame);
    Projection<T> p;
    project_kernel<T>(position, log_scale, rotation, kf, T(dilation), p, nullptr);
    return p;
}

template <typename T>
Projection<T> project_gaussian(const BasicGaussianCloud<T>& cloud, std::size_t i, const CameraPose& camera,
                               const RenderSettings& settings) {
    const auto& q = cloud.rotations.at(i);
    if (q[0] == T(0) && q[1] == T(0) && q[2] == T(0) && q[3] == T(0)) {
        throw InvalidParameter("splat " + std::to_string(i) + " has a zero quaternion");
    }
    return project_gaussian(cloud.positions[i], cloud.log_scales[i], q, camera.frame(), settings.cov2d_dilation);
}

// ---------------------------------------------------------------------------
// Output / gradient containers
// ---------------------------------------------------------------------------

template <typename T>
Image RenderOutput<T>::to_image() const {
    Image img(height, width);
    std::copy(image.begin(), image.end(), img.data.begin());
    return img;
}

template <typename T>
CloudGradients<T>::CloudGradients(std::size_t n)
    : positions(n, {0, 0, 0}),
      log_scales(n, {0, 0, 0}),
      rotations(n, {0, 0, 0, 0}),
      color_dc(n, {0, 0, 0}),
      opacity_logits(n, T(0)),
      mean2d(n, {0, 0}),
      visible(n, 0) {}

template <typename T>
bool CloudGradients<T>::all_finite() const {
    auto finite = [](const auto& arrays) {
        for (const auto& a : arrays) {
            for (T v : a) {
                if (!std::isfinite(v)) return false;
            }
        }
        return true;
    };
    return finite(positions) && finite(log_scales) && finite(rotations) && finite(color_dc) &&
           std::all_of(opacity_logits.begin(), opacity_logits.end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
CloudGradients<T>& CloudGradients<T>::operator+=(const CloudGradients& rhs) {
    if (rhs.size() != size()) throw ShapeError("gradient sizes differ");
    for (std::size_t i = 0; i < size(); ++i) {
        for (int k = 0; k < 3; ++k) {
            positions[i][k] += rhs.positions[i][k];
            log_scales[i][k] += rhs.log_scales[i][k];
            color_dc[i][k] += rhs.color_dc[i][k];
        }
        for (int k = 0; k < 4; ++k) rotations[i][k] += rhs.rotations[i][k];
        for (int k = 0; k < 2; ++k) mean2d[i][k] += rhs.mean2d[i][k];
        opacity_logits[i] += rhs.opacity_logits[i];
        visible[i] = static_cast<std::uint8_t>(visible[i] | rhs.visible[i]);
    }
    return *this;
}

template <typename T>
CloudGradients<T>& CloudGradients<T>::operator*=(T s) {
    for (std::size_t i = 0; i < size(); ++i) {
        for (int k = 0; k < 3; ++k) {
            positions[i][k] *= s;
            log_scales[i][k] *= s;
            color_dc[i][k] *= s;
        }
        for (int k = 0; k < 4; ++k) rotations[i][k] *= s;
        for (int k = 0; k < 2; ++k) mean2d[i][k] *= s;
        opacity_logits[i] *= s;
    }
    return *this;
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

template <typename T>
RenderOutput<T> render(const BasicGaussianCloud<T>& cloud, const CameraPose& camera, const RenderSettings& settings) {
    cloud.validate();
    if (settings.tile_size <= 0) throw InvalidParameter("tile size must be positive");
    if (!(settings.min_alpha > 0.0 && settings.max_alpha <= 1.0 && settings.min_alpha < settings.max_alpha)) {
        throw InvalidParameter("render needs 0 < min_alpha < max_alpha <= 1");
    }
    const CameraFrame frame = camera.frame();
    const KernelFrame<T> kf(frame);
    const int W = camera.width;
    const int H = camera.height;
    const int ts = settings.tile_size;
    const T min_alpha = T(settings.min_alpha);
    const T max_alpha = T(settings.max_alpha);
    const T dilation = T(settings.cov2d_dilation);

    RenderOutput<T> out;
    out.height = H;
    out.width = W;
    out.camera = camera;
    out.settings = settings;
    out.splat_count = cloud.size();
    out.footprints.resize(cloud.size());
    const int tiles_x = out.tiles_x();
    const int tiles_y = out.tiles_y();

    const auto n = static_cast<std::ptrdiff_t>(cloud.size());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        SplatFootprint<T>& fp = out.footprints[i];
        if (!project_kernel(cloud.positions[i], cloud.log_scales[i], cloud.rotations[i], kf, dilation, fp.proj,
                            static_cast<ProjectionTerms<T>*>(nullptr))) {
            continue;
        }
        fp.opacity = cloud.opacity(i);
        fp.color = cloud.color(i);
        if (!(fp.opacity >= min_alpha) || !std::isfinite(fp.proj.mean[0]) || !std::isfinite(fp.proj.mean[1])) {
            continue;
        }
        // Beyond this radius sigma < min_alpha for every pixel, so the tile
        // cull never drops a contribution the compositor would keep.
        const T mid = T(0.5) * (fp.proj.cov[0] + fp.proj.cov[2]);
        const T det = fp.proj.cov[0] * fp.proj.cov[2] - fp.proj.cov[1] * fp.proj.cov[1];
        const T lambda_max = mid + std::sqrt(std::max(mid * mid - det, T(0)));
        fp.radius = std::sqrt(T(2) * lambda_max * std::log(fp.opacity / min_alpha)) + T(1e-3);
        const int px0 = std::max(0, static_cast<int>(std::ceil(fp.proj.mean[0] - fp.radius - T(0.5))));
        const int px1 = std::min(W - 1, static_cast<int>(std::floor(fp.proj.mean[0] + fp.radius - T(0.5))));
        const int py0 = std::max(0, static_cast<int>(std::ceil(fp.proj.mean[1] - fp.radius - T(0.5))));
        const int py1 = std::min(H - 1, static_cast<int>(std::floor(fp.proj.mean[1] + fp.radius - T(0.5))));
        if (px0 > px1 || py0 > py1) continue;
        fp.tile_x0 = px0 / ts;
        fp.tile_x1 = px1 / ts;
        fp.tile_y0 = py0 / ts;
        fp.tile_y1 = py1 / ts;
        fp.visible = true;
    }

    // Global front-to-back order; ties broken by index so sorting is total.
    std::vector<std::uint32_t> order;
    order.reserve(cloud.size());
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        if (out.footprints[i].visible) order.push_back(static_cast<std::uint32_t>(i));
    }
    std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
        const T da = out.footprints[a].proj.depth;
        const T db = out.footprints[b].proj.depth;
        return da < db || (da == db && a < b);
    });

    const int tile_count = tiles_x * tiles_y;
    out.tile_offsets.assign(static_cast<std::size_t>(tile_count) + 1, 0);
    for (std::uint32_t i : order) {
        const auto& fp = out.footprints[i];
        for (int ty = fp.tile_y0; ty <= fp.tile_y1; ++ty) {
            for (int tx = fp.tile_x0; tx <= fp.tile_x1; ++tx) ++out.tile_offsets[ty * tiles_x + tx + 1];
        }
    }
    std::partial_sum(out.tile_offsets.begin(), out.tile_offsets.end(), out.tile_offsets.begin());
    out.tile_splats.resize(out.tile_offsets.back());
    std::vector<std::uint32_t> cursor(out.tile_offsets.begin(), out.tile_offsets.end() - 1);
    for (std::uint32_t i : order) {
        const auto& fp = out.footprints[i];
        for (int ty = fp.tile_y0; ty <= fp.tile_y1; ++ty) {
            for (int tx = fp.tile_x0; tx <= fp.tile_x1; ++tx) out.tile_splats[cursor[ty * tiles_x + tx]++] = i;
        }
    }

    const std::size_t pixels = static_cast<std::size_t>(W) * H;
    out.image.assign(pixels * 3, T(0));
    out.alpha.assign(pixels, T(0));
    out.final_transmittance.assign(pixels, T(1));
    out.contributor_end.assign(pixels, 0);
    const T bg[3] = {T(settings.background[0]), T(settings.background[1]), T(settings.background[2])};

#pragma omp parallel for schedule(static)
    for (int tile = 0; tile < tile_count; ++tile) {
        const int tx = tile % tiles_x;
        const int ty = tile / tiles_x;
        const std::uint32_t begin = out.tile_offsets[tile];
        const std::uint32_t end = out.tile_offsets[tile + 1];
        for (int py = ty * ts; py < std::min(H, (ty + 1) * ts); ++py) {
            for (int px = tx * ts; px < std::min(W, (tx + 1) * ts); ++px) {
                const T pxc = T(px) + T(0.5);
                const T pyc = T(py) + T(0.5);
                T trans = T(1);
                T c[3] = {0, 0, 0};
                std::uint32_t last = 0;
                for (std::uint32_t k = begin; k < end; ++k) {
                    const auto& fp = out.footprints[out.tile_splats[k]];
                    const T dx = pxc - fp.proj.mean[0];
                    const T dy = pyc - fp.proj.mean[1];
                    const T power = T(-0.5) * (fp.proj.conic[0] * dx * dx + fp.proj.conic[2] * dy * dy) -
                                    fp.proj.conic[1] * dx * dy;
                    if (power > T(0)) continue;
                    const T sigma = std::min(max_alpha, fp.opacity * std::exp(power));
                    if (sigma < min_alpha) continue;
                    for (int ch = 0; ch < 3; ++ch) c[ch] += fp.color[ch] * sigma * trans;
                    trans *= T(1) - sigma;
                    last = k - begin + 1;
                }
                const std::size_t p = static_cast<std::size_t>(py) * W + px;
                for (int ch = 0; ch < 3; ++ch) out.image[p * 3 + ch] = c[ch] + bg[ch] * trans;
                out.alpha[p] = T(1) - trans;
                out.final_transmittance[p] = trans;
                out.contributor_end[p] = last;
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

template <typename T>
CloudGradients<T> render_backward(const BasicGaussianCloud<T>& cloud, const CameraPose& camera,
                                  const RenderOutput<T>& out, std::span<const T> dl_dimg) {
    cloud.validate();
    check_output(cloud, camera, out);
    const int W = out.width;
    const int H = out.height;
    if (dl_dimg.size() != static_cast<std::size_t>(W) * H * 3) {
        throw ShapeError("image gradient shape does not match the render output");
    }
    const std::size_t n = cloud.size();
    const int ts = out.settings.tile_size;
    const int tiles_x = out.tiles_x();
    const int tile_count = tiles_x * out.tiles_y();
    const T min_alpha = T(out.settings.min_alpha);
    const T max_alpha = T(out.settings.max_alpha);
    const T bg[3] = {T(out.settings.background[0]), T(out.settings.background[1]), T(out.settings.background[2])};

    const int max_threads = omp_get_max_threads();
    std::vector<std::vector<ScreenGrad<T>>> partial(static_cast<std::size_t>(max_threads));

#pragma omp parallel
    {
        auto& acc = partial[static_cast<std::size_t>(omp_get_thread_num())];
        acc.assign(n, ScreenGrad<T>{});
#pragma omp for schedule(static)
        for (int tile = 0; tile < tile_count; ++tile) {
            const int tx = tile % tiles_x;
            const int ty = tile / tiles_x;
            const std::uint32_t begin = out.tile_offsets[tile];
            for (int py = ty * ts; py < std::min(H, (ty + 1) * ts); ++py) {
                for (int px = tx * ts; px < std::min(W, (tx + 1) * ts); ++px) {
                    const std::size_t p = static_cast<std::size_t>(py) * W + px;
                    const T g[3] = {dl_dimg[p * 3], dl_dimg[p * 3 + 1], dl_dimg[p * 3 + 2]};
                    if (g[0] == T(0) && g[1] == T(0) && g[2] == T(0)) continue;
                    const T pxc = T(px) + T(0.5);
                    const T pyc = T(py) + T(0.5);
                    T trans = out.final_transmittance[p];
                    // Color accumulated behind the current splat, background included.
                    T behind[3] = {bg[0] * trans, bg[1] * trans, bg[2] * trans};
                    for (std::uint32_t k = begin + out.contributor_end[p]; k-- > begin;) {
                        const std::uint32_t id = out.tile_splats[k];
                        const auto& fp = out.footprints[id];
                        const T dx = pxc - fp.proj.mean[0];
                        const T dy = pyc - fp.proj.mean[1];
                        const T power = T(-0.5) * (fp.proj.conic[0] * dx * dx + fp.proj.conic[2] * dy * dy) -
                                        fp.proj.conic[1] * dx * dy;
                        if (power > T(0)) continue;
                        const T gauss = std::exp(power);
                        const T raw = fp.opacity * gauss;
                        const T sigma = std::min(max_alpha, raw);
                        if (sigma < min_alpha) continue;
                        const T one_minus = T(1) - sigma;
                        trans /= one_minus;  // transmittance in front of this splat

                        ScreenGrad<T>& sg = acc[id];
                        T dl_dsigma = 0;
                        for (int ch = 0; ch < 3; ++ch) {
                            sg.color[ch] += sigma * trans * g[ch];
                            dl_dsigma += g[ch] * (fp.color[ch] * trans - behind[ch] / one_minus);
                            behind[ch] += fp.color[ch] * sigma * trans;
                        }
                        if (raw > max_alpha) continue;  // clamped: flat in opacity and shape
                        sg.opacity += dl_dsigma * gauss;
                        const T gp = dl_dsigma * sigma;
                        sg.mean[0] += gp * (fp.proj.conic[0] * dx + fp.proj.conic[1] * dy);
                        sg.mean[1] += gp * (fp.proj.conic[1] * dx + fp.proj.conic[2] * dy);
                        sg.conic[0] += gp * T(-0.5) * dx * dx;
                        sg.conic[1] += gp * -dx * dy;
                        sg.conic[2] += gp * T(-0.5) * dy * dy;
                    }
                }
            }
        }
    }

    std::vector<ScreenGrad<T>> screen(n);
    for (const auto& acc : partial) {
        if (acc.empty()) continue;
        for (std::size_t i = 0; i < n; ++i) {
            for (int k = 0; k < 2; ++k) screen[i].mean[k] += acc[i].mean[k];
            for (int k = 0; k < 3; ++k) {
                screen[i].conic[k] += acc[i].conic[k];
                screen[i].color[k] += acc[i].color[k];
            }
            screen[i].opacity += acc[i].opacity;
        }
    }

    CloudGradients<T> grads(n);
    const KernelFrame<T> kf(out.camera.frame());
    const T dilation = T(out.settings.cov2d_dilation);
    const auto count = static_cast<std::ptrdiff_t>(n);

#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < count; ++i) {
        const auto& fp = out.footprints[i];
        if (!fp.visible) continue;
        const ScreenGrad<T>& sg = screen[i];
        grads.visible[i] = 1;
        grads.mean2d[i] = {sg.mean[0], sg.mean[1]};

        // color: clamp(0.5 + C0 * dc)
        for (int ch = 0; ch < 3; ++ch) {
            const T raw = dc_to_color(cloud.color_dc[i][ch]);
            grads.color_dc[i][ch] = (raw > T(0) && raw < T(1)) ? sg.color[ch] * T(kShC0) : T(0);
        }
        grads.opacity_logits[i] = sg.opacity * fp.opacity * (T(1) - fp.opacity);

        Projection<T> proj;
        ProjectionTerms<T> pt;
        project_kernel(cloud.positions[i], cloud.log_scales[i], cloud.rotations[i], kf, dilation, proj, &pt);

        // conic -> 2D covariance
        const T A = proj.cov[0], B = proj.cov[1], C = proj.cov[2];
        const T det = A * C - B * B;
        const T inv_det2 = T(1) / (det * det);
        const T ga = sg.conic[0], gb = sg.conic[1], gc = sg.conic[2];
        const T gA = inv_det2 * (-C * C * ga + B * C * gb - B * B * gc);
        const T gB = inv_det2 * (T(2) * B * C * ga - (A * C + B * B) * gb + T(2) * A * B * gc);
        const T gC = inv_det2 * (-B * B * ga + A * B * gb - A * A * gc);
        const T g2[2][2] = {{gA, T(0.5) * gB}, {T(0.5) * gB, gC}};

        // cov2 = JW Sigma (JW)^T
        const auto& jw = pt.jw;
        Mat3<T> g_sigma;
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) {
                T v = 0;
                for (int a = 0; a < 2; ++a) {
                    for (int b = 0; b < 2; ++b) v += jw[a][r] * g2[a][b] * jw[b][c];
                }
                g_sigma[r][c] = v;
            }
        }
        // dL/d(JW) = 2 G2 (JW) Sigma, then dL/dJ = dL/d(JW) W^T
        T g_jw[2][3];
        for (int a = 0; a < 2; ++a) {
            T tmp[3];
            for (int c = 0; c < 3; ++c) tmp[c] = g2[a][0] * jw[0][c] + g2[a][1] * jw[1][c];
            for (int c = 0; c < 3; ++c) {
                g_jw[a][c] = T(2) * (tmp[0] * pt.sigma[0][c] + tmp[1] * pt.sigma[1][c] + tmp[2] * pt.sigma[2][c]);
            }
        }
        T g_j[2][3];
        for (int a = 0; a < 2; ++a) {
            for (int r = 0; r < 3; ++r) g_j[a][r] = g_jw[a][0] * kf.w[r][0] + g_jw[a][1] * kf.w[r][1] + g_jw[a][2] * kf.w[r][2];
        }

        const T x = proj.camera[0], y = proj.camera[1], z = proj.camera[2];
        const T iz = T(1) / z;
        const T iz2 = iz * iz;
        const T iz3 = iz2 * iz;
        const T gmx = sg.mean[0], gmy = sg.mean[1];
        std::array<T, 3> gt{};
        gt[0] = gmx * kf.fx * iz - g_j[0][2] * kf.fx * iz2;
        gt[1] = gmy * kf.fy * iz - g_j[1][2] * kf.fy * iz2;
        gt[2] = -gmx * kf.fx * x * iz2 - gmy * kf.fy * y * iz2 - g_j[0][0] * kf.fx * iz2 +
                g_j[0][2] * T(2) * kf.fx * x * iz3 - g_j[1][1] * kf.fy * iz2 + g_j[1][2] * T(2) * kf.fy * y * iz3;
        for (int c = 0; c < 3; ++c) grads.positions[i][c] = kf.w[0][c] * gt[0] + kf.w[1][c] * gt[1] + kf.w[2][c] * gt[2];

        // Sigma = M M^T, M = R S
        Mat3<T> m;
        for (int r = 0; r < 3; ++r) {
            for (int k = 0; k < 3; ++k) m[r][k] = pt.rot[r][k] * pt.scale[k];
        }
        Mat3<T> g_m;
        for (int r = 0; r < 3; ++r) {
            for (int k = 0; k < 3; ++k) {
                g_m[r][k] = T(2) * (g_sigma[r][0] * m[0][k] + g_sigma[r][1] * m[1][k] + g_sigma[r][2] * m[2][k]);
            }
        }
        Mat3<T> g_r;
        for (int k = 0; k < 3; ++k) {
            T gs = 0;
            for (int r = 0; r < 3; ++r) {
                gs += pt.rot[r][k] * g_m[r][k];
                g_r[r][k] = g_m[r][k] * pt.scale[k];
            }
            grads.log_scales[i][k] = gs * pt.scale[k];
        }

        const T w = pt.qhat[0], qx = pt.qhat[1], qy = pt.qhat[2], qz = pt.qhat[3];
        const T gw = T(2) * (-qz * g_r[0][1] + qy * g_r[0][2] + qz * g_r[1][0] - qx * g_r[1][2] - qy * g_r[2][0] +
                             qx * g_r[2][1]);
        const T gx = T(2) * (qy * g_r[0][1] + qz * g_r[0][2] + qy * g_r[1][0] - T(2) * qx * g_r[1][1] -
                             w * g_r[1][2] + qz * g_r[2][0] + w * g_r[2][1] - T(2) * qx * g_r[2][2]);
        const T gy = T(2) * (-T(2) * qy * g_r[0][0] + qx * g_r[0][1] + w * g_r[0][2] + qx * g_r[1][0] +
                             qz * g_r[1][2] - w * g_r[2][0] + qz * g_r[2][1] - T(2) * qy * g_r[2][2]);
        const T gz = T(2) * (-T(2) * qz * g_r[0][0] - w * g_r[0][1] + qx * g_r[0][2] + w * g_r[1][0] -
                             T(2) * qz * g_r[1][1] + qy * g_r[1][2] + qx * g_r[2][0] + qy * g_r[2][1]);
        const T gq[4] = {gw, gx, gy, gz};
        const T proj_dot = gq[0] * pt.qhat[0] + gq[1] * pt.qhat[1] + gq[2] * pt.qhat[2] + gq[3] * pt.qhat[3];
        for (int k = 0; k < 4; ++k) grads.rotations[i][k] = (gq[k] - pt.qhat[k] * proj_dot) / pt.qnorm;
    }
    return grads;
}

template <typename T>
CloudGradients<T> render_backward(const BasicGaussianCloud<T>& cloud, const CameraPose& camera,
                                  const RenderOutput<T>& output, const Image& image_gradient) {
    check_output(cloud, camera, output);
    if (image_gradient.height != output.height || image_gradient.width != output.width) {
        throw ShapeError("image gradient shape does not match the render output");
    }
    std::vector<T> g(image_gradient.data.begin(), image_gradient.data.end());
    return render_backward(cloud, camera, output, std::span<const T>(g));
}

#define CFORGE_INSTANTIATE_RENDER(T)                                                                              \
    template Projection<T> project_gaussian<T>(const std::array<T, 3>&, const std::array<T, 3>&,                 \
                                               const std::array<T, 4>&, const CameraFrame&, double);             \
    template Projection<T> project_gaussian<T>(const BasicGaussianCloud<T>&, std::size_t, const CameraPose&,     \
                                               const RenderSettings&);                                           \
    template struct RenderOutput<T>;                                                                              \
    template struct CloudGradients<T>;                                                                            \
    template RenderOutput<T> render<T>(const BasicGaussianCloud<T>&, const CameraPose&, const RenderSettings&);   \
    template CloudGradients<T> render_backward<T>(const BasicGaussianCloud<T>&, const CameraPose&,              \
                                                  const RenderOutput<T>&, std::span<const T>);                   \
    template CloudGradients<T> render_backward<T>(const BasicGaussianCloud<T>&, const CameraPose&,              \
                                                  const RenderOutput<T>&, const Image&);

CFORGE_INSTANTIATE_RENDER(float)
CFORGE_INSTANTIATE_RENDER(double)

}  // namespace cforge
