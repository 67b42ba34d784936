#include "cforge/errors.hpp"
#include "cforge/gradcheck.hpp"
#include "cforge/image_io.hpp"
#include "cforge/ply_io.hpp"
#include "cforge/splat_reference.hpp"
#include "cforge/splat_render.hpp"

#include <doctest.h>
#include <Eigen/Geometry>

#include <cstring>
#include <filesystem>
#include <numeric>
#include <sstream>

using namespace cforge;

namespace {

CameraPose front_camera(int size) {
    CameraPose c;
    c.distance = 2.0;
    c.fovy_deg = 50.0;
    c.width = size;
    c.height = size;
    return c;
}

GaussianCloudD one_splat(std::array<double, 3> pos, double scale, std::array<double, 3> rgb, double opacity) {
    GaussianCloudD c;
    const double ls = std::log(scale);
    c.push_back(pos, {ls, ls, ls}, {1, 0, 0, 0}, rgb, opacity);
    return c;
}

// Pinhole projection of a world point, independent of the library.
Eigen::Vector2d pinhole(const CameraFrame& f, const Eigen::Vector3d& p) {
    const Eigen::Vector3d c = f.world_to_camera * (p - f.eye);
    return {f.fx * c.x() / c.z() + f.cx, f.fy * c.y() / c.z() + f.cy};
}

}  // namespace

TEST_SUITE("splat_render") {

TEST_CASE("isotropic splat on the optical axis projects isotropically") {
    const auto cloud = one_splat({0, 0, 0}, 0.1, {0.5, 0.5, 0.5}, 0.5);
    const auto p = project_gaussian(cloud, 0, front_camera(32));
    REQUIRE_FALSE(p.culled);
    CHECK(std::abs(p.cov[1]) < 1e-9);
    CHECK(p.cov[0] == doctest::Approx(p.cov[2]).epsilon(1e-12));
}

TEST_CASE("doubling the scale quadruples the footprint") {
    GaussianCloudD c;
    c.push_back({0.1, -0.05, 0.2}, {std::log(0.05), std::log(0.1), std::log(0.02)}, {0.9, 0.1, 0.3, -0.2},
                {0.5, 0.5, 0.5}, 0.5);
    RenderSettings s;
    s.cov2d_dilation = 0.0;
    const auto a = project_gaussian(c, 0, front_camera(32), s);
    for (auto& v : c.log_scales[0]) v += std::log(2.0);
    const auto b = project_gaussian(c, 0, front_camera(32), s);
    for (int k = 0; k < 3; ++k) CHECK(b.cov[k] == doctest::Approx(4.0 * a.cov[k]).epsilon(1e-12));
}

TEST_CASE("projection matches a finite-difference Jacobian") {
    GaussianCloudD c;
    const std::array<double, 3> mu{0.12, -0.08, 0.15};
    const std::array<double, 3> ls{std::log(0.07), std::log(0.03), std::log(0.12)};
    const std::array<double, 4> q{0.8, 0.3, -0.4, 0.2};
    c.push_back(mu, ls, q, {0.5, 0.5, 0.5}, 0.5);
    CameraPose cam = front_camera(48);
    cam.elevation_deg = 20;
    cam.azimuth_deg = -35;
    RenderSettings s;
    const auto p = project_gaussian(c, 0, cam, s);
    const CameraFrame f = cam.frame();

    const Eigen::Vector3d m(mu[0], mu[1], mu[2]);
    Eigen::Matrix<double, 2, 3> jac;
    const double h = 1e-6;
    for (int k = 0; k < 3; ++k) {
        Eigen::Vector3d e = Eigen::Vector3d::Zero();
        e[k] = h;
        jac.col(k) = (pinhole(f, m + e) - pinhole(f, m - e)) / (2 * h);
    }
    const Eigen::Matrix3d r = Eigen::Quaterniond(q[0], q[1], q[2], q[3]).normalized().toRotationMatrix();
    const Eigen::Vector3d sc(std::exp(ls[0]), std::exp(ls[1]), std::exp(ls[2]));
    const Eigen::Matrix3d sigma = r * sc.cwiseAbs2().asDiagonal() * r.transpose();
    Eigen::Matrix2d cov = jac * sigma * jac.transpose();
    cov(0, 0) += s.cov2d_dilation;
    cov(1, 1) += s.cov2d_dilation;
    const Eigen::Vector2d mean = pinhole(f, m);

    CHECK(std::abs(p.mean[0] - mean[0]) < 1e-5);
    CHECK(std::abs(p.mean[1] - mean[1]) < 1e-5);
    CHECK(std::abs(p.cov[0] - cov(0, 0)) < 1e-5);
    CHECK(std::abs(p.cov[1] - cov(0, 1)) < 1e-5);
    CHECK(std::abs(p.cov[2] - cov(1, 1)) < 1e-5);
    CHECK(p.depth == doctest::Approx((f.world_to_camera * (m - f.eye)).z()).epsilon(1e-12));
}

TEST_CASE("splats behind the near plane are culled") {
    const auto c = one_splat({0, 0, 2.5}, 0.1, {0.5, 0.5, 0.5}, 0.5);  // behind the eye at z = 2
    CHECK(project_gaussian(c, 0, front_camera(16)).culled);
}

TEST_CASE("empty cloud renders the background") {
    RenderSettings s;
    s.background = {0.2, 0.4, 0.6};
    const auto out = render(GaussianCloudD{}, front_camera(20), s);
    const Image img = out.to_image();
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            CHECK(img.at(y, x, 0) == 0.2);
            CHECK(img.at(y, x, 1) == 0.4);
            CHECK(img.at(y, x, 2) == 0.6);
        }
    for (double a : out.alpha) CHECK(a == 0.0);
}

TEST_CASE("saturated splat hits the density clamp") {
    RenderSettings s;
    s.background = {1.0, 0.0, 0.5};
    const std::array<double, 3> c1{0.2, 0.7, 0.9};
    auto cloud = one_splat({0, 0, 0}, 0.2, c1, 0.5);
    cloud.opacity_logits[0] = 40.0;
    const Image img = render(cloud, front_camera(15), s).to_image();
    for (int k = 0; k < 3; ++k) CHECK(img.at(7, 7, k) == doctest::Approx(0.99 * c1[k] + 0.01 * s.background[k]).epsilon(1e-12));
}

TEST_CASE("two co-located half-density splats") {
    RenderSettings s;
    s.background = {0.1, 0.3, 0.9};
    const std::array<double, 3> c1{0.9, 0.2, 0.4}, c2{0.1, 0.8, 0.6};
    auto cloud = one_splat({0, 0, 0}, 0.2, c1, 0.5);
    const auto back = one_splat({0, 0, -1e-3}, 0.2, c2, 0.5);
    cloud.append_from(back, 0);
    const Image img = render(cloud, front_camera(15), s).to_image();
    for (int k = 0; k < 3; ++k) {
        CHECK(std::abs(img.at(7, 7, k) - (0.5 * c1[k] + 0.25 * c2[k] + 0.25 * s.background[k])) < 1e-6);
    }
}

TEST_CASE("compositing weights partition unity") {
    Rng rng = make_stream(4, 0);
    const auto cloud = random_gradcheck_scene(rng, 8);
    const auto cam = gradcheck_camera(16);
    for (int py = 0; py < 16; py += 3) {
        for (int px = 0; px < 16; px += 3) {
            const auto w = reference::compositing_weights(cloud, cam, {}, px, py);
            CHECK(std::abs(std::accumulate(w.begin(), w.end(), 0.0) - 1.0) < 1e-12);
        }
    }
}

TEST_CASE("tiled renderer agrees with the serial reference") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng = make_stream(seed, 1);
        const auto cloud = random_gradcheck_scene(rng, 10);
        CameraPose cam = gradcheck_camera(40);  // spans several tiles
        const Image a = render(cloud, cam).to_image();
        const Image b = reference::render(cloud, cam).image;
        CHECK(max_abs_diff(a, b) < 1e-12);
    }
}

TEST_CASE("permuting splats with distinct depths leaves the image unchanged") {
    Rng rng = make_stream(8, 0);
    auto cloud = random_gradcheck_scene(rng, 7);
    const auto cam = gradcheck_camera(24);
    const Image base = render(cloud, cam).to_image();
    GaussianCloudD shuffled;
    for (std::size_t i : {3, 0, 6, 1, 5, 2, 4}) shuffled.append_from(cloud, i);
    CHECK(max_abs_diff(base, render(shuffled, cam).to_image()) < 1e-14);
}

TEST_CASE("vanishing opacity converges to the background") {
    Rng rng = make_stream(9, 0);
    auto cloud = random_gradcheck_scene(rng, 6);
    for (auto& o : cloud.opacity_logits) o = -30.0;
    RenderSettings s;
    s.background = {0.3, 0.3, 0.3};
    const Image img = render(cloud, gradcheck_camera(16), s).to_image();
    CHECK(max_abs_diff(img, Image(16, 16, 0.3)) < 1e-12);
}

TEST_CASE("float and double paths agree") {
    Rng rng = make_stream(10, 0);
    const auto cloud = random_gradcheck_scene(rng, 10);
    const Image a = render(cloud, gradcheck_camera(32)).to_image();
    const Image b = render(cloud_cast<float>(cloud), gradcheck_camera(32)).to_image();
    CHECK(max_abs_diff(a, b) < 1e-4);
}

TEST_CASE("zero upstream gradient gives zero parameter gradients") {
    Rng rng = make_stream(11, 0);
    const auto cloud = random_gradcheck_scene(rng, 5);
    const auto cam = gradcheck_camera(16);
    const auto out = render(cloud, cam);
    const auto g = render_backward(cloud, cam, out, Image(16, 16, 0.0));
    for (std::size_t i = 0; i < g.size(); ++i) {
        for (int k = 0; k < 3; ++k) {
            CHECK(g.positions[i][k] == 0.0);
            CHECK(g.log_scales[i][k] == 0.0);
            CHECK(g.color_dc[i][k] == 0.0);
        }
        for (int k = 0; k < 4; ++k) CHECK(g.rotations[i][k] == 0.0);
        CHECK(g.opacity_logits[i] == 0.0);
    }
}

TEST_CASE("color gradient of a single splat is its coverage") {
    const auto cloud = one_splat({0.05, 0.02, 0}, 0.15, {0.4, 0.5, 0.6}, 0.7);
    const auto cam = front_camera(24);
    const auto out = render(cloud, cam);
    const auto g = render_backward(cloud, cam, out, Image(24, 24, 1.0));
    // d(sum of pixels)/d dc_k = C0 * sum_p sigma(p); with one splat alpha(p) = sigma(p)
    const double coverage = std::accumulate(out.alpha.begin(), out.alpha.end(), 0.0);
    for (int k = 0; k < 3; ++k) CHECK(g.color_dc[0][k] == doctest::Approx(kShC0 * coverage).epsilon(1e-12));
}

TEST_CASE("five-splat scene passes the finite-difference check") {
    Rng rng = make_stream(21, 0);
    const auto cloud = random_gradcheck_scene(rng, 5);
    std::vector<double> w(16 * 16 * 3);
    Rng wr = make_stream(21, 1);
    for (auto& x : w) x = uniform(wr, -1, 1);
    const auto r = check_scene(cloud, gradcheck_camera(16), {}, w, GradcheckOptions{});
    for (double e : r.rel_error) CHECK(e <= 1e-3);
    CHECK(r.pass);
}

TEST_CASE("backward rejects a foreign render output") {
    Rng rng = make_stream(12, 0);
    const auto cloud = random_gradcheck_scene(rng, 4);
    const auto out = render(cloud, gradcheck_camera(16));
    CHECK_THROWS_AS(render_backward(cloud, gradcheck_camera(20), out, Image(20, 20, 1.0)), ContractError);
    GaussianCloudD bigger = cloud;
    bigger.append_from(cloud, 0);
    CHECK_THROWS_AS(render_backward(bigger, gradcheck_camera(16), out, Image(16, 16, 1.0)), ContractError);
}

TEST_CASE("PLY round trip is bit exact") {
    Rng rng = make_stream(13, 0);
    const GaussianCloud cloud = cloud_cast<float>(random_gradcheck_scene(rng, 9));
    std::stringstream buf;
    write_ply(buf, cloud);
    const std::string header = buf.str().substr(0, buf.str().find("end_header"));
    for (const char* prop : {"property float x", "property float f_dc_0", "property float opacity",
                             "property float scale_2", "property float rot_3"}) {
        CHECK(header.find(prop) != std::string::npos);
    }
    const GaussianCloud back = read_ply(buf);
    REQUIRE(back.size() == cloud.size());
    CHECK(std::memcmp(back.positions.data(), cloud.positions.data(), cloud.size() * 12) == 0);
    CHECK(std::memcmp(back.log_scales.data(), cloud.log_scales.data(), cloud.size() * 12) == 0);
    CHECK(std::memcmp(back.rotations.data(), cloud.rotations.data(), cloud.size() * 16) == 0);
    CHECK(std::memcmp(back.color_dc.data(), cloud.color_dc.data(), cloud.size() * 12) == 0);
    CHECK(std::memcmp(back.opacity_logits.data(), cloud.opacity_logits.data(), cloud.size() * 4) == 0);
}

TEST_CASE("PLY reader rejects ascii files") {
    std::stringstream s("ply\nformat ascii 1.0\nelement vertex 0\nend_header\n");
    CHECK_THROWS_AS(read_ply(s), FormatError);
}

TEST_CASE("image files round trip") {
    const auto dir = std::filesystem::temp_directory_path() / "cforge_image_io";
    std::filesystem::create_directories(dir);
    Image img(5, 7);
    for (std::size_t i = 0; i < img.size(); ++i) img.data[i] = double(i % 256) / 255.0;
    write_png(dir / "a.png", img);
    CHECK(max_abs_diff(read_png(dir / "a.png"), img) < 1e-12);

    Image f(3, 4);
    for (std::size_t i = 0; i < f.size(); ++i) f.data[i] = 0.25 * double(i) - 1.0;
    write_float_image(dir / "f.raw", f);
    CHECK(std::filesystem::exists(dir / "f.raw.json"));
    CHECK(max_abs_diff(read_float_image(dir / "f.raw"), f) == 0.0);
    std::filesystem::remove_all(dir);
}

}
