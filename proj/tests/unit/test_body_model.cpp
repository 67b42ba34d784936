#include "cforge/body_model.hpp"
#include "cforge/errors.hpp"

#include <doctest.h>
#include <nlohmann/json.hpp>

#include <random>

using namespace cforge;

namespace {

// Three collinear vertices, root at the origin and a child joint at (1,0,0).
// Vertex 2 is rigidly bound to the child, vertex 3 is split 50/50.
BodyTemplate two_joint_rig() {
    BodyTemplate t;
    t.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(2, 0, 0), Vec3(2, 0, 0)};
    t.faces = {{0, 1, 2}};
    t.parents = {-1, 0};
    t.joint_regressor = Eigen::MatrixXd::Zero(2, 4);
    t.joint_regressor(0, 0) = 1.0;
    t.joint_regressor(1, 1) = 1.0;
    t.skin_weights = Eigen::MatrixXd::Zero(4, 2);
    t.skin_weights(0, 0) = 1.0;
    t.skin_weights(1, 1) = 1.0;
    t.skin_weights(2, 1) = 1.0;
    t.skin_weights(3, 0) = 0.5;
    t.skin_weights(3, 1) = 0.5;
    t.shape_basis = Eigen::MatrixXd::Zero(12, 0);
    t.pose_basis = Eigen::MatrixXd::Zero(12, 0);
    t.expr_basis = Eigen::MatrixXd::Zero(12, 0);
    return t;
}

BodyParams random_params(const BodyTemplate& b, std::uint64_t seed, double scale) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-scale, scale);
    BodyParams p = BodyParams::neutral(b);
    for (auto i = 0; i < p.beta.size(); ++i) p.beta[i] = u(rng);
    for (auto i = 0; i < p.theta.size(); ++i) p.theta[i] = u(rng);
    for (auto i = 0; i < p.psi.size(); ++i) p.psi[i] = u(rng);
    return p;
}

// Rodrigues written out by hand so the oracle shares no code with the library.
Eigen::Matrix3d rodrigues(double x, double y, double z) {
    const double a = std::sqrt(x * x + y * y + z * z);
    if (a < 1e-300) return Eigen::Matrix3d::Identity();
    const double kx = x / a, ky = y / a, kz = z / a;
    const double c = std::cos(a), s = std::sin(a), C = 1 - c;
    Eigen::Matrix3d r;
    r << c + kx * kx * C, kx * ky * C - kz * s, kx * kz * C + ky * s,
         ky * kx * C + kz * s, c + ky * ky * C, ky * kz * C - kx * s,
         kz * kx * C - ky * s, kz * ky * C + kx * s, c + kz * kz * C;
    return r;
}

}  // namespace

TEST_SUITE("body_model") {

TEST_CASE("bundled humanoid invariants") {
    const BodyTemplate& b = default_humanoid();
    CHECK(b.joint_count() == 24);
    CHECK(b.joint_regressor.rows() == 24);
    CHECK(b.vertex_count() >= 800);
    CHECK(b.vertex_count() <= 1400);
    for (int v = 0; v < b.vertex_count(); ++v) {
        CHECK(b.skin_weights.row(v).minCoeff() >= 0.0);
        CHECK(std::abs(b.skin_weights.row(v).sum() - 1.0) < 1e-6);
    }
    for (const auto& f : b.faces)
        for (int idx : f) CHECK((idx >= 0 && idx < b.vertex_count()));
}

TEST_CASE("neutral params reproduce the template") {
    const BodyTemplate& b = default_humanoid();
    const auto v = shaped_vertices(b, BodyParams::neutral(b));
    for (std::size_t i = 0; i < v.size(); ++i) CHECK(v[i] == b.vertices[i]);
}

TEST_CASE("unit beta selects the first shape column") {
    const BodyTemplate& b = default_humanoid();
    REQUIRE(b.shape_rank() >= 1);
    BodyParams p = BodyParams::neutral(b);
    p.beta[0] = 1.0;
    const auto v = shaped_vertices(b, p);
    double worst = 0;
    for (int i = 0; i < b.vertex_count(); ++i) {
        for (int k = 0; k < 3; ++k) {
            worst = std::max(worst, std::abs(v[i][k] - (b.vertices[i][k] + b.shape_basis(3 * i + k, 0))));
        }
    }
    CHECK(worst < 1e-12);
}

TEST_CASE("shaped vertices match a direct re-summation") {
    const BodyTemplate& b = default_humanoid();
    const BodyParams p = random_params(b, 11, 0.2);
    const auto v = shaped_vertices(b, p);

    // pose feature: R(theta_j) - I for j >= 1, row-major
    std::vector<double> feat;
    for (int j = 1; j < b.joint_count(); ++j) {
        const Eigen::Matrix3d r = rodrigues(p.theta[3 * j], p.theta[3 * j + 1], p.theta[3 * j + 2]);
        for (int r0 = 0; r0 < 3; ++r0)
            for (int c0 = 0; c0 < 3; ++c0) feat.push_back(r(r0, c0) - (r0 == c0 ? 1.0 : 0.0));
    }
    double worst = 0;
    for (int i = 0; i < b.vertex_count(); ++i) {
        for (int k = 0; k < 3; ++k) {
            const int row = 3 * i + k;
            double x = b.vertices[i][k];
            for (int s = 0; s < b.shape_rank(); ++s) x += b.shape_basis(row, s) * p.beta[s];
            for (int s = 0; s < b.pose_basis.cols(); ++s) x += b.pose_basis(row, s) * feat[s];
            for (int s = 0; s < b.expression_rank(); ++s) x += b.expr_basis(row, s) * p.psi[s];
            worst = std::max(worst, std::abs(x - v[i][k]));
        }
    }
    CHECK(worst < 1e-9);
}

TEST_CASE("rank mismatch names the basis") {
    const BodyTemplate& b = default_humanoid();
    BodyParams p = BodyParams::neutral(b);
    p.beta.resize(p.beta.size() + 1);
    p.beta.setZero();
    try {
        shaped_vertices(b, p);
        FAIL("expected a ShapeError");
    } catch (const ShapeError& e) {
        CHECK(std::string(e.what()).find("shape_basis") != std::string::npos);
    }
    BodyParams q = BodyParams::neutral(b);
    q.psi.resize(q.psi.size() + 2);
    q.psi.setZero();
    CHECK_THROWS_WITH_AS(shaped_vertices(b, q), doctest::Contains("expr_basis"), ShapeError);
}

TEST_CASE("identity pose is the identity map") {
    const BodyTemplate& b = default_humanoid();
    BodyParams p = random_params(b, 5, 0.3);
    p.theta.setZero();
    const auto shaped = shaped_vertices(b, p);
    const auto posed = pose_mesh(b, p);
    double worst = 0;
    for (std::size_t i = 0; i < shaped.size(); ++i) worst = std::max(worst, (shaped[i] - posed.vertices[i]).norm());
    CHECK(worst < 1e-9);
}

TEST_CASE("rigid binding follows the joint rotation") {
    const BodyTemplate t = two_joint_rig();
    BodyParams p = BodyParams::neutral(t);
    p.theta[5] = M_PI / 2;  // joint 1, +z
    const auto posed = pose_mesh(t, p);
    // local offset (1,0,0) from the joint at (1,0,0) becomes (0,1,0)
    CHECK((posed.vertices[2] - Vec3(1, 1, 0)).norm() < 1e-12);
    CHECK((posed.vertices[1] - Vec3(1, 0, 0)).norm() < 1e-12);
    // split binding lands on the midpoint of the two single-joint positions
    CHECK((posed.vertices[3] - 0.5 * (Vec3(2, 0, 0) + Vec3(1, 1, 0))).norm() < 1e-12);
}

TEST_CASE("global rigid transform commutes with skinning") {
    const BodyTemplate& b = default_humanoid();
    const BodyParams p = random_params(b, 3, 0.25);
    const auto shaped = shaped_vertices(b, p);
    auto transforms = skinning_transforms(b, p);
    const auto base = skin_vertices(shaped, b.skin_weights, transforms);

    Eigen::Affine3d g = Eigen::Affine3d::Identity();
    g.linear() = rodrigues(0.3, -0.7, 0.2);
    g.translation() = Vec3(0.4, -1.0, 2.5);
    for (auto& tr : transforms) tr = g * tr;
    const auto moved = skin_vertices(shaped, b.skin_weights, transforms);
    double worst = 0;
    for (std::size_t i = 0; i < base.size(); ++i) worst = std::max(worst, (g * base[i] - moved[i]).norm());
    CHECK(worst < 1e-9);
}

TEST_CASE("non-finite rotation is rejected") {
    const BodyTemplate& b = default_humanoid();
    BodyParams p = BodyParams::neutral(b);
    p.theta[7] = std::nan("");
    CHECK_THROWS_AS(pose_mesh(b, p), InvalidParameter);
}

TEST_CASE("surface sampling on one triangle") {
    PosedMesh m{{Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0)}, {{0, 1, 2}}};
    const auto a = sample_surface(m, 3, 7);
    const auto b = sample_surface(m, 3, 7);
    REQUIRE(a.size() == 3);
    for (std::size_t i = 0; i < a.size(); ++i) {
        const Vec3& p = a[i].position;
        CHECK(p.z() == 0.0);
        CHECK(p.x() >= 0.0);
        CHECK(p.y() >= 0.0);
        CHECK(p.x() + p.y() <= 1.0 + 1e-12);
        CHECK(p == b[i].position);
        CHECK(std::abs(std::abs(a[i].normal.z()) - 1.0) < 1e-12);
    }
}

TEST_CASE("surface sampling is area weighted") {
    // areas 4.5 and 0.5
    PosedMesh m{{Vec3(0, 0, 0), Vec3(3, 0, 0), Vec3(0, 3, 0), Vec3(10, 0, 0), Vec3(11, 0, 0), Vec3(10, 1, 0)},
                {{0, 1, 2}, {3, 4, 5}}};
    const int n = 100000;
    const auto s = sample_surface(m, n, 99);
    int big = 0;
    for (const auto& p : s) big += p.position.x() < 5.0 ? 1 : 0;
    // binomial: five standard deviations around the 0.9 share
    const double sigma = std::sqrt(0.9 * 0.1 / n);
    CHECK(std::abs(double(big) / n - 0.9) < 5 * sigma);
}

TEST_CASE("surface sampling at full initialization size") {
    const BodyTemplate& b = default_humanoid();
    const auto mesh = pose_mesh(b, BodyParams::neutral(b));
    const auto s = sample_surface(mesh, 100000, 0);
    CHECK(s.size() == 100000);
    CHECK(s.front().position == sample_surface(mesh, 100000, 0).front().position);
}

TEST_CASE("degenerate meshes cannot be sampled") {
    PosedMesh flat{{Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(2, 0, 0)}, {{0, 1, 2}}};
    CHECK_THROWS_AS(sample_surface(flat, 5, 1), SamplingError);
    PosedMesh ok{{Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0)}, {{0, 1, 2}}};
    CHECK_THROWS_AS(sample_surface(ok, 0, 1), SamplingError);
}

TEST_CASE("body asset round trip") {
    const BodyTemplate& b = default_humanoid();
    const BodyTemplate c = body_from_json(nlohmann::json::parse(body_to_json(b).dump()));
    CHECK(c.vertex_count() == b.vertex_count());
    CHECK(c.parents == b.parents);
    CHECK(c.faces == b.faces);
    CHECK((c.skin_weights - b.skin_weights).cwiseAbs().maxCoeff() < 1e-15);
    CHECK((c.joint_regressor - b.joint_regressor).cwiseAbs().maxCoeff() < 1e-15);
    CHECK(c.shape_basis.cols() == b.shape_basis.cols());
    for (int i = 0; i < b.vertex_count(); ++i) CHECK(c.vertices[i] == b.vertices[i]);
    nlohmann::json broken = body_to_json(b);
    broken["faces"][0] = {0, 1};
    CHECK_THROWS_AS(body_from_json(broken), FormatError);
}

TEST_CASE("body regions cover the humanoid") {
    const auto regions = face_regions(default_humanoid());
    CHECK(regions.size() == default_humanoid().faces.size());
    std::array<int, 5> counts{};
    for (auto r : regions) ++counts[static_cast<int>(r)];
    for (int c : counts) CHECK(c > 0);
}

}
