#include "cforge/body_model.hpp"

#include <cmath>
#include <numbers>

namespace cforge {

namespace {

// Skeleton layout follows the common 24-joint body convention.
constexpr int kJoints = 24;
constexpr int kParents[kJoints] = {-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21};

const Vec3 kJointRest[kJoints] = {
    {0.0, -0.02, 0.0},    // 0 pelvis
    {0.06, -0.07, 0.0},   // 1 left hip
    {-0.06, -0.07, 0.0},  // 2 right hip
    {0.0, 0.05, 0.0},     // 3 spine1
    {0.07, -0.28, 0.0},   // 4 left knee
    {-0.07, -0.28, 0.0},  // 5 right knee
    {0.0, 0.13, 0.0},     // 6 spine2
    {0.07, -0.47, 0.0},   // 7 left ankle
    {-0.07, -0.47, 0.0},  // 8 right ankle
    {0.0, 0.20, 0.0},     // 9 spine3
    {0.07, -0.49, 0.06},  // 10 left foot
    {-0.07, -0.49, 0.06}, // 11 right foot
    {0.0, 0.30, 0.0},     // 12 neck
    {0.03, 0.27, 0.0},    // 13 left collar
    {-0.03, 0.27, 0.0},   // 14 right collar
    {0.0, 0.34, 0.0},     // 15 head
    {0.12, 0.27, 0.0},    // 16 left shoulder
    {-0.12, 0.27, 0.0},   // 17 right shoulder
    {0.27, 0.27, 0.0},    // 18 left elbow
    {-0.27, 0.27, 0.0},   // 19 right elbow
    {0.41, 0.27, 0.0},    // 20 left wrist
    {-0.41, 0.27, 0.0},   // 21 right wrist
    {0.45, 0.27, 0.0},    // 22 left hand
    {-0.45, 0.27, 0.0},   // 23 right hand
};

struct TubeSpec {
    int owner;
    Vec3 end;
    double r0, r1;
    int rings, segments;
    double depth_ratio = 1.0;  // ellipse z/x ratio for torso sections
    bool dome = false;         // sphere-like radius profile
};

struct Builder {
    BodyTemplate body;
    std::vector<Vec3> radial;          // outward unit direction per vertex
    std::vector<int> owner;            // owning joint per vertex
    std::vector<std::vector<double>> weights;
    std::vector<std::vector<int>> base_ring;  // first ring of each joint's tube

    Builder() : base_ring(kJoints) {}

    void add_tube(const TubeSpec& t) {
        const Vec3 p0 = kJointRest[t.owner];
        const Vec3 axis = (t.end - p0).normalized();
        const Vec3 helper = std::abs(axis.y()) < 0.9 ? Vec3(0, 1, 0) : Vec3(0, 0, 1);
        const Vec3 e1 = helper.cross(axis).normalized();
        const Vec3 e2 = axis.cross(e1);
        const int parent = kParents[t.owner];
        const int first = static_cast<int>(body.vertices.size());

        for (int k = 0; k < t.rings; ++k) {
            const double u = static_cast<double>(k) / (t.rings - 1);
            double r = t.r0 + (t.r1 - t.r0) * u;
            if (t.dome) r = t.r0 * std::sin(std::numbers::pi * (0.15 + 0.8 * u));
            const Vec3 center = p0 + u * (t.end - p0);
            for (int s = 0; s < t.segments; ++s) {
                const double phi = 2.0 * std::numbers::pi * s / t.segments;
                const Vec3 dir = std::cos(phi) * e1 + std::sin(phi) * e2;
                const Vec3 offset = r * std::cos(phi) * e1 + r * t.depth_ratio * std::sin(phi) * e2;
                body.vertices.push_back(center + offset);
                radial.push_back(dir);
                owner.push_back(t.owner);
                std::vector<double> w(kJoints, 0.0);
                if (parent >= 0 && u < 0.25) {
                    const double wp = 0.5 * (1.0 - u / 0.25);
                    w[parent] = wp;
                    w[t.owner] = 1.0 - wp;
                } else {
                    w[t.owner] = 1.0;
                }
                weights.push_back(std::move(w));
                if (k == 0 && base_ring[t.owner].size() < static_cast<std::size_t>(t.segments)) {
                    base_ring[t.owner].push_back(static_cast<int>(body.vertices.size()) - 1);
                }
            }
        }
        for (int k = 0; k + 1 < t.rings; ++k) {
            for (int s = 0; s < t.segments; ++s) {
                const int s1 = (s + 1) % t.segments;
                const int a = first + k * t.segments + s;
                const int b = first + k * t.segments + s1;
                const int c = first + (k + 1) * t.segments + s;
                const int d = first + (k + 1) * t.segments + s1;
                body.faces.push_back({a, b, c});
                body.faces.push_back({b, d, c});
            }
        }
    }
};

BodyTemplate build_humanoid() {
    Builder b;
    const Vec3* J = kJointRest;
    // torso, pelvis up to neck
    b.add_tube({0, J[3], 0.085, 0.080, 4, 16, 0.62});
    b.add_tube({3, J[6], 0.080, 0.085, 4, 16, 0.60});
    b.add_tube({6, J[9], 0.085, 0.095, 4, 16, 0.58});
    b.add_tube({9, J[12], 0.095, 0.050, 4, 16, 0.55});
    b.add_tube({12, J[15], 0.035, 0.038, 3, 10});
    b.add_tube({15, Vec3(0.0, 0.50, 0.0), 0.085, 0.0, 8, 12, 1.0, true});
    // legs
    for (int side = 0; side < 2; ++side) {
        const int hip = 1 + side, knee = 4 + side, ankle = 7 + side, foot = 10 + side;
        b.add_tube({hip, J[knee], 0.050, 0.038, 6, 12});
        b.add_tube({knee, J[ankle], 0.036, 0.025, 6, 12});
        b.add_tube({ankle, J[foot], 0.025, 0.022, 2, 8});
        b.add_tube({foot, J[foot] + Vec3(0.0, 0.0, 0.05), 0.021, 0.015, 2, 8});
    }
    // arms
    for (int side = 0; side < 2; ++side) {
        const double sign = side == 0 ? 1.0 : -1.0;
        const int collar = 13 + side, shoulder = 16 + side, elbow = 18 + side, wrist = 20 + side, hand = 22 + side;
        b.add_tube({collar, J[shoulder], 0.035, 0.032, 2, 10});
        b.add_tube({shoulder, J[elbow], 0.030, 0.025, 5, 10});
        b.add_tube({elbow, J[wrist], 0.025, 0.020, 5, 10});
        b.add_tube({wrist, J[hand], 0.020, 0.018, 2, 8});
        b.add_tube({hand, J[hand] + Vec3(sign * 0.05, 0.0, 0.0), 0.018, 0.010, 2, 8});
    }

    BodyTemplate& body = b.body;
    const auto V = static_cast<Eigen::Index>(body.vertices.size());
    body.parents.assign(kParents, kParents + kJoints);

    body.skin_weights = Eigen::MatrixXd::Zero(V, kJoints);
    for (Eigen::Index v = 0; v < V; ++v) {
        for (int j = 0; j < kJoints; ++j) body.skin_weights(v, j) = b.weights[v][j];
    }

    body.joint_regressor = Eigen::MatrixXd::Zero(kJoints, V);
    for (int j = 0; j < kJoints; ++j) {
        const auto& ring = b.base_ring[j];
        for (int v : ring) body.joint_regressor(j, v) = 1.0 / static_cast<double>(ring.size());
    }

    // Shape basis: global proportions that keep the skeleton consistent
    // because joints are regressed from the displaced vertices.
    constexpr int kShape = 10;
    body.shape_basis = Eigen::MatrixXd::Zero(3 * V, kShape);
    for (Eigen::Index v = 0; v < V; ++v) {
        const Vec3& p = body.vertices[v];
        const Vec3& n = b.radial[v];
        const int j = b.owner[v];
        const bool arm = j >= 13 && j != 15;
        const bool leg = j == 1 || j == 2 || j == 4 || j == 5 || j == 7 || j == 8 || j == 10 || j == 11;
        const bool torso = j == 0 || j == 3 || j == 6 || j == 9;
        const bool head = j == 15;
        auto set = [&](int k, const Vec3& d) { body.shape_basis.block<3, 1>(3 * v, k) = d; };
        set(0, Vec3(0.0, 0.1 * p.y(), 0.0));                                  // stature
        set(1, 0.01 * n);                                                     // girth
        if (arm) set(2, Vec3(0.03 * (p.x() > 0 ? 1.0 : -1.0), 0.0, 0.0));    // shoulder breadth
        if (leg) set(3, Vec3(0.02 * (p.x() > 0 ? 1.0 : -1.0), 0.0, 0.0));    // hip breadth
        if (leg) set(4, Vec3(0.0, 0.1 * (p.y() + 0.07), 0.0));               // leg length
        if (arm) set(5, Vec3(0.1 * p.x(), 0.0, 0.0));                         // arm length
        if (torso) set(6, Vec3(0.0, 0.0, 0.2 * p.z()));                       // torso depth
        if (head) set(7, 0.01 * n);                                           // head size
        if (torso && p.z() > 0) set(8, Vec3(0.0, 0.0, 0.02 * n.z()));         // belly
        if (head || j == 12) set(9, Vec3(0.0, 0.02, 0.0));                    // neck length
    }

    // Pose correctives: bulge along the surface normal driven by the diagonal
    // of the owning joint's rotation deviation.
    body.pose_basis = Eigen::MatrixXd::Zero(3 * V, 9 * (kJoints - 1));
    for (Eigen::Index v = 0; v < V; ++v) {
        for (int j = 1; j < kJoints; ++j) {
            const double w = body.skin_weights(v, j);
            if (w == 0.0) continue;
            for (int d = 0; d < 3; ++d) body.pose_basis.block<3, 1>(3 * v, 9 * (j - 1) + 4 * d) = -0.01 * w * b.radial[v];
        }
    }

    // Expression basis: smooth patterns over the head surface.
    constexpr int kExpr = 10;
    body.expr_basis = Eigen::MatrixXd::Zero(3 * V, kExpr);
    const Vec3 head_center = J[15] + Vec3(0.0, 0.08, 0.0);
    for (Eigen::Index v = 0; v < V; ++v) {
        if (b.owner[v] != 15) continue;
        const Vec3 rel = body.vertices[v] - head_center;
        for (int k = 0; k < kExpr; ++k) {
            const double phase = 0.7 * k;
            const double a = std::sin(40.0 * rel.y() + phase) * std::cos(25.0 * rel.x() - phase);
            body.expr_basis.block<3, 1>(3 * v, k) = 0.004 * a * b.radial[v];
        }
    }
    return body;
}

}  // namespace

const BodyTemplate& default_humanoid() {
    static const BodyTemplate body = [] {
        BodyTemplate t = build_humanoid();
        t.validate();
        return t;
    }();
    return body;
}

BodyRegion humanoid_joint_region(int joint) {
    switch (joint) {
        case 12:
        case 15:
            return BodyRegion::head;
        case 1:
        case 2:
        case 4:
        case 5:
            return BodyRegion::lower;
        case 7:
        case 8:
        case 10:
        case 11:
            return BodyRegion::feet;
        case 20:
        case 21:
        case 22:
        case 23:
            return BodyRegion::hands;
        default:
            return BodyRegion::upper;
    }
}

}  // namespace cforge
