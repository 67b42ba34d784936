#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <nlohmann/json_fwd.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace cforge {

using Vec3 = Eigen::Vector3d;
using Face = std::array<int, 3>;

/// Parametric body: rest mesh, blend-shape bases, skeleton and skinning weights.
///
/// Displacement bases are stored as (3V x rank) matrices whose rows are
/// ordered (v0.x, v0.y, v0.z, v1.x, ...). The pose basis is indexed by the
/// pose feature of every non-root joint (9 * (J - 1) columns) or is empty to
/// disable pose correctives.
struct BodyTemplate {
    std::vector<Vec3> vertices;
    std::vector<Face> faces;
    std::vector<int> parents;            ///< parents[0] == -1; parents[j] < j
    Eigen::MatrixXd joint_regressor;     ///< J x V
    Eigen::MatrixXd skin_weights;        ///< V x J, rows sum to 1
    Eigen::MatrixXd shape_basis;         ///< 3V x S
    Eigen::MatrixXd pose_basis;          ///< 3V x 9(J-1), or 3V x 0
    Eigen::MatrixXd expr_basis;          ///< 3V x E

    int vertex_count() const { return static_cast<int>(vertices.size()); }
    int joint_count() const { return static_cast<int>(parents.size()); }
    int shape_rank() const { return static_cast<int>(shape_basis.cols()); }
    int expression_rank() const { return static_cast<int>(expr_basis.cols()); }
    int pose_feature_size() const { return 9 * (joint_count() - 1); }

    /// Throws ShapeError / InvalidParameter when any structural invariant fails.
    void validate() const;
};

/// Shape coefficients, per-joint axis-angle rotations (3 per joint, root
/// first) and expression coefficients.
struct BodyParams {
    Eigen::VectorXd beta;
    Eigen::VectorXd theta;
    Eigen::VectorXd psi;

    /// Rest pose, neutral shape and expression for `body`.
    static BodyParams neutral(const BodyTemplate& body);
};

struct PosedMesh {
    std::vector<Vec3> vertices;
    std::vector<Face> faces;
};

struct SurfaceSample {
    Vec3 position;
    Vec3 normal;
    int face = -1;
};

/// Rest-pose rotation matrices minus identity, flattened row-major, for
/// joints 1..J-1.
Eigen::VectorXd pose_feature(const Eigen::VectorXd& theta, int joint_count);

Eigen::Matrix3d axis_angle_to_matrix(const Vec3& axis_angle);

/// T-bar + Bs*beta + Bp*pose_feature(theta) + Be*psi.
std::vector<Vec3> shaped_vertices(const BodyTemplate& body, const BodyParams& params);

/// Joint locations regressed from the shape-only mesh (no pose correctives).
std::vector<Vec3> joint_locations(const BodyTemplate& body, const BodyParams& params);

/// Per-joint skinning transforms: world transform of the joint composed with
/// the inverse of its rest placement.
std::vector<Eigen::Affine3d> skinning_transforms(const BodyTemplate& body, const BodyParams& params);

std::vector<Vec3> skin_vertices(const std::vector<Vec3>& vertices, const Eigen::MatrixXd& weights,
                                const std::vector<Eigen::Affine3d>& transforms);

PosedMesh pose_mesh(const BodyTemplate& body, const BodyParams& params);

/// Area-weighted triangle choice then uniform barycentric sampling.
std::vector<SurfaceSample> sample_surface(const PosedMesh& mesh, int count, std::uint64_t seed);

double surface_area(const PosedMesh& mesh);

/// Bundled 24-joint low-poly humanoid, about one scene unit tall and centered
/// on the origin, y up, facing +z.
const BodyTemplate& default_humanoid();

/// Coarse body region per joint of the bundled humanoid.
enum class BodyRegion { head, upper, lower, feet, hands };
BodyRegion humanoid_joint_region(int joint);

/// Region of each face: the region of the joint with the largest summed skin
/// weight over its three vertices.
std::vector<BodyRegion> face_regions(const BodyTemplate& body);

nlohmann::json body_to_json(const BodyTemplate& body);
BodyTemplate body_from_json(const nlohmann::json& doc);
void save_body_asset(const std::filesystem::path& path, const BodyTemplate& body);
BodyTemplate load_body_asset(const std::filesystem::path& path);

}  // namespace cforge
