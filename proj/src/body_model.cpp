#include "cforge/body_model.hpp"

#include "cforge/errors.hpp"
#include "cforge/random.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

namespace cforge {

namespace {

void require_rank(const Eigen::MatrixXd& basis, Eigen::Index coefficients, const char* basis_name,
                  const char* param_name) {
    if (basis.cols() != coefficients) {
        throw ShapeError(std::string(basis_name) + " has rank " + std::to_string(basis.cols()) + " but " +
                         param_name + " has length " + std::to_string(coefficients));
    }
}

void add_displacement(std::vector<Vec3>& verts, const Eigen::MatrixXd& basis, const Eigen::VectorXd& coeffs) {
    if (basis.cols() == 0) return;
    const Eigen::VectorXd offsets = basis * coeffs;
    for (std::size_t v = 0; v < verts.size(); ++v) verts[v] += offsets.segment<3>(3 * static_cast<Eigen::Index>(v));
}

void require_finite(const Eigen::VectorXd& v, const char* name) {
    if (!v.allFinite()) throw InvalidParameter(std::string(name) + " contains non-finite values");
}

}  // namespace

void BodyTemplate::validate() const {
    const Eigen::Index V = vertex_count();
    const Eigen::Index J = joint_count();
    if (V == 0) throw ShapeError("body template has no vertices");
    if (J == 0) throw ShapeError("body template has no joints");
    if (parents[0] != -1) throw InvalidParameter("joint 0 must be the root (parent -1)");
    for (Eigen::Index j = 1; j < J; ++j) {
        if (parents[j] < 0 || parents[j] >= j) {
            throw InvalidParameter("joint " + std::to_string(j) + " must have a parent with a smaller index");
        }
    }
    for (const Face& f : faces) {
        for (int idx : f) {
            if (idx < 0 || idx >= V) throw RangeError("face index " + std::to_string(idx) + " out of range");
        }
    }
    if (joint_regressor.rows() != J || joint_regressor.cols() != V) {
        throw ShapeError("joint_regressor must be joints x vertices");
    }
    if (skin_weights.rows() != V || skin_weights.cols() != J) throw ShapeError("skin_weights must be vertices x joints");
    if ((skin_weights.array() < 0.0).any()) throw InvalidParameter("skin_weights must be non-negative");
    for (Eigen::Index v = 0; v < V; ++v) {
        if (std::abs(skin_weights.row(v).sum() - 1.0) > 1e-6) {
            throw InvalidParameter("skin weights of vertex " + std::to_string(v) + " do not sum to 1");
        }
    }
    auto check_basis = [&](const Eigen::MatrixXd& b, const char* name) {
        if (b.cols() > 0 && b.rows() != 3 * V) throw ShapeError(std::string(name) + " must have 3 * vertices rows");
    };
    check_basis(shape_basis, "shape_basis");
    check_basis(pose_basis, "pose_basis");
    check_basis(expr_basis, "expr_basis");
    if (pose_basis.cols() != 0 && pose_basis.cols() != pose_feature_size()) {
        throw ShapeError("pose_basis must have 9 * (joints - 1) columns or none");
    }
}

BodyParams BodyParams::neutral(const BodyTemplate& body) {
    BodyParams p;
    p.beta = Eigen::VectorXd::Zero(body.shape_rank());
    p.theta = Eigen::VectorXd::Zero(3 * body.joint_count());
    p.psi = Eigen::VectorXd::Zero(body.expression_rank());
    return p;
}

Eigen::Matrix3d axis_angle_to_matrix(const Vec3& axis_angle) {
    const double angle = axis_angle.norm();
    if (angle == 0.0) return Eigen::Matrix3d::Identity();
    return Eigen::AngleAxisd(angle, axis_angle / angle).toRotationMatrix();
}

Eigen::VectorXd pose_feature(const Eigen::VectorXd& theta, int joint_count) {
    if (theta.size() != 3 * joint_count) throw ShapeError("theta must hold 3 values per joint");
    Eigen::VectorXd feature(9 * (joint_count - 1));
    for (int j = 1; j < joint_count; ++j) {
        const Eigen::Matrix3d d = axis_angle_to_matrix(theta.segment<3>(3 * j)) - Eigen::Matrix3d::Identity();
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) feature(9 * (j - 1) + 3 * r + c) = d(r, c);
        }
    }
    return feature;
}

std::vector<Vec3> shaped_vertices(const BodyTemplate& body, const BodyParams& params) {
    require_rank(body.shape_basis, params.beta.size(), "shape_basis", "beta");
    require_rank(body.expr_basis, params.psi.size(), "expr_basis", "psi");
    if (params.theta.size() != 3 * body.joint_count()) {
        throw ShapeError("theta has length " + std::to_string(params.theta.size()) + " but the skeleton needs " +
                         std::to_string(3 * body.joint_count()));
    }
    std::vector<Vec3> verts = body.vertices;
    add_displacement(verts, body.shape_basis, params.beta);
    if (body.pose_basis.cols() > 0) add_displacement(verts, body.pose_basis, pose_feature(params.theta, body.joint_count()));
    add_displacement(verts, body.expr_basis, params.psi);
    return verts;
}

std::vector<Vec3> joint_locations(const BodyTemplate& body, const BodyParams& params) {
    require_rank(body.shape_basis, params.beta.size(), "shape_basis", "beta");
    std::vector<Vec3> verts = body.vertices;
    add_displacement(verts, body.shape_basis, params.beta);
    std::vector<Vec3> joints(static_cast<std::size_t>(body.joint_count()), Vec3::Zero());
    for (int j = 0; j < body.joint_count(); ++j) {
        for (int v = 0; v < body.vertex_count(); ++v) {
            const double w = body.joint_regressor(j, v);
            if (w != 0.0) joints[j] += w * verts[v];
        }
    }
    return joints;
}

std::vector<Eigen::Affine3d> skinning_transforms(const BodyTemplate& body, const BodyParams& params) {
    require_finite(params.theta, "theta");
    if (params.theta.size() != 3 * body.joint_count()) throw ShapeError("theta must hold 3 values per joint");
    const auto joints = joint_locations(body, params);
    const int J = body.joint_count();

    std::vector<Eigen::Affine3d> world(static_cast<std::size_t>(J));
    for (int j = 0; j < J; ++j) {
        Eigen::Affine3d local = Eigen::Affine3d::Identity();
        local.linear() = axis_angle_to_matrix(params.theta.segment<3>(3 * j));
        const int parent = body.parents[j];
        local.translation() = parent < 0 ? joints[j] : Vec3(joints[j] - joints[parent]);
        world[j] = parent < 0 ? local : world[parent] * local;
    }
    for (int j = 0; j < J; ++j) world[j] = world[j] * Eigen::Translation3d(-joints[j]);
    return world;
}

std::vector<Vec3> skin_vertices(const std::vector<Vec3>& vertices, const Eigen::MatrixXd& weights,
                                const std::vector<Eigen::Affine3d>& transforms) {
    if (weights.rows() != static_cast<Eigen::Index>(vertices.size()) ||
        weights.cols() != static_cast<Eigen::Index>(transforms.size())) {
        throw ShapeError("skin weight matrix does not match vertices x transforms");
    }
    std::vector<Vec3> out(vertices.size(), Vec3::Zero());
    for (std::size_t v = 0; v < vertices.size(); ++v) {
        for (std::size_t j = 0; j < transforms.size(); ++j) {
            const double w = weights(static_cast<Eigen::Index>(v), static_cast<Eigen::Index>(j));
            if (w != 0.0) out[v] += w * (transforms[j] * vertices[v]);
        }
    }
    return out;
}

PosedMesh pose_mesh(const BodyTemplate& body, const BodyParams& params) {
    require_finite(params.theta, "theta");
    require_finite(params.beta, "beta");
    require_finite(params.psi, "psi");
    const auto verts = shaped_vertices(body, params);
    const auto transforms = skinning_transforms(body, params);
    return {skin_vertices(verts, body.skin_weights, transforms), body.faces};
}

double surface_area(const PosedMesh& mesh) {
    double total = 0.0;
    for (const Face& f : mesh.faces) {
        total += 0.5 * (mesh.vertices[f[1]] - mesh.vertices[f[0]]).cross(mesh.vertices[f[2]] - mesh.vertices[f[0]]).norm();
    }
    return total;
}

std::vector<SurfaceSample> sample_surface(const PosedMesh& mesh, int count, std::uint64_t seed) {
    if (count < 1) throw SamplingError("sample count must be at least 1");
    if (mesh.faces.empty()) throw SamplingError("mesh has no triangles");

    std::vector<double> cumulative(mesh.faces.size());
    double total = 0.0;
    for (std::size_t i = 0; i < mesh.faces.size(); ++i) {
        const Face& f = mesh.faces[i];
        total += 0.5 * (mesh.vertices[f[1]] - mesh.vertices[f[0]]).cross(mesh.vertices[f[2]] - mesh.vertices[f[0]]).norm();
        cumulative[i] = total;
    }
    if (!(total > 0.0) || !std::isfinite(total)) throw SamplingError("mesh has zero surface area");

    Rng rng = make_stream(seed, 0xB0D1);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<SurfaceSample> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int k = 0; k < count; ++k) {
        const double pick = unit(rng) * total;
        auto it = std::upper_bound(cumulative.begin(), cumulative.end(), pick);
        if (it == cumulative.end()) --it;
        // upper_bound never lands on a zero-area face: its bound equals its predecessor's.
        const auto face_index = static_cast<std::size_t>(it - cumulative.begin());
        const Face& f = mesh.faces[face_index];
        double a = unit(rng);
        double b = unit(rng);
        if (a + b > 1.0) {
            a = 1.0 - a;
            b = 1.0 - b;
        }
        const Vec3& p0 = mesh.vertices[f[0]];
        const Vec3 e1 = mesh.vertices[f[1]] - p0;
        const Vec3 e2 = mesh.vertices[f[2]] - p0;
        Vec3 n = e1.cross(e2);
        const double len = n.norm();
        if (len > 0.0) n /= len;
        out.push_back({p0 + a * e1 + b * e2, n, static_cast<int>(face_index)});
    }
    return out;
}

std::vector<BodyRegion> face_regions(const BodyTemplate& body) {
    std::vector<BodyRegion> out;
    out.reserve(body.faces.size());
    for (const Face& f : body.faces) {
        Eigen::RowVectorXd w = body.skin_weights.row(f[0]) + body.skin_weights.row(f[1]) + body.skin_weights.row(f[2]);
        Eigen::Index best = 0;
        w.maxCoeff(&best);
        out.push_back(humanoid_joint_region(static_cast<int>(best)));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Asset file
// ---------------------------------------------------------------------------

namespace {

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j, const char* name) {
    if (!j.is_array()) throw FormatError(std::string(name) + " must be an array of rows");
    const auto rows = static_cast<Eigen::Index>(j.size());
    const auto cols = rows == 0 ? Eigen::Index{0} : static_cast<Eigen::Index>(j[0].size());
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const auto& row = j[static_cast<std::size_t>(r)];
        if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
            throw FormatError(std::string(name) + " rows must all have the same length");
        }
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
    }
    return m;
}

}  // namespace

nlohmann::json body_to_json(const BodyTemplate& body) {
    nlohmann::json doc;
    doc["format"] = "cforge-body";
    doc["version"] = 1;
    nlohmann::json verts = nlohmann::json::array();
    for (const Vec3& v : body.vertices) verts.push_back({v.x(), v.y(), v.z()});
    doc["vertices"] = std::move(verts);
    nlohmann::json faces = nlohmann::json::array();
    for (const Face& f : body.faces) faces.push_back({f[0], f[1], f[2]});
    doc["faces"] = std::move(faces);
    doc["parents"] = body.parents;
    doc["joint_regressor"] = matrix_to_json(body.joint_regressor);
    doc["skin_weights"] = matrix_to_json(body.skin_weights);
    doc["shape_basis"] = matrix_to_json(body.shape_basis);
    doc["pose_basis"] = matrix_to_json(body.pose_basis);
    doc["expr_basis"] = matrix_to_json(body.expr_basis);
    return doc;
}

BodyTemplate body_from_json(const nlohmann::json& doc) {
    BodyTemplate body;
    try {
        for (const auto& v : doc.at("vertices")) {
            if (v.size() != 3) throw FormatError("vertices must be 3-vectors");
            body.vertices.emplace_back(v[0].get<double>(), v[1].get<double>(), v[2].get<double>());
        }
        for (const auto& f : doc.at("faces")) {
            if (f.size() != 3) throw FormatError("faces must be index triples");
            body.faces.push_back({f[0].get<int>(), f[1].get<int>(), f[2].get<int>()});
        }
        body.parents = doc.at("parents").get<std::vector<int>>();
        body.joint_regressor = matrix_from_json(doc.at("joint_regressor"), "joint_regressor");
        body.skin_weights = matrix_from_json(doc.at("skin_weights"), "skin_weights");
        body.shape_basis = matrix_from_json(doc.at("shape_basis"), "shape_basis");
        body.pose_basis = matrix_from_json(doc.at("pose_basis"), "pose_basis");
        body.expr_basis = matrix_from_json(doc.at("expr_basis"), "expr_basis");
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("body asset: ") + e.what());
    }
    const Eigen::Index rows = 3 * body.vertex_count();
    for (Eigen::MatrixXd* b : {&body.shape_basis, &body.pose_basis, &body.expr_basis}) {
        if (b->cols() == 0) b->resize(rows, 0);
    }
    body.validate();
    return body;
}

void save_body_asset(const std::filesystem::path& path, const BodyTemplate& body) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot write " + path.string());
    out << body_to_json(body).dump() << '\n';
}

BodyTemplate load_body_asset(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open " + path.string());
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
    return body_from_json(doc);
}

}  // namespace cforge
