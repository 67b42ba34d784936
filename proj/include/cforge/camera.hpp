#pragma once

#include <Eigen/Core>

#include <array>

namespace cforge {

/// Camera intrinsics and extrinsics resolved from a CameraPose. Camera space
/// is x right, y down, z forward; pixel (px, py) has its center at
/// (px + 0.5, py + 0.5).
struct CameraFrame {
    Eigen::Matrix3d world_to_camera;
    Eigen::Vector3d eye;
    double fx = 0, fy = 0, cx = 0, cy = 0;
    int width = 0, height = 0;
    double near_plane = 0, far_plane = 0;
};

/// Orbit camera looking at `target` from a spherical offset. Azimuth 0 looks
/// from +z; positive elevation looks down from above (world y up).
struct CameraPose {
    double distance = 2.0;
    double fovy_deg = 50.0;
    double elevation_deg = 0.0;
    double azimuth_deg = 0.0;
    std::array<double, 3> target{0.0, 0.0, 0.0};
    int width = 64;
    int height = 64;
    double near_plane = 0.01;
    double far_plane = 100.0;

    /// Throws InvalidParameter on non-positive distance, fovy outside
    /// (0, 180), elevation at the poles or empty image size.
    void validate() const;
    CameraFrame frame() const;

    bool operator==(const CameraPose&) const = default;
};

}  // namespace cforge
