#pragma once

#include <optional>

#include "deformsplat/core_model.hpp"

namespace deformsplat {

/// Pinhole camera at one video timestamp. `world_to_camera` maps world points
/// into the camera frame (x right, y down, z forward).
struct CameraFrame {
    Mat3 intrinsics = Mat3::Identity();
    Mat4 world_to_camera = Mat4::Identity();
    double time = 0.0; // normalized to [0, 1]
    int width = 0;
    int height = 0;

    static CameraFrame from_pinhole(double fx, double fy, double cx, double cy, int width,
                                    int height, const Mat4& world_to_camera = Mat4::Identity(),
                                    double time = 0.0);

    double fx() const { return intrinsics(0, 0); }
    double fy() const { return intrinsics(1, 1); }
    double cx() const { return intrinsics(0, 2); }
    double cy() const { return intrinsics(1, 2); }

    Mat3 rotation() const { return world_to_camera.topLeftCorner<3, 3>(); }
    Vec3 translation() const { return world_to_camera.topRightCorner<3, 1>(); }
    Vec3 center() const { return -rotation().transpose() * translation(); }

    Vec3 to_camera(const Vec3& world) const { return rotation() * world + translation(); }
    Vec3 to_world(const Vec3& camera) const {
        return rotation().transpose() * (camera - translation());
    }

    /// Pixel coordinates of a camera-frame point; nullopt when z <= near.
    std::optional<Vec2> project_camera_point(const Vec3& p, double near = 0.01) const;

    /// Throws InvalidParameter for non-positive focal lengths, non-zero skew,
    /// non-orthonormal rotation, or empty image dimensions.
    void validate() const;
};

} // namespace deformsplat
