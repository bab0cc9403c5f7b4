#include "deformsplat/camera.hpp"

#include <cmath>

#include "deformsplat/errors.hpp"

namespace deformsplat {

CameraFrame CameraFrame::from_pinhole(double fx, double fy, double cx, double cy, int width,
                                      int height, const Mat4& world_to_camera, double time) {
    CameraFrame cam;
    cam.intrinsics << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
    cam.world_to_camera = world_to_camera;
    cam.time = time;
    cam.width = width;
    cam.height = height;
    return cam;
}

std::optional<Vec2> CameraFrame::project_camera_point(const Vec3& p, double near) const {
    if (!(p.z() > near)) {
        return std::nullopt;
    }
    return Vec2(fx() * p.x() / p.z() + cx(), fy() * p.y() / p.z() + cy());
}

void CameraFrame::validate() const {
    if (width <= 0 || height <= 0) {
        throw InvalidParameter("camera: image dimensions must be positive");
    }
    if (!intrinsics.allFinite() || !world_to_camera.allFinite() || !std::isfinite(time)) {
        throw InvalidParameter("camera: non-finite parameters");
    }
    if (!(fx() > 0.0) || !(fy() > 0.0)) {
        throw InvalidParameter("camera: focal lengths must be positive");
    }
    if (intrinsics(0, 1) != 0.0 || intrinsics(1, 0) != 0.0 || intrinsics(2, 0) != 0.0 ||
        intrinsics(2, 1) != 0.0 || intrinsics(2, 2) != 1.0) {
        throw InvalidParameter("camera: intrinsics must be a zero-skew pinhole matrix");
    }
    const Mat3 r = rotation();
    if ((r * r.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-6 ||
        std::abs(r.determinant() - 1.0) > 1e-6) {
        throw InvalidParameter("camera: extrinsic rotation is not orthonormal");
    }
    const Eigen::RowVector4d last = world_to_camera.row(3);
    if (last != Eigen::RowVector4d(0.0, 0.0, 0.0, 1.0)) {
        throw InvalidParameter("camera: extrinsic bottom row must be (0, 0, 0, 1)");
    }
}

} // namespace deformsplat
