#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Core>
#include <Eigen/LU>

#include "deformsplat/fdm.hpp"

namespace deformsplat {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d; // quaternions are stored (w, x, y, z)
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

inline constexpr int kMaxShDegree = 3;
inline constexpr double kCovarianceEpsilon = 1e-8;

constexpr int sh_coeff_count(int degree) { return (degree + 1) * (degree + 1); }

/// Canonical Gaussian point cloud. Attributes are stored pre-activation:
/// scales in log space, opacities as logits, rotations as unnormalized quaternions.
///
/// The same type doubles as a gradient buffer (see `zeros_like`), since the
/// optimizer walks parameters and gradients with identical layouts.
struct GaussianCloud {
    std::vector<Vec3> positions;
    std::vector<Vec4> rotations;
    std::vector<Vec3> scales;
    std::vector<double> opacities;
    int sh_degree = 0;
    std::vector<Vec3> sh; // sh_coeff_count(sh_degree) entries per Gaussian
    FdmParams fdm;

    std::size_t size() const { return positions.size(); }
    int sh_per_gaussian() const { return sh_coeff_count(sh_degree); }

    /// Throws InvalidParameter if array lengths disagree.
    void check_consistent() const;

    /// Appends a copy of Gaussian `index` (including its deformation parameters).
    void append_copy(std::size_t index);
    /// Keeps entries whose flag is true, preserving order.
    void retain(const std::vector<bool>& keep);
};

/// Same shape as `cloud`, every value zero.
GaussianCloud zeros_like(const GaussianCloud& cloud);

/// Activated attributes of a single Gaussian.
struct ActivatedGaussian {
    Vec3 position;
    Mat3 rotation;
    Vec3 scale;
    double opacity;
    Vec3 color; // degree-0 coefficient clamped at zero
};

double sigmoid(double x);
double logit(double p);

/// Rotation of r / |r|. Throws InvalidParameter for zero or non-finite input.
Mat3 quat_to_rotation(const Vec4& r_raw);

/// R diag(s)^2 R^T. Throws InvalidParameter unless all scales are positive and finite.
Mat3 build_covariance(const Vec4& r_raw, const Vec3& scale);

/// exp(-1/2 (x - mu)^T Sigma^-1 (x - mu)), with Sigma regularized by kCovarianceEpsilon.
double gaussian_density(const Vec3& x, const Vec3& mu, const Mat3& covariance);

ActivatedGaussian activate(const GaussianCloud& cloud, std::size_t index);

// Spherical harmonics. The degree-0 basis is 1 so the first coefficient is the
// RGB color itself; higher bands use the real SH constants from 3DGS.

/// Fills `out` (length sh_coeff_count(degree)) with basis values at unit direction `dir`.
void sh_basis(int degree, const Vec3& dir, std::span<double> out);

/// Color before clamping at direction `dir`.
Vec3 sh_color(int degree, std::span<const Vec3> coeffs, const Vec3& dir);

/// Backward of sh_color: accumulates into coefficient grads and returns d/d(dir).
Vec3 sh_color_backward(int degree, std::span<const Vec3> coeffs, const Vec3& dir,
                       const Vec3& grad_color, std::span<Vec3> grad_coeffs);

} // namespace deformsplat
