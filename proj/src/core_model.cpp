#include "deformsplat/core_model.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include <Eigen/Cholesky>

#include "deformsplat/errors.hpp"

namespace deformsplat {

void GaussianCloud::check_consistent() const {
    const std::size_t n = positions.size();
    if (rotations.size() != n || scales.size() != n || opacities.size() != n) {
        throw InvalidParameter("GaussianCloud: attribute arrays have different lengths");
    }
    if (sh_degree < 0 || sh_degree > kMaxShDegree) {
        throw InvalidParameter("GaussianCloud: SH degree must be in [0, 3]");
    }
    if (sh.size() != n * static_cast<std::size_t>(sh_per_gaussian())) {
        throw InvalidParameter("GaussianCloud: SH coefficient count does not match N");
    }
    const std::size_t fdm_len = n * fdm.gaussian_stride();
    if (fdm.basis_count < 1 || fdm.weights.size() != fdm_len || fdm.centers.size() != fdm_len ||
        fdm.widths.size() != fdm_len) {
        throw InvalidParameter("GaussianCloud: deformation parameters do not match N");
    }
}

void GaussianCloud::append_copy(std::size_t index) {
    positions.push_back(positions[index]);
    rotations.push_back(rotations[index]);
    scales.push_back(scales[index]);
    opacities.push_back(opacities[index]);
    const auto c = static_cast<std::size_t>(sh_per_gaussian());
    for (std::size_t k = 0; k < c; ++k) {
        sh.push_back(sh[index * c + k]);
    }
    const std::size_t stride = fdm.gaussian_stride();
    const std::size_t off = index * stride;
    for (std::size_t k = 0; k < stride; ++k) {
        fdm.weights.push_back(fdm.weights[off + k]);
        fdm.centers.push_back(fdm.centers[off + k]);
        fdm.widths.push_back(fdm.widths[off + k]);
    }
}

namespace {

template <class T>
void retain_blocks(std::vector<T>& v, const std::vector<bool>& keep, std::size_t block) {
    std::size_t out = 0;
    for (std::size_t i = 0; i < keep.size(); ++i) {
        if (!keep[i]) {
            continue;
        }
        if (out != i) {
            std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(i * block), block,
                        v.begin() + static_cast<std::ptrdiff_t>(out * block));
        }
        ++out;
    }
    v.resize(out * block);
}

} // namespace

void GaussianCloud::retain(const std::vector<bool>& keep) {
    if (keep.size() != size()) {
        throw InvalidParameter("GaussianCloud::retain: mask length does not match N");
    }
    retain_blocks(positions, keep, 1);
    retain_blocks(rotations, keep, 1);
    retain_blocks(scales, keep, 1);
    retain_blocks(opacities, keep, 1);
    retain_blocks(sh, keep, static_cast<std::size_t>(sh_per_gaussian()));
    retain_blocks(fdm.weights, keep, fdm.gaussian_stride());
    retain_blocks(fdm.centers, keep, fdm.gaussian_stride());
    retain_blocks(fdm.widths, keep, fdm.gaussian_stride());
}

GaussianCloud zeros_like(const GaussianCloud& cloud) {
    GaussianCloud z;
    const std::size_t n = cloud.size();
    z.positions.assign(n, Vec3::Zero());
    z.rotations.assign(n, Vec4::Zero());
    z.scales.assign(n, Vec3::Zero());
    z.opacities.assign(n, 0.0);
    z.sh_degree = cloud.sh_degree;
    z.sh.assign(cloud.sh.size(), Vec3::Zero());
    z.fdm.basis_count = cloud.fdm.basis_count;
    z.fdm.kind = cloud.fdm.kind;
    z.fdm.weights.assign(cloud.fdm.weights.size(), 0.0);
    z.fdm.centers.assign(cloud.fdm.centers.size(), 0.0);
    z.fdm.widths.assign(cloud.fdm.widths.size(), 0.0);
    return z;
}

double sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double logit(double p) { return std::log(p / (1.0 - p)); }

Mat3 quat_to_rotation(const Vec4& r_raw) {
    if (!r_raw.allFinite()) {
        throw InvalidParameter("quat_to_rotation: quaternion is not finite");
    }
    const double n = r_raw.norm();
    if (n == 0.0) {
        throw InvalidParameter("quat_to_rotation: zero quaternion");
    }
    const Vec4 q = r_raw / n;
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Mat3 r;
    r << 1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y),
        2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x),
        2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y);
    return r;
}

Mat3 build_covariance(const Vec4& r_raw, const Vec3& scale) {
    if (!scale.allFinite() || (scale.array() <= 0.0).any()) {
        throw InvalidParameter("build_covariance: scales must be positive and finite");
    }
    const Mat3 m = quat_to_rotation(r_raw) * scale.asDiagonal();
    return m * m.transpose();
}

double gaussian_density(const Vec3& x, const Vec3& mu, const Mat3& covariance) {
    const Mat3 reg = covariance + kCovarianceEpsilon * Mat3::Identity();
    const Eigen::LDLT<Mat3> ldlt(reg);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
        (ldlt.vectorD().array() <= 0.0).any()) {
        throw NumericalError("gaussian_density: covariance is singular after regularization");
    }
    const Vec3 d = x - mu;
    const double m = d.dot(ldlt.solve(d));
    if (!std::isfinite(m)) {
        throw NumericalError("gaussian_density: non-finite Mahalanobis distance");
    }
    return std::exp(-0.5 * std::max(m, 0.0));
}

ActivatedGaussian activate(const GaussianCloud& cloud, std::size_t index) {
    if (index >= cloud.size()) {
        throw InvalidParameter("activate: index " + std::to_string(index) + " out of range");
    }
    ActivatedGaussian g;
    g.position = cloud.positions[index];
    g.rotation = quat_to_rotation(cloud.rotations[index]);
    g.scale = cloud.scales[index].array().exp();
    g.opacity = sigmoid(cloud.opacities[index]);
    g.color = cloud.sh[index * static_cast<std::size_t>(cloud.sh_per_gaussian())].cwiseMax(0.0);
    return g;
}

namespace {

// Forward-mode dual number carrying d/d(x, y, z).
struct Dual3 {
    double v = 0.0;
    Vec3 d = Vec3::Zero();
};

Dual3 operator-(const Dual3& a, const Dual3& b) { return {a.v - b.v, a.d - b.d}; }
Dual3 operator*(const Dual3& a, const Dual3& b) { return {a.v * b.v, a.d * b.v + b.d * a.v}; }
Dual3 operator*(double s, const Dual3& a) { return {s * a.v, s * a.d}; }

constexpr double kC1 = 0.4886025119029199;
constexpr std::array<double, 5> kC2 = {1.0925484305920792, -1.0925484305920792,
                                       0.31539156525252005, -1.0925484305920792,
                                       0.5462742152960396};
constexpr std::array<double, 7> kC3 = {-0.5900435899266435, 2.890611442640554,
                                       -0.4570457994644658, 0.3731763325901154,
                                       -0.4570457994644658, 1.445305721320277,
                                       -0.5900435899266435};

template <class T>
void sh_basis_impl(int degree, const T& x, const T& y, const T& z, T one, std::span<T> out) {
    out[0] = one;
    if (degree < 1) {
        return;
    }
    out[1] = -kC1 * y;
    out[2] = kC1 * z;
    out[3] = -kC1 * x;
    if (degree < 2) {
        return;
    }
    const T xx = x * x, yy = y * y, zz = z * z;
    const T xy = x * y, yz = y * z, xz = x * z;
    out[4] = kC2[0] * xy;
    out[5] = kC2[1] * yz;
    out[6] = kC2[2] * (2.0 * zz - xx - yy);
    out[7] = kC2[3] * xz;
    out[8] = kC2[4] * (xx - yy);
    if (degree < 3) {
        return;
    }
    out[9] = kC3[0] * (y * (3.0 * xx - yy));
    out[10] = kC3[1] * (xy * z);
    out[11] = kC3[2] * (y * (4.0 * zz - xx - yy));
    out[12] = kC3[3] * (z * (2.0 * zz - 3.0 * xx - 3.0 * yy));
    out[13] = kC3[4] * (x * (4.0 * zz - xx - yy));
    out[14] = kC3[5] * (z * (xx - yy));
    out[15] = kC3[6] * (x * (xx - 3.0 * yy));
}

} // namespace

void sh_basis(int degree, const Vec3& dir, std::span<double> out) {
    sh_basis_impl<double>(degree, dir.x(), dir.y(), dir.z(), 1.0, out);
}

Vec3 sh_color(int degree, std::span<const Vec3> coeffs, const Vec3& dir) {
    std::array<double, 16> basis{};
    sh_basis(degree, dir, basis);
    Vec3 c = Vec3::Zero();
    for (int k = 0; k < sh_coeff_count(degree); ++k) {
        c += basis[static_cast<std::size_t>(k)] * coeffs[static_cast<std::size_t>(k)];
    }
    return c;
}

Vec3 sh_color_backward(int degree, std::span<const Vec3> coeffs, const Vec3& dir,
                       const Vec3& grad_color, std::span<Vec3> grad_coeffs) {
    std::array<Dual3, 16> basis{};
    const Dual3 x{dir.x(), Vec3::UnitX()};
    const Dual3 y{dir.y(), Vec3::UnitY()};
    const Dual3 z{dir.z(), Vec3::UnitZ()};
    sh_basis_impl<Dual3>(degree, x, y, z, Dual3{1.0, Vec3::Zero()}, basis);
    Vec3 grad_dir = Vec3::Zero();
    for (int k = 0; k < sh_coeff_count(degree); ++k) {
        const auto kk = static_cast<std::size_t>(k);
        grad_coeffs[kk] += basis[kk].v * grad_color;
        grad_dir += basis[kk].d * coeffs[kk].dot(grad_color);
    }
    return grad_dir;
}

} // namespace deformsplat
