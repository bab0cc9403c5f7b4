#pragma once

#include <cmath>
#include <algorithm>
#include <random>
#include <string>

#include "deformsplat/camera.hpp"
#include "deformsplat/core_model.hpp"
#include "deformsplat/fdm.hpp"
#include "deformsplat/rasterizer.hpp"
#include "deformsplat/training.hpp"

namespace testutil {

using namespace deformsplat;

// Rodrigues rotation, independent of the quaternion code under test.
inline Mat3 axis_angle_matrix(const Vec3& axis, double angle) {
    const Vec3 k = axis.normalized();
    Mat3 kx;
    kx << 0, -k.z(), k.y(), k.z(), 0, -k.x(), -k.y(), k.x(), 0;
    return Mat3::Identity() + std::sin(angle) * kx + (1.0 - std::cos(angle)) * kx * kx;
}

inline Vec4 axis_angle_quat(const Vec3& axis, double angle) {
    const Vec3 a = axis.normalized() * std::sin(0.5 * angle);
    return {std::cos(0.5 * angle), a.x(), a.y(), a.z()};
}

inline CameraFrame square_camera(int size, double t = 0.0, double focal_scale = 0.9) {
    const double f = focal_scale * size;
    return CameraFrame::from_pinhole(f, f, 0.5 * (size - 1), 0.5 * (size - 1), size, size,
                                     Mat4::Identity(), t);
}

// Random Gaussians in front of an identity camera, spread across a size x size view.
inline GaussianCloud random_cloud(std::mt19937_64& rng, int n, int basis_count, int size,
                                  bool random_fdm, int sh_degree = 0) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    GaussianCloud c;
    c.sh_degree = sh_degree;
    const double depth = 3.0;
    const double half = 0.45 * depth * size / (0.9 * size);
    for (int i = 0; i < n; ++i) {
        c.positions.emplace_back(half * u(rng), half * u(rng), depth + 0.8 * u(rng));
        c.rotations.emplace_back(1.0 + 0.3 * u(rng), 0.4 * u(rng), 0.4 * u(rng), 0.4 * u(rng));
        c.scales.emplace_back(std::log(0.12 + 0.15 * u01(rng)), std::log(0.12 + 0.15 * u01(rng)),
                              std::log(0.05 + 0.1 * u01(rng)));
        c.opacities.push_back(1.5 * u(rng));
        for (int k = 0; k < sh_coeff_count(sh_degree); ++k) {
            if (k == 0) {
                c.sh.emplace_back(0.2 + 0.6 * u01(rng), 0.2 + 0.6 * u01(rng), 0.2 + 0.6 * u01(rng));
            } else {
                c.sh.emplace_back(0.1 * u(rng), 0.1 * u(rng), 0.1 * u(rng));
            }
        }
    }
    c.fdm = init_fdm(static_cast<std::size_t>(n), basis_count);
    if (random_fdm) {
        for (auto& w : c.fdm.weights) {
            w = 0.05 * u(rng);
        }
        for (auto& th : c.fdm.centers) {
            th = u01(rng);
        }
        for (auto& s : c.fdm.widths) {
            s = 0.15 + 0.3 * u01(rng);
        }
    }
    return c;
}

// Random upstream gradients; the scalar objective is <grad_color, C> + <grad_depth, D>.
struct Upstream {
    Image color;
    Image depth;
};

inline Upstream random_upstream(std::mt19937_64& rng, int w, int h, double depth_weight = 1.0) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Upstream up{Image(w, h, 3), Image(w, h, 1)};
    for (auto& v : up.color.data) v = u(rng);
    for (auto& v : up.depth.data) v = depth_weight * u(rng);
    return up;
}

inline double objective(const GaussianCloud& cloud, const CameraFrame& cam, const Upstream& up,
                        const RasterSettings& settings) {
    const RenderOutput out = render(cloud, cam, Vec3(0.1, 0.2, 0.3), settings);
    double f = 0.0;
    for (std::size_t i = 0; i < out.color.data.size(); ++i) f += up.color.data[i] * out.color.data[i];
    for (std::size_t i = 0; i < out.depth.data.size(); ++i) f += up.depth.data[i] * out.depth.data[i];
    return f;
}

struct GradCheck {
    int checked = 0;
    int failed = 0;
    double worst_rel = 0.0;
    std::string worst;
};

// Passes when |a - n| < abs_floor or |a - n| / max(|a|, |n|) < rel_tol.
inline bool grad_close(double analytic, double numeric, double rel_tol = 1e-3,
                       double abs_floor = 1e-6) {
    const double diff = std::abs(analytic - numeric);
    if (diff < abs_floor) return true;
    return diff / std::max(std::abs(analytic), std::abs(numeric)) < rel_tol;
}

// Central differences on every scalar of every parameter group (step 1e-4 for
// positions, `other_step` otherwise, extrapolated from h and h/2), compared
// with render_backward.
inline GradCheck check_gradients(GaussianCloud cloud, const CameraFrame& cam, const Upstream& up,
                                 const RasterSettings& settings, int stride = 1,
                                 double other_step = 1e-3) {
    const RenderGradients g =
        render_backward(cloud, cam, Vec3(0.1, 0.2, 0.3), up.color, up.depth, settings);
    GradCheck r;
    for (int gi = 0; gi < kParamGroupCount; ++gi) {
        const auto group = static_cast<ParamGroup>(gi);
        const double h = group == ParamGroup::Position ? 1e-4 : other_step;
        const auto values = group_values(cloud, group);
        const auto grads = group_values(g.params, group);
        for (std::size_t k = 0; k < values.size(); k += static_cast<std::size_t>(stride)) {
            const double keep = values[k];
            auto central = [&](double step) {
                values[k] = keep + step;
                const double fp = objective(cloud, cam, up, settings);
                values[k] = keep - step;
                const double fm = objective(cloud, cam, up, settings);
                values[k] = keep;
                return (fp - fm) / (2.0 * step);
            };
            // Richardson extrapolation of the central difference: O(h^4) error.
            const double numeric = (4.0 * central(0.5 * h) - central(h)) / 3.0;
            ++r.checked;
            const double diff = std::abs(grads[k] - numeric);
            const double rel = diff < 1e-6 ? 0.0 : diff / std::max(std::abs(grads[k]), std::abs(numeric));
            if (!grad_close(grads[k], numeric)) {
                ++r.failed;
            }
            if (rel > r.worst_rel) {
                r.worst_rel = rel;
                r.worst = std::string(group_name(group)) + "[" + std::to_string(k) +
                          "] analytic " + std::to_string(grads[k]) + " numeric " +
                          std::to_string(numeric);
            }
        }
    }
    return r;
}

} // namespace testutil
