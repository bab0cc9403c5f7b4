#include "deformsplat/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "deformsplat/errors.hpp"
#include "deformsplat/rasterizer.hpp"

namespace deformsplat {

namespace {

Vec4 quat_mul(const Vec4& a, const Vec4& b) {
    return {a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
            a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
            a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
            a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]};
}

Vec4 axis_angle(const Vec3& axis, double angle) {
    const Vec3 a = axis.normalized() * std::sin(0.5 * angle);
    return {std::cos(0.5 * angle), a.x(), a.y(), a.z()};
}

double poke_envelope(const SyntheticSpec& spec, double t) {
    if (t <= spec.poke_start || t >= spec.poke_end) {
        return 0.0;
    }
    const double s = std::sin(std::numbers::pi * (t - spec.poke_start) /
                              (spec.poke_end - spec.poke_start));
    return s * s;
}

// Additive recurrence with the plastic number: low-discrepancy points in [0, 1)^2.
Vec2 r2_point(std::size_t i) {
    constexpr double g = 1.32471795724474602596;
    constexpr double a1 = 1.0 / g;
    constexpr double a2 = 1.0 / (g * g);
    const double k = static_cast<double>(i) + 1.0;
    return {std::fmod(0.5 + a1 * k, 1.0), std::fmod(0.5 + a2 * k, 1.0)};
}

} // namespace

CameraFrame SyntheticScene::camera_at(double t) const {
    const double f = 0.9 * spec.width;
    Mat4 w2c = Mat4::Identity();
    const double a = spec.camera_motion;
    const Vec3 center(a * std::cos(2.0 * std::numbers::pi * t) - a,
                      a * std::sin(2.0 * std::numbers::pi * t), 0.0);
    w2c.topRightCorner<3, 1>() = -center;
    return CameraFrame::from_pinhole(f, f, 0.5 * (spec.width - 1), 0.5 * (spec.height - 1),
                                     spec.width, spec.height, w2c, t);
}

OccluderBox SyntheticScene::occluder_at(double t) const {
    if (!spec.occluder) {
        return {};
    }
    const int w = spec.width, h = spec.height;
    const int bw = std::clamp(static_cast<int>(std::lround(std::sqrt(spec.occluder_area) * w)), 1, w);
    const int bh = std::clamp(
        static_cast<int>(std::lround(spec.occluder_area * w * h / static_cast<double>(bw))), 1, h);
    const double sx = 2.0, sy = 2.0;
    const double ex = std::max(0.0, static_cast<double>(w - bw - 2));
    const double ey = std::max(0.0, static_cast<double>(h - bh - 2));
    OccluderBox box;
    box.x0 = static_cast<int>(std::lround(sx + (ex - sx) * t));
    box.y0 = static_cast<int>(std::lround(sy + (ey - sy) * t));
    box.x1 = std::min(w - 1, box.x0 + bw - 1);
    box.y1 = std::min(h - 1, box.y0 + bh - 1);
    return box;
}

GaussianCloud SyntheticScene::cloud_at(double t) const {
    GaussianCloud c;
    const std::size_t n = gaussians.size();
    c.positions.reserve(n);
    c.rotations.reserve(n);
    c.scales.reserve(n);
    c.opacities.reserve(n);
    c.sh.reserve(n);
    const double two_pi = 2.0 * std::numbers::pi;
    const double env = poke_envelope(spec, t);
    for (const auto& g : gaussians) {
        double offset = 0.0;
        double angle = 0.0;
        double scale = 0.0;
        if (spec.profile == MotionProfile::Sinusoidal) {
            const double s = std::sin(two_pi * spec.frequency * t + g.phase);
            offset = spec.translation_amplitude * s;
            angle = spec.rotation_amplitude * s;
            scale = spec.scale_amplitude * s;
        } else {
            offset = spec.poke_amplitude * env * g.poke_weight;
            angle = spec.rotation_amplitude * env * g.poke_weight;
            scale = spec.scale_amplitude * env * g.poke_weight;
        }
        c.positions.push_back(g.position + offset * g.motion_dir);
        c.rotations.push_back(quat_mul(g.rotation, axis_angle(g.rotation_axis, angle)));
        c.scales.push_back(g.log_scale + Vec3::Constant(scale));
        c.opacities.push_back(g.opacity_logit);
        c.sh.push_back(g.color);
    }
    c.fdm = init_fdm(n, 1);
    return c;
}

SyntheticScene generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
    if (spec.frames < 1) {
        throw InvalidParameter("generate_synthetic: frame count must be >= 1");
    }
    if (spec.gaussians < 1 || spec.width < 1 || spec.height < 1 || !(spec.depth > 0.0)) {
        throw InvalidParameter("generate_synthetic: invalid scene dimensions");
    }
    if (spec.occluder && !(spec.occluder_area > 0.0 && spec.occluder_area < 1.0)) {
        throw InvalidParameter("generate_synthetic: occluder area must lie in (0, 1)");
    }
    SyntheticScene scene;
    scene.spec = spec;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);

    // Tissue sheet slightly larger than the view frustum at the working depth.
    const double f = 0.9 * spec.width;
    const double half_x = 1.15 * spec.depth * 0.5 * spec.width / f;
    const double half_y = 1.15 * spec.depth * 0.5 * spec.height / f;
    const double spacing = std::sqrt(4.0 * half_x * half_y / spec.gaussians);
    const Vec3 base_color(0.75, 0.38, 0.36);

    for (int i = 0; i < spec.gaussians; ++i) {
        ScriptedGaussian g;
        const Vec2 r = r2_point(static_cast<std::size_t>(i));
        const double x = (2.0 * r.x() - 1.0) * half_x + (u01(rng) - 0.5) * 0.3 * spacing;
        const double y = (2.0 * r.y() - 1.0) * half_y + (u01(rng) - 0.5) * 0.3 * spacing;
        const double z = spec.depth + 0.2 * std::sin(1.3 * x) * std::cos(0.9 * y);
        g.position = Vec3(x, y, z);
        const Vec3 tilt_axis(u01(rng) - 0.5, u01(rng) - 0.5, 0.0);
        const Vec4 spin = axis_angle(Vec3::UnitZ(), 2.0 * std::numbers::pi * u01(rng));
        const Vec4 tilt = tilt_axis.norm() > 0.0 ? axis_angle(tilt_axis, 0.3 * (u01(rng) - 0.5))
                                                 : Vec4(1.0, 0.0, 0.0, 0.0);
        g.rotation = quat_mul(spin, tilt);
        g.log_scale = Vec3(std::log(spacing * (0.55 + 0.4 * u01(rng))),
                           std::log(spacing * (0.55 + 0.4 * u01(rng))),
                           std::log(0.2 * spacing));
        g.opacity_logit = logit(0.85 + 0.1 * u01(rng));
        const Vec3 pattern(0.12 * std::sin(2.1 * x + 0.7 * y), 0.1 * std::cos(1.7 * y - 0.4 * x),
                           0.08 * std::sin(1.1 * x * y));
        const Vec3 jitter(u01(rng) - 0.5, u01(rng) - 0.5, u01(rng) - 0.5);
        g.color = (base_color + pattern + 0.25 * jitter).cwiseMax(0.05).cwiseMin(0.95);
        g.rotation_axis = Vec3(u01(rng) - 0.5, u01(rng) - 0.5, u01(rng) - 0.5);
        if (g.rotation_axis.norm() < 1e-6) {
            g.rotation_axis = Vec3::UnitZ();
        }
        if (spec.profile == MotionProfile::Sinusoidal) {
            // Spatially coherent wave with a little per-Gaussian variation.
            g.phase = 1.1 * x - 0.8 * y + 0.5 * (u01(rng) - 0.5);
            g.motion_dir = Vec3(0.8 + 0.2 * u01(rng), 0.5 * (u01(rng) - 0.5), 0.6).normalized();
        } else {
            const double rho = spec.poke_radius;
            g.poke_weight = std::exp(-(x * x + y * y) / (2.0 * rho * rho));
            g.motion_dir = Vec3(x / rho, y / rho, 1.0);
        }
        scene.gaussians.push_back(g);
    }

    RasterSettings settings;
    const Vec3 background = Vec3::Zero();
    for (int i = 0; i < spec.frames; ++i) {
        const double t = spec.frames > 1 ? static_cast<double>(i) / (spec.frames - 1) : 0.0;
        const CameraFrame cam = scene.camera_at(t);
        const RenderOutput out = render(scene.cloud_at(t), cam, background, settings);
        RGBDFrame frame;
        frame.time = t;
        frame.color = out.color;
        frame.depth = out.depth;
        frame.mask = Image(spec.width, spec.height, 1, 1.0);
        const OccluderBox box = scene.occluder_at(t);
        for (int y = 0; y < spec.height; ++y) {
            for (int x = 0; x < spec.width; ++x) {
                if (out.accum_alpha.at(x, y) < 0.5) {
                    frame.mask.at(x, y) = 0.0;
                }
                if (box.contains(x, y)) {
                    frame.mask.at(x, y) = 0.0;
                    frame.depth.at(x, y) = kOccluderDepth;
                    for (int c = 0; c < 3; ++c) {
                        frame.color.at(x, y, c) = kOccluderColor[c];
                    }
                }
            }
        }
        scene.cams.push_back(cam);
        scene.frames.push_back(std::move(frame));
        scene.occluders.push_back(box);
    }
    scene.split = split_frames(static_cast<std::size_t>(spec.frames));
    return scene;
}

} // namespace deformsplat
