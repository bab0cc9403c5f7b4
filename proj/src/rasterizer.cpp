#include "deformsplat/rasterizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <thread>

#include "deformsplat/errors.hpp"

namespace deformsplat {

RasterSettings RasterSettings::exact() {
    RasterSettings s;
    s.min_alpha = 0.0;
    s.min_transmittance = 0.0;
    s.extent_sigmas = 0.0;
    return s;
}

bool PixelBlender::add(double alpha, const Vec3& color, double depth) {
    const double a = std::min(settings_.max_alpha, alpha);
    if (a < settings_.min_alpha) {
        return true;
    }
    const double w = a * transmittance_;
    color_ += w * color;
    depth_numerator_ += w * depth;
    weight_sum_ += w;
    transmittance_ *= 1.0 - a;
    return !(transmittance_ < settings_.min_transmittance);
}

double PixelBlender::depth() const {
    // The weight sum equals 1 - T but keeps full precision on nearly empty pixels.
    return depth_numerator_ / std::max(weight_sum_, settings_.depth_alpha_floor);
}

std::optional<Splat2D> project_gaussian(const Vec3& mean, const Mat3& covariance,
                                        const CameraFrame& cam, const RasterSettings& settings) {
    const Vec3 p = cam.to_camera(mean);
    const auto uv = cam.project_camera_point(p, settings.near_plane);
    if (!uv) {
        return std::nullopt;
    }
    const double z = p.z();
    Eigen::Matrix<double, 2, 3> j;
    j << cam.fx() / z, 0.0, -cam.fx() * p.x() / (z * z), 0.0, cam.fy() / z,
        -cam.fy() * p.y() / (z * z);
    const Mat3 w = cam.rotation();
    Splat2D s;
    s.mean = *uv;
    s.covariance = j * w * covariance * w.transpose() * j.transpose();
    s.covariance(0, 1) = s.covariance(1, 0) = 0.5 * (s.covariance(0, 1) + s.covariance(1, 0));
    s.covariance += settings.low_pass * Mat2::Identity();
    s.conic = s.covariance.inverse();
    s.depth = z;

    if (settings.extent_sigmas > 0.0) {
        const double a = s.covariance(0, 0), b = s.covariance(0, 1), c = s.covariance(1, 1);
        const double half = 0.5 * (a - c);
        const double lambda_max = 0.5 * (a + c) + std::sqrt(half * half + b * b);
        const double r = std::ceil(settings.extent_sigmas * std::sqrt(lambda_max));
        s.x_min = std::max(0, static_cast<int>(std::floor(s.mean.x() - r)));
        s.x_max = std::min(cam.width - 1, static_cast<int>(std::ceil(s.mean.x() + r)));
        s.y_min = std::max(0, static_cast<int>(std::floor(s.mean.y() - r)));
        s.y_max = std::min(cam.height - 1, static_cast<int>(std::ceil(s.mean.y() + r)));
        if (!std::isfinite(r) || s.mean.x() + r < 0.0 || s.mean.y() + r < 0.0 ||
            s.mean.x() - r > cam.width - 1 || s.mean.y() - r > cam.height - 1) {
            s.x_min = 0;
            s.x_max = -1;
        }
    } else {
        s.x_min = 0;
        s.x_max = cam.width - 1;
        s.y_min = 0;
        s.y_max = cam.height - 1;
    }
    return s;
}

namespace {

template <class Fn>
void parallel_rows(int height, int threads, Fn&& fn) {
    const int n = std::max(1, std::min(threads, height));
    if (n == 1) {
        fn(0, height, 0);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(n));
    for (int t = 0; t < n; ++t) {
        const int begin = height * t / n;
        const int end = height * (t + 1) / n;
        pool.emplace_back([&fn, begin, end, t] { fn(begin, end, t); });
    }
    for (auto& th : pool) {
        th.join();
    }
}

[[noreturn]] void throw_non_finite(std::size_t index) {
    throw NumericalError("render: non-finite parameter at Gaussian " + std::to_string(index));
}

void check_finite(const GaussianCloud& cloud, const DeformedAttributes& deformed) {
    const auto c = static_cast<std::size_t>(cloud.sh_per_gaussian());
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        if (!deformed.positions[i].allFinite() || !deformed.rotations[i].allFinite() ||
            !deformed.scales[i].allFinite() || !std::isfinite(cloud.opacities[i])) {
            throw_non_finite(i);
        }
        for (std::size_t k = 0; k < c; ++k) {
            if (!cloud.sh[i * c + k].allFinite()) {
                throw_non_finite(i);
            }
        }
        if (deformed.rotations[i].squaredNorm() == 0.0) {
            throw NumericalError("render: zero rotation quaternion at Gaussian " +
                                 std::to_string(i));
        }
    }
}

void prepare(const GaussianCloud& cloud, const CameraFrame& cam, const RasterSettings& settings,
             ForwardContext& ctx) {
    cloud.check_consistent();
    cam.validate();
    ctx.deformed = deform_cloud(cloud, cam.time);
    check_finite(cloud, ctx.deformed);

    const std::size_t n = cloud.size();
    const auto n_sh = static_cast<std::size_t>(cloud.sh_per_gaussian());
    const Mat3 w = cam.rotation();
    const Vec3 cam_center = cam.center();
    ctx.projected.assign(n, ProjectedGaussian{});
    ctx.order.clear();

    for (std::size_t i = 0; i < n; ++i) {
        ProjectedGaussian& pg = ctx.projected[i];
        const Vec3& mu = ctx.deformed.positions[i];
        pg.unit_quat = ctx.deformed.rotations[i].normalized();
        pg.rotation = quat_to_rotation(pg.unit_quat);
        pg.scale = ctx.deformed.scales[i].array().exp();
        const Mat3 m = pg.rotation * pg.scale.asDiagonal();
        const Mat3 cov = m * m.transpose();
        const auto splat = project_gaussian(mu, cov, cam, settings);
        if (!splat || splat->x_min > splat->x_max || splat->y_min > splat->y_max) {
            continue;
        }
        if (!splat->covariance.allFinite() || !splat->conic.allFinite()) {
            throw_non_finite(i);
        }
        pg.visible = true;
        pg.splat = *splat;
        pg.camera_point = cam.to_camera(mu);
        pg.view_cov = w * cov * w.transpose();
        const double z = pg.camera_point.z();
        pg.jacobian << cam.fx() / z, 0.0, -cam.fx() * pg.camera_point.x() / (z * z), 0.0,
            cam.fy() / z, -cam.fy() * pg.camera_point.y() / (z * z);
        const std::span<const Vec3> coeffs(cloud.sh.data() + i * n_sh, n_sh);
        if (cloud.sh_degree == 0) {
            pg.raw_color = coeffs[0];
        } else {
            const Vec3 v = mu - cam_center;
            const double len = v.norm();
            pg.view_dir = len > 0.0 ? Vec3(v / len) : Vec3::UnitZ();
            pg.raw_color = sh_color(cloud.sh_degree, coeffs, pg.view_dir);
        }
        pg.splat.color = pg.raw_color.cwiseMax(0.0);
        pg.splat.opacity = sigmoid(cloud.opacities[i]);
        ctx.order.push_back(static_cast<std::uint32_t>(i));
    }

    std::stable_sort(ctx.order.begin(), ctx.order.end(), [&](std::uint32_t a, std::uint32_t b) {
        return ctx.projected[a].splat.depth < ctx.projected[b].splat.depth;
    });

    const std::size_t pixels =
        static_cast<std::size_t>(cam.width) * static_cast<std::size_t>(cam.height);
    ctx.pixel_offsets.assign(pixels + 1, 0);
    for (const auto g : ctx.order) {
        const Splat2D& s = ctx.projected[g].splat;
        for (int y = s.y_min; y <= s.y_max; ++y) {
            for (int x = s.x_min; x <= s.x_max; ++x) {
                ++ctx.pixel_offsets[static_cast<std::size_t>(y) * cam.width + x + 1];
            }
        }
    }
    std::partial_sum(ctx.pixel_offsets.begin(), ctx.pixel_offsets.end(),
                     ctx.pixel_offsets.begin());
    ctx.pixel_entries.assign(ctx.pixel_offsets.back(), 0);
    std::vector<std::uint32_t> cursor(ctx.pixel_offsets.begin(), ctx.pixel_offsets.end() - 1);
    for (const auto g : ctx.order) {
        const Splat2D& s = ctx.projected[g].splat;
        for (int y = s.y_min; y <= s.y_max; ++y) {
            for (int x = s.x_min; x <= s.x_max; ++x) {
                ctx.pixel_entries[cursor[static_cast<std::size_t>(y) * cam.width + x]++] = g;
            }
        }
    }
}

// Gaussian falloff of a splat at pixel (x, y).
inline double falloff(const Splat2D& s, double x, double y, Vec2& d) {
    d = Vec2(x - s.mean.x(), y - s.mean.y());
    const double power = -0.5 * (s.conic(0, 0) * d.x() * d.x() + s.conic(1, 1) * d.y() * d.y()) -
                         s.conic(0, 1) * d.x() * d.y();
    return std::exp(std::min(power, 0.0));
}

struct SplatGrad {
    Vec2 mean = Vec2::Zero();
    Mat2 conic = Mat2::Zero();
    double opacity = 0.0;
    Vec3 color = Vec3::Zero();
    double depth = 0.0;
};

struct PixelFragment {
    std::uint32_t gaussian;
    double alpha;
    double falloff;
    double transmittance;
    bool clamped;
    Vec2 d;
};

} // namespace

RenderOutput render(const GaussianCloud& cloud, const CameraFrame& cam, const Vec3& background,
                    const RasterSettings& settings, ForwardContext* context) {
    ForwardContext local;
    ForwardContext& ctx = context ? *context : local;
    prepare(cloud, cam, settings, ctx);

    RenderOutput out{Image(cam.width, cam.height, 3), Image(cam.width, cam.height, 1),
                     Image(cam.width, cam.height, 1), Image(cam.width, cam.height, 1)};
    parallel_rows(cam.height, settings.threads, [&](int y0, int y1, int) {
        Vec2 d;
        for (int y = y0; y < y1; ++y) {
            for (int x = 0; x < cam.width; ++x) {
                const std::size_t p = static_cast<std::size_t>(y) * cam.width + x;
                PixelBlender blend(settings);
                for (auto k = ctx.pixel_offsets[p]; k < ctx.pixel_offsets[p + 1]; ++k) {
                    const Splat2D& s = ctx.projected[ctx.pixel_entries[k]].splat;
                    const double g = falloff(s, x, y, d);
                    if (!blend.add(s.opacity * g, s.color, s.depth)) {
                        break;
                    }
                }
                const Vec3 c = blend.color(background);
                for (int ch = 0; ch < 3; ++ch) {
                    out.color.at(x, y, ch) = c[ch];
                }
                out.depth.at(x, y) = blend.depth();
                out.accum_alpha.at(x, y) = blend.accum_alpha();
                out.weight_sum.at(x, y) = blend.weight_sum();
            }
        }
    });
    return out;
}

namespace {

// Gradient of the rotation matrix of unit quaternion q contracted with gR.
Vec4 rotation_backward(const Vec4& q, const Mat3& g) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Vec4 gq = Vec4::Zero();
    // clang-format off
    gq[0] = 2.0 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
    gq[1] = 2.0 * ( y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2.0 * x * g(1, 1) - w * g(1, 2)
                  + z * g(2, 0) + w * g(2, 1) - 2.0 * x * g(2, 2));
    gq[2] = 2.0 * (-2.0 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2)
                  - w * g(2, 0) + z * g(2, 1) - 2.0 * y * g(2, 2));
    gq[3] = 2.0 * (-2.0 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2.0 * z * g(1, 1)
                  + y * g(1, 2) + x * g(2, 0) + y * g(2, 1));
    // clang-format on
    return gq;
}

} // namespace

RenderGradients render_backward(const GaussianCloud& cloud, const CameraFrame& cam,
                                const Vec3& background, const Image& grad_color,
                                const Image& grad_depth, const RasterSettings& settings,
                                const ForwardContext* context) {
    if (grad_color.width != cam.width || grad_color.height != cam.height ||
        grad_color.channels != 3 || grad_depth.width != cam.width ||
        grad_depth.height != cam.height || grad_depth.channels != 1) {
        throw InvalidParameter("render_backward: gradient image dimensions do not match camera");
    }
    ForwardContext local;
    if (context == nullptr || context->projected.size() != cloud.size()) {
        prepare(cloud, cam, settings, local);
        context = &local;
    }
    const ForwardContext& ctx = *context;
    const std::size_t n = cloud.size();

    const int threads = std::max(1, std::min(settings.threads, cam.height));
    std::vector<std::vector<SplatGrad>> partial(static_cast<std::size_t>(threads),
                                                std::vector<SplatGrad>(n));

    parallel_rows(cam.height, threads, [&](int y0, int y1, int tid) {
        auto& acc = partial[static_cast<std::size_t>(tid)];
        std::vector<PixelFragment> frags;
        for (int y = y0; y < y1; ++y) {
            for (int x = 0; x < cam.width; ++x) {
                const std::size_t p = static_cast<std::size_t>(y) * cam.width + x;
                const Vec3 g_color(grad_color.at(x, y, 0), grad_color.at(x, y, 1),
                                   grad_color.at(x, y, 2));
                const double g_depth = grad_depth.at(x, y);
                if (g_color.isZero() && g_depth == 0.0) {
                    continue;
                }
                frags.clear();
                double t = 1.0;
                double depth_num = 0.0;
                double accum = 0.0;
                for (auto k = ctx.pixel_offsets[p]; k < ctx.pixel_offsets[p + 1]; ++k) {
                    const auto gi = ctx.pixel_entries[k];
                    const Splat2D& s = ctx.projected[gi].splat;
                    PixelFragment f{};
                    f.gaussian = gi;
                    f.falloff = falloff(s, x, y, f.d);
                    const double raw = s.opacity * f.falloff;
                    f.clamped = raw > settings.max_alpha;
                    f.alpha = f.clamped ? settings.max_alpha : raw;
                    if (f.alpha < settings.min_alpha) {
                        continue;
                    }
                    f.transmittance = t;
                    depth_num += f.alpha * t * s.depth;
                    accum += f.alpha * t;
                    frags.push_back(f);
                    t *= 1.0 - f.alpha;
                    if (t < settings.min_transmittance) {
                        break;
                    }
                }
                const double denom = std::max(accum, settings.depth_alpha_floor);
                const double g_num = g_depth / denom;
                const double g_accum =
                    accum > settings.depth_alpha_floor ? -g_depth * depth_num / (accum * accum)
                                                       : 0.0;
                // Running sum of everything behind the current fragment.
                double behind = (g_color.dot(background) - g_accum) * t;
                for (auto it = frags.rbegin(); it != frags.rend(); ++it) {
                    const ProjectedGaussian& pg = ctx.projected[it->gaussian];
                    const Splat2D& s = pg.splat;
                    SplatGrad& sg = acc[it->gaussian];
                    const double w = it->alpha * it->transmittance;
                    const double e = g_color.dot(s.color) + g_num * s.depth;
                    sg.color += w * g_color;
                    sg.depth += w * g_num;
                    const double g_alpha = e * it->transmittance - behind / (1.0 - it->alpha);
                    behind += e * w;
                    if (it->clamped) {
                        continue;
                    }
                    sg.opacity += g_alpha * it->falloff;
                    const double g_power = g_alpha * s.opacity * it->falloff;
                    sg.mean += g_power * (s.conic * it->d);
                    sg.conic += (-0.5 * g_power) * (it->d * it->d.transpose());
                }
            }
        }
    });

    for (std::size_t tid = 1; tid < partial.size(); ++tid) {
        for (std::size_t i = 0; i < n; ++i) {
            SplatGrad& a = partial[0][i];
            const SplatGrad& b = partial[tid][i];
            a.mean += b.mean;
            a.conic += b.conic;
            a.opacity += b.opacity;
            a.color += b.color;
            a.depth += b.depth;
        }
    }
    const std::vector<SplatGrad>& sgrad = partial[0];

    RenderGradients out;
    out.params = zeros_like(cloud);
    out.mean2d_norm.assign(n, 0.0);
    out.visible.assign(n, false);
    DeformedAttributes upstream{std::vector<Vec3>(n, Vec3::Zero()),
                                std::vector<Vec4>(n, Vec4::Zero()),
                                std::vector<Vec3>(n, Vec3::Zero())};

    const Mat3 w = cam.rotation();
    const Vec3 cam_center = cam.center();
    const double fx = cam.fx(), fy = cam.fy();
    const auto n_sh = static_cast<std::size_t>(cloud.sh_per_gaussian());

    for (std::size_t i = 0; i < n; ++i) {
        const ProjectedGaussian& pg = ctx.projected[i];
        if (!pg.visible) {
            continue;
        }
        out.visible[i] = true;
        const SplatGrad& g = sgrad[i];
        out.mean2d_norm[i] = g.mean.norm();
        Vec3 g_mu = Vec3::Zero();

        // Color (clamped at zero).
        Vec3 g_raw_color = g.color;
        for (int c = 0; c < 3; ++c) {
            if (!(pg.raw_color[c] > 0.0)) {
                g_raw_color[c] = 0.0;
            }
        }
        std::span<Vec3> g_coeffs(out.params.sh.data() + i * n_sh, n_sh);
        if (cloud.sh_degree == 0) {
            g_coeffs[0] += g_raw_color;
        } else {
            const std::span<const Vec3> coeffs(cloud.sh.data() + i * n_sh, n_sh);
            const Vec3 g_dir =
                sh_color_backward(cloud.sh_degree, coeffs, pg.view_dir, g_raw_color, g_coeffs);
            const double len = (ctx.deformed.positions[i] - cam_center).norm();
            if (len > 0.0) {
                g_mu += (g_dir - pg.view_dir * pg.view_dir.dot(g_dir)) / len;
            }
        }

        // Opacity logit.
        const double alpha = pg.splat.opacity;
        out.params.opacities[i] += g.opacity * alpha * (1.0 - alpha);

        // Conic -> 2D covariance -> view covariance and Jacobian.
        const Mat2 g_cov2 = -pg.splat.conic * g.conic * pg.splat.conic;
        const auto& j = pg.jacobian;
        const Mat3 g_view_cov = j.transpose() * g_cov2 * j;
        const Eigen::Matrix<double, 2, 3> g_j =
            g_cov2 * j * pg.view_cov.transpose() + g_cov2.transpose() * j * pg.view_cov;
        const Mat3 g_cov3 = w.transpose() * g_view_cov * w;

        // Camera-frame point from the Jacobian, the projected mean and the depth.
        const Vec3& pc = pg.camera_point;
        const double z = pc.z(), z2 = z * z, z3 = z2 * z;
        Vec3 g_pc = Vec3::Zero();
        g_pc.x() += g_j(0, 2) * (-fx / z2) + g.mean.x() * fx / z;
        g_pc.y() += g_j(1, 2) * (-fy / z2) + g.mean.y() * fy / z;
        g_pc.z() += g_j(0, 0) * (-fx / z2) + g_j(0, 2) * (2.0 * fx * pc.x() / z3) +
                    g_j(1, 1) * (-fy / z2) + g_j(1, 2) * (2.0 * fy * pc.y() / z3) -
                    g.mean.x() * fx * pc.x() / z2 - g.mean.y() * fy * pc.y() / z2 + g.depth;
        g_mu += w.transpose() * g_pc;

        // Sigma = A A^T with A = R diag(s).
        const Mat3 a = pg.rotation * pg.scale.asDiagonal();
        const Mat3 g_a = (g_cov3 + g_cov3.transpose()) * a;
        const Mat3 g_rot = g_a * pg.scale.asDiagonal();
        Vec3 g_scale;
        for (int k = 0; k < 3; ++k) {
            g_scale[k] = pg.rotation.col(k).dot(g_a.col(k));
        }
        upstream.scales[i] = g_scale.cwiseProduct(pg.scale);

        const Vec4 g_unit = rotation_backward(pg.unit_quat, g_rot);
        const double qn = ctx.deformed.rotations[i].norm();
        upstream.rotations[i] = (g_unit - pg.unit_quat * pg.unit_quat.dot(g_unit)) / qn;
        upstream.positions[i] = g_mu;
    }

    deform_backward(cloud, cam.time, upstream, out.params);
    return out;
}

} // namespace deformsplat
