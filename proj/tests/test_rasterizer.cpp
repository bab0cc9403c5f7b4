#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "deformsplat/errors.hpp"
#include "deformsplat/rasterizer.hpp"
#include "test_util.hpp"

using namespace deformsplat;

namespace {

GaussianCloud single_gaussian(const Vec3& pos, double scale, double opacity_logit, const Vec3& color) {
    GaussianCloud c;
    c.positions = {pos};
    c.rotations = {Vec4(1, 0, 0, 0)};
    c.scales = {Vec3::Constant(std::log(scale))};
    c.opacities = {opacity_logit};
    c.sh = {color};
    c.fdm = init_fdm(1, 4);
    return c;
}

} // namespace

TEST(ProjectGaussian, OnAxisLandsOnPrincipalPoint) {
    const CameraFrame cam = CameraFrame::from_pinhole(50, 60, 12.5, 9.5, 32, 24);
    const auto s = project_gaussian(Vec3(0, 0, 4), 0.01 * Mat3::Identity(), cam);
    ASSERT_TRUE(s.has_value());
    EXPECT_NEAR(s->mean.x(), 12.5, 1e-12);
    EXPECT_NEAR(s->mean.y(), 9.5, 1e-12);
    EXPECT_DOUBLE_EQ(s->depth, 4.0);
}

TEST(ProjectGaussian, PinholeAndEwaOracle) {
    const double f = 40, x = 0.7, z = 2.5;
    const CameraFrame cam = CameraFrame::from_pinhole(f, f, 16, 16, 32, 32);
    const Mat3 cov = build_covariance(Vec4(0.9, 0.1, -0.2, 0.3), Vec3(0.1, 0.2, 0.05));
    const auto s = project_gaussian(Vec3(x, 0, z), cov, cam);
    ASSERT_TRUE(s.has_value());
    EXPECT_NEAR(s->mean.x(), 16 + f * x / z, 1e-12);
    EXPECT_NEAR(s->mean.y(), 16, 1e-12);
    // Jacobian of (f x / z, f y / z) at (x, 0, z) written out by hand.
    Eigen::Matrix<double, 2, 3> j;
    j << f / z, 0, -f * x / (z * z), 0, f / z, 0;
    const Mat2 expected = j * cov * j.transpose() + 0.3 * Mat2::Identity();
    EXPECT_TRUE(s->covariance.isApprox(expected, 1e-12));
    EXPECT_TRUE((s->conic * s->covariance).isApprox(Mat2::Identity(), 1e-12));
}

TEST(ProjectGaussian, ExtrinsicRotationEntersCovariance) {
    const double f = 40;
    Mat4 w2c = Mat4::Identity();
    const Mat3 r = testutil::axis_angle_matrix(Vec3(0.2, 1.0, 0.1), 0.4);
    w2c.topLeftCorner<3, 3>() = r;
    w2c.topRightCorner<3, 1>() = Vec3(0.1, -0.2, 3.0);
    const CameraFrame cam = CameraFrame::from_pinhole(f, f, 16, 16, 32, 32, w2c);
    const Mat3 cov = build_covariance(Vec4(0.9, 0.1, -0.2, 0.3), Vec3(0.1, 0.2, 0.05));
    const Vec3 mu(0.2, 0.1, 0.3);
    const auto s = project_gaussian(mu, cov, cam);
    ASSERT_TRUE(s.has_value());
    const Vec3 p = r * mu + Vec3(0.1, -0.2, 3.0);
    Eigen::Matrix<double, 2, 3> j;
    j << f / p.z(), 0, -f * p.x() / (p.z() * p.z()), 0, f / p.z(), -f * p.y() / (p.z() * p.z());
    const Mat2 expected = j * r * cov * r.transpose() * j.transpose() + 0.3 * Mat2::Identity();
    EXPECT_TRUE(s->covariance.isApprox(expected, 1e-12));
    EXPECT_NEAR(s->mean.x(), 16 + f * p.x() / p.z(), 1e-12);
}

TEST(ProjectGaussian, CullsBehindNearPlane) {
    const CameraFrame cam = testutil::square_camera(16);
    EXPECT_FALSE(project_gaussian(Vec3(0, 0, -1), Mat3::Identity(), cam).has_value());
    EXPECT_FALSE(project_gaussian(Vec3(0, 0, 0.005), Mat3::Identity(), cam).has_value());
    EXPECT_TRUE(project_gaussian(Vec3(0, 0, 0.02), Mat3::Identity(), cam).has_value());
}

TEST(PixelBlender, TwoSplatHandCalculation) {
    RasterSettings s;
    s.max_alpha = 1.0; // the back splat is fully opaque in this case
    PixelBlender b(s);
    const Vec3 red(1, 0, 0), blue(0, 0, 1);
    EXPECT_TRUE(b.add(0.6, red, 1.0));
    EXPECT_FALSE(b.add(1.0, blue, 2.0));
    EXPECT_TRUE(b.color(Vec3::Zero()).isApprox(0.6 * red + 0.4 * blue, 1e-15));
    EXPECT_EQ(b.transmittance(), 0.0);
    EXPECT_NEAR(b.depth(), 0.6 * 1.0 + 0.4 * 2.0, 1e-15);
}

TEST(PixelBlender, ClampSkipAndTermination) {
    RasterSettings s;
    PixelBlender b(s);
    b.add(1.0, Vec3::Ones(), 1.0);
    EXPECT_NEAR(b.transmittance(), 0.01, 1e-15);
    b.add(0.5 / 255.0, Vec3::Ones(), 1.0);
    EXPECT_NEAR(b.transmittance(), 0.01, 1e-15);
    EXPECT_TRUE(b.add(0.9, Vec3::Ones(), 1.0));   // T = 1e-3
    EXPECT_FALSE(b.add(0.95, Vec3::Ones(), 1.0)); // T = 5e-5 < 1e-4
    EXPECT_NEAR(b.weight_sum() + b.transmittance(), 1.0, 1e-15);
}

TEST(Render, EmptyCloudShowsBackground) {
    GaussianCloud c;
    c.fdm = init_fdm(0, 17);
    const Vec3 bg(0.2, 0.5, 0.7);
    const RenderOutput out = render(c, testutil::square_camera(8), bg);
    for (int y = 0; y < 8; ++y) {
        for (int x = 0; x < 8; ++x) {
            for (int ch = 0; ch < 3; ++ch) {
                EXPECT_EQ(out.color.at(x, y, ch), bg[ch]);
            }
            EXPECT_EQ(out.accum_alpha.at(x, y), 0.0);
            EXPECT_EQ(out.depth.at(x, y), 0.0);
        }
    }
}

TEST(Render, SingleOpaqueGaussianAtItsCenter) {
    const CameraFrame cam = testutil::square_camera(17);
    const Vec3 color(0.8, 0.3, 0.1);
    const double z = 3.0;
    const RenderOutput out = render(single_gaussian(Vec3(0, 0, z), 0.3, 30.0, color), cam, Vec3::Zero());
    // Center pixel (8, 8) is the principal point; alpha' = 0.99 there.
    for (int ch = 0; ch < 3; ++ch) {
        EXPECT_NEAR(out.color.at(8, 8, ch), color[ch], 0.01 * color[ch] + 1e-12);
    }
    EXPECT_NEAR(out.depth.at(8, 8), z, 0.01 * z);
    EXPECT_NEAR(out.accum_alpha.at(8, 8), 0.99, 1e-12);
}

TEST(Render, ColorDerivativeIsBlendWeight) {
    const CameraFrame cam = testutil::square_camera(16);
    GaussianCloud c = single_gaussian(Vec3(0.1, -0.05, 3.0), 0.3, 0.4, Vec3(0.5, 0.4, 0.3));
    Image gc(16, 16, 3), gd(16, 16, 1);
    gc.at(5, 9, 1) = 1.0;
    const RenderGradients g = render_backward(c, cam, Vec3::Zero(), gc, gd);
    ForwardContext ctx;
    render(c, cam, Vec3::Zero(), {}, &ctx);
    const Splat2D& s = ctx.projected[0].splat;
    const Vec2 d(5 - s.mean.x(), 9 - s.mean.y());
    const double alpha = sigmoid(0.4) * std::exp(-0.5 * d.dot(s.conic * d));
    EXPECT_NEAR(g.params.sh[0].y(), alpha, 1e-12);
    EXPECT_EQ(g.params.sh[0].x(), 0.0);
}

TEST(Render, DepthOrderingPicksNearerOpaqueSplat) {
    const CameraFrame cam = testutil::square_camera(16);
    GaussianCloud c = single_gaussian(Vec3(0, 0, 5.0), 0.5, 30.0, Vec3(0, 0, 1));
    c.positions.push_back(Vec3(0, 0, 2.0));
    c.rotations.push_back(Vec4(1, 0, 0, 0));
    c.scales.push_back(Vec3::Constant(std::log(0.3)));
    c.opacities.push_back(30.0);
    c.sh.push_back(Vec3(1, 0, 0));
    c.fdm = init_fdm(2, 4);
    ForwardContext ctx;
    const RenderOutput out = render(c, cam, Vec3::Zero(), {}, &ctx);
    // Two-fragment compositing oracle: the far splat leaks through 1 - alpha_near.
    auto alpha_at = [&](std::size_t g) {
        const Splat2D& s = ctx.projected[g].splat;
        const Vec2 d(7 - s.mean.x(), 7 - s.mean.y());
        return std::min(0.99, sigmoid(30.0) * std::exp(-0.5 * d.dot(s.conic * d)));
    };
    const double a_near = alpha_at(1), a_far = alpha_at(0);
    const double w_near = a_near, w_far = (1 - a_near) * a_far;
    EXPECT_NEAR(out.depth.at(7, 7), (2.0 * w_near + 5.0 * w_far) / (w_near + w_far), 1e-9);
    EXPECT_LT(out.depth.at(7, 7), 2.2);
    EXPECT_GT(out.color.at(7, 7, 0), 0.95);
}

TEST(Render, ConservationAndMonotoneCoverage) {
    std::mt19937_64 rng(21);
    const CameraFrame cam = testutil::square_camera(24, 0.4);
    GaussianCloud all = testutil::random_cloud(rng, 12, 4, 24, true);
    Image prev(24, 24, 1, 0.0);
    for (std::size_t n = 1; n <= all.size(); ++n) {
        GaussianCloud c = all;
        std::vector<bool> keep(all.size(), false);
        for (std::size_t i = 0; i < n; ++i) keep[i] = true;
        c.retain(keep);
        const RenderOutput out = render(c, cam, Vec3::Zero(), RasterSettings::exact());
        for (std::size_t p = 0; p < prev.data.size(); ++p) {
            EXPECT_NEAR(out.weight_sum.data[p] + (1.0 - out.accum_alpha.data[p]), 1.0, 1e-12);
            EXPECT_GE(out.accum_alpha.data[p], prev.data[p] - 1e-15);
            EXPECT_GE(out.accum_alpha.data[p], 0.0);
            EXPECT_LE(out.accum_alpha.data[p], 1.0);
        }
        prev = out.accum_alpha;
    }
}

TEST(Render, DeterministicAndThreadCountIndependent) {
    std::mt19937_64 rng(22);
    const CameraFrame cam = testutil::square_camera(32, 0.6);
    const GaussianCloud c = testutil::random_cloud(rng, 40, 5, 32, true);
    const RenderOutput a = render(c, cam, Vec3::Zero());
    const RenderOutput b = render(c, cam, Vec3::Zero());
    RasterSettings mt;
    mt.threads = 4;
    const RenderOutput m = render(c, cam, Vec3::Zero(), mt);
    EXPECT_EQ(a.color.data, b.color.data);
    EXPECT_EQ(a.depth.data, b.depth.data);
    EXPECT_EQ(a.color.data, m.color.data);
    EXPECT_EQ(a.depth.data, m.depth.data);
}

TEST(Render, NonFiniteParameterNamesGaussian) {
    std::mt19937_64 rng(23);
    GaussianCloud c = testutil::random_cloud(rng, 5, 3, 16, false);
    c.scales[3].x() = std::nan("");
    try {
        render(c, testutil::square_camera(16), Vec3::Zero());
        FAIL() << "expected NumericalError";
    } catch (const NumericalError& e) {
        EXPECT_NE(std::string(e.what()).find("Gaussian 3"), std::string::npos);
    }
}

TEST(RenderBackward, ZeroUpstreamGivesZeroGradients) {
    std::mt19937_64 rng(24);
    const GaussianCloud c = testutil::random_cloud(rng, 5, 4, 16, true);
    const RenderGradients g =
        render_backward(c, testutil::square_camera(16, 0.3), Vec3::Zero(), Image(16, 16, 3), Image(16, 16, 1));
    for (int gi = 0; gi < kParamGroupCount; ++gi) {
        for (double v : group_values(g.params, static_cast<ParamGroup>(gi))) {
            EXPECT_EQ(v, 0.0);
        }
    }
}

TEST(RenderBackward, RejectsMismatchedGradientImages) {
    std::mt19937_64 rng(25);
    const GaussianCloud c = testutil::random_cloud(rng, 2, 4, 16, false);
    EXPECT_THROW(render_backward(c, testutil::square_camera(16), Vec3::Zero(), Image(15, 16, 3),
                                 Image(16, 16, 1)),
                 InvalidParameter);
    EXPECT_THROW(render_backward(c, testutil::square_camera(16), Vec3::Zero(), Image(16, 16, 3),
                                 Image(16, 16, 3)),
                 InvalidParameter);
}

TEST(RenderBackward, FiniteDifferencesFiveGaussians) {
    std::mt19937_64 rng(26);
    for (int b : {1, 4}) {
        const GaussianCloud c = testutil::random_cloud(rng, 5, b, 16, true);
        const CameraFrame cam = testutil::square_camera(16, 0.35);
        const auto up = testutil::random_upstream(rng, 16, 16);
        const auto r = testutil::check_gradients(c, cam, up, RasterSettings::exact());
        EXPECT_EQ(r.failed, 0) << "worst: " << r.worst;
        EXPECT_GT(r.checked, 0);
    }
}

TEST(RenderBackward, FiniteDifferencesWithShAndRotatedCamera) {
    std::mt19937_64 rng(27);
    GaussianCloud c = testutil::random_cloud(rng, 4, 3, 16, true, 2);
    CameraFrame cam = testutil::square_camera(16, 0.6);
    Mat4 w2c = Mat4::Identity();
    w2c.topLeftCorner<3, 3>() = testutil::axis_angle_matrix(Vec3(0.3, 1.0, 0.2), 0.1);
    w2c.topRightCorner<3, 1>() = Vec3(0.05, -0.1, 0.2);
    cam.world_to_camera = w2c;
    const auto up = testutil::random_upstream(rng, 16, 16);
    const auto r = testutil::check_gradients(c, cam, up, RasterSettings::exact());
    EXPECT_EQ(r.failed, 0) << "worst: " << r.worst;
}

TEST(RenderBackward, ThreadedGradientsAgree) {
    std::mt19937_64 rng(28);
    const GaussianCloud c = testutil::random_cloud(rng, 30, 4, 32, true);
    const CameraFrame cam = testutil::square_camera(32, 0.2);
    const auto up = testutil::random_upstream(rng, 32, 32);
    RasterSettings mt;
    mt.threads = 3;
    const RenderGradients a = render_backward(c, cam, Vec3::Zero(), up.color, up.depth);
    const RenderGradients m = render_backward(c, cam, Vec3::Zero(), up.color, up.depth, mt);
    for (int gi = 0; gi < kParamGroupCount; ++gi) {
        const auto ga = group_values(a.params, static_cast<ParamGroup>(gi));
        const auto gm = group_values(m.params, static_cast<ParamGroup>(gi));
        for (std::size_t k = 0; k < ga.size(); ++k) {
            EXPECT_NEAR(ga[k], gm[k], 1e-9 * (1.0 + std::abs(ga[k])));
        }
    }
}
