#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "deformsplat/errors.hpp"
#include "deformsplat/synthetic.hpp"
#include "deformsplat/training.hpp"
#include "test_util.hpp"

using namespace deformsplat;

namespace {

Image constant(int w, int h, int c, double v) { return Image(w, h, c, v); }

// Textbook Adam on a scalar, written independently of adam_update.
double reference_adam_quadratic(double x, double lr, int steps) {
    double m = 0, v = 0;
    for (int t = 1; t <= steps; ++t) {
        const double g = 2 * x;
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        const double mh = m / (1 - std::pow(0.9, t));
        const double vh = v / (1 - std::pow(0.999, t));
        x -= lr * mh / (std::sqrt(vh) + 1e-15);
    }
    return x;
}

} // namespace

TEST(ColorLoss, Examples) {
    const Image a = constant(4, 4, 3, 0.3);
    const Image ones = constant(4, 4, 1, 1.0);
    EXPECT_EQ(color_loss(a, a, ones), 0.0);
    EXPECT_NEAR(color_loss(constant(4, 4, 3, 0.5), a, ones), 0.2, 1e-15);
    Image half = ones;
    Image b = a;
    for (int y = 0; y < 4; ++y) {
        for (int x = 0; x < 2; ++x) {
            half.at(x, y) = 0.0;
            for (int c = 0; c < 3; ++c) b.at(x, y, c) += 0.2;
        }
    }
    EXPECT_EQ(color_loss(b, a, half), 0.0);
    EXPECT_EQ(color_loss(b, a, constant(4, 4, 1, 0.0)), 0.0);
    EXPECT_THROW(color_loss(constant(3, 4, 3, 0), a, ones), InvalidParameter);
}

TEST(DepthLoss, Examples) {
    const Image ones = constant(3, 3, 1, 1.0);
    const Image d = constant(3, 3, 1, 2.0);
    EXPECT_EQ(depth_loss(d, d, ones), 0.0);
    Image single = constant(3, 3, 1, 0.0);
    single.at(1, 1) = 1.0;
    EXPECT_NEAR(depth_loss(d, constant(3, 3, 1, 1.0), single), 0.5, 1e-15);
    EXPECT_EQ(depth_loss(d, constant(3, 3, 1, 1.0), constant(3, 3, 1, 0.0)), 0.0);
    // Zero target depth and near-zero rendered depth are excluded.
    Image t = constant(3, 3, 1, 1.0);
    t.at(0, 0) = 0.0;
    Image r = constant(3, 3, 1, 1.0);
    r.at(2, 2) = 1e-6;
    EXPECT_EQ(depth_loss(r, t, ones), 0.0);
    EXPECT_THROW(depth_loss(d, constant(3, 2, 1, 1.0), ones), InvalidParameter);
}

TEST(Losses, InvariantToMaskedPixelsAndGradientsMatch) {
    std::mt19937_64 rng(41);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    Image rc(8, 8, 3), tc(8, 8, 3), rd(8, 8, 1), td(8, 8, 1), mask(8, 8, 1);
    for (auto& v : rc.data) v = u01(rng);
    for (auto& v : tc.data) v = u01(rng);
    for (auto& v : rd.data) v = 1 + u01(rng);
    for (auto& v : td.data) v = 1 + u01(rng);
    for (auto& v : mask.data) v = u01(rng) < 0.3 ? 0.0 : 1.0;
    const double lc = color_loss(rc, tc, mask);
    const double ld = depth_loss(rd, td, mask);
    Image rc2 = rc, rd2 = rd;
    for (int y = 0; y < 8; ++y) {
        for (int x = 0; x < 8; ++x) {
            if (mask.at(x, y) == 0.0) {
                rc2.at(x, y, 1) += 5.0;
                rd2.at(x, y) *= 3.0;
            }
        }
    }
    EXPECT_EQ(color_loss(rc2, tc, mask), lc);
    EXPECT_EQ(depth_loss(rd2, td, mask), ld);

    Image gc, gd;
    color_loss(rc, tc, mask, &gc);
    depth_loss(rd, td, mask, &gd);
    const double h = 1e-7;
    for (std::size_t k = 0; k < rc.data.size(); k += 5) {
        Image p = rc, m = rc;
        p.data[k] += h;
        m.data[k] -= h;
        EXPECT_NEAR(gc.data[k], (color_loss(p, tc, mask) - color_loss(m, tc, mask)) / (2 * h), 1e-6);
    }
    for (std::size_t k = 0; k < rd.data.size(); k += 3) {
        Image p = rd, m = rd;
        p.data[k] += h;
        m.data[k] -= h;
        EXPECT_NEAR(gd.data[k], (depth_loss(p, td, mask) - depth_loss(m, td, mask)) / (2 * h), 1e-6);
    }
}

TEST(Adam, ZeroGradientKeepsParameters) {
    std::vector<double> p = {1.0, -2.0}, g = {0.0, 0.0}, m(2, 0.0), v(2, 0.0);
    for (long s = 1; s <= 10; ++s) adam_update(p, g, m, v, s, 0.1);
    EXPECT_EQ(p, (std::vector<double>{1.0, -2.0}));
}

TEST(Adam, FirstStepMovesByLearningRate) {
    std::vector<double> p = {0.5}, g = {1.0}, m(1, 0.0), v(1, 0.0);
    adam_update(p, g, m, v, 1, 0.01);
    EXPECT_NEAR(p[0], 0.49, 1e-12);
}

TEST(Adam, QuadraticBowlMatchesReferenceRecurrence) {
    std::vector<double> p = {1.0}, g(1), m(1, 0.0), v(1, 0.0);
    for (long s = 1; s <= 200; ++s) {
        g[0] = 2 * p[0];
        adam_update(p, g, m, v, s, 0.1);
    }
    EXPECT_NEAR(p[0], reference_adam_quadratic(1.0, 0.1, 200), 1e-15);
    EXPECT_LT(std::abs(p[0]), 1e-2);
}

TEST(Adam, NonFiniteGradientNamesGroup) {
    std::mt19937_64 rng(42);
    GaussianCloud c = testutil::random_cloud(rng, 3, 2, 16, false);
    CloudAdam adam(c);
    GaussianCloud g = zeros_like(c);
    g.fdm.centers[4] = std::nan("");
    std::array<double, kParamGroupCount> lr{};
    lr.fill(1e-3);
    try {
        adam.step(c, g, lr);
        FAIL() << "expected NumericalError";
    } catch (const NumericalError& e) {
        EXPECT_NE(std::string(e.what()).find("deform_center"), std::string::npos) << e.what();
    }
}

TEST(LearningRates, PositionScaledAndDecayed) {
    TrainConfig cfg;
    const auto first = learning_rates(cfg, 2.0, 0);
    const auto last = learning_rates(cfg, 2.0, cfg.iterations - 1);
    EXPECT_NEAR(first[0], cfg.lr_initial * 2.0, 1e-18);
    EXPECT_NEAR(last[0], cfg.lr_initial * 2.0 * 0.01, 1e-15);
    for (int g = 1; g < kParamGroupCount; ++g) {
        EXPECT_EQ(first[static_cast<std::size_t>(g)], last[static_cast<std::size_t>(g)]);
    }
    EXPECT_EQ(first[static_cast<int>(ParamGroup::DeformWeight)], cfg.lr_initial);
}

TEST(TrainConfig, DefaultsAndValidation) {
    const TrainConfig cfg;
    EXPECT_EQ(cfg.iterations, 3000);
    EXPECT_DOUBLE_EQ(cfg.lr_initial, 1.6e-3);
    EXPECT_EQ(cfg.basis_count, 17);
    EXPECT_EQ(cfg.densify_freeze_iters, 600);
    EXPECT_DOUBLE_EQ(cfg.opacity_prune_threshold, 0.005);
    EXPECT_EQ(cfg.color_weight, 1.0);
    EXPECT_EQ(cfg.depth_weight, 1.0);
    TrainConfig bad = cfg;
    bad.iterations = 100;
    EXPECT_THROW(bad.validate(), InvalidParameter);
    bad.densify_freeze_iters = 50;
    EXPECT_NO_THROW(bad.validate());
}

class DensifyTest : public ::testing::Test {
protected:
    void SetUp() override {
        std::mt19937_64 init(43);
        cloud = testutil::random_cloud(init, 4, 3, 16, true);
        for (auto& o : cloud.opacities) o = 0.0;
        adam = CloudAdam(cloud);
        stats.reset(cloud.size());
    }
    GaussianCloud cloud;
    CloudAdam adam;
    DensifyStats stats;
    TrainConfig cfg;
    std::mt19937_64 rng{7};
};

TEST_F(DensifyTest, FrozenBeforeFreezeIteration) {
    cloud.opacities[0] = logit(0.001);
    stats.grad_sum.assign(cloud.size(), 1.0);
    stats.count.assign(cloud.size(), 1);
    const GaussianCloud before = cloud;
    EXPECT_FALSE(densify_and_prune(cloud, adam, stats, 100, cfg, 1.0, rng));
    EXPECT_EQ(cloud.positions, before.positions);
}

TEST_F(DensifyTest, NoTriggersNoChange) {
    stats.grad_sum.assign(cloud.size(), 1e-6);
    stats.count.assign(cloud.size(), 1);
    const GaussianCloud before = cloud;
    EXPECT_FALSE(densify_and_prune(cloud, adam, stats, 600, cfg, 1.0, rng));
    EXPECT_EQ(cloud.positions, before.positions);
}

TEST_F(DensifyTest, StopsAfterHalfTheRunByDefault) {
    cloud.opacities[2] = logit(0.001);
    const GaussianCloud before = cloud;
    EXPECT_FALSE(densify_and_prune(cloud, adam, stats, 1600, cfg, 1.0, rng));
    EXPECT_FALSE(densify_and_prune(cloud, adam, stats, 3000, cfg, 1.0, rng));
    EXPECT_EQ(cloud.size(), before.size());
    cfg.densify_until_iter = 3000;
    EXPECT_TRUE(densify_and_prune(cloud, adam, stats, 3000, cfg, 1.0, rng));
    EXPECT_EQ(cloud.size(), before.size() - 1);
}

TEST_F(DensifyTest, PrunesTransparentGaussian) {
    cloud.opacities[2] = logit(0.001);
    const GaussianCloud before = cloud;
    EXPECT_TRUE(densify_and_prune(cloud, adam, stats, 600, cfg, 1.0, rng));
    ASSERT_EQ(cloud.size(), 3u);
    EXPECT_EQ(cloud.positions[2], before.positions[3]);
    cloud.check_consistent();
}

TEST_F(DensifyTest, CloneSmallAndSplitLarge) {
    const double extent = 1.0;
    cloud.scales[0] = Vec3::Constant(std::log(0.005)); // <= 1% of extent: clone
    cloud.scales[1] = Vec3::Constant(std::log(0.2));   // split
    stats.grad_sum = {1.0, 1.0, 0.0, 0.0};
    stats.count = {1, 1, 1, 1};
    const GaussianCloud before = cloud;
    EXPECT_TRUE(densify_and_prune(cloud, adam, stats, 700, cfg, extent, rng));
    // Kept: 0, 2, 3, clone of 0, two children of 1.
    ASSERT_EQ(cloud.size(), 6u);
    cloud.check_consistent();
    EXPECT_EQ(cloud.positions[0], before.positions[0]);
    const std::size_t stride = cloud.fdm.gaussian_stride();
    auto fdm_equal = [&](std::size_t child, std::size_t parent) {
        for (std::size_t k = 0; k < stride; ++k) {
            if (cloud.fdm.weights[child * stride + k] != before.fdm.weights[parent * stride + k] ||
                cloud.fdm.centers[child * stride + k] != before.fdm.centers[parent * stride + k]) {
                return false;
            }
        }
        return true;
    };
    EXPECT_EQ(cloud.scales[3], before.scales[0]);
    EXPECT_TRUE(fdm_equal(3, 0));
    for (std::size_t child : {4u, 5u}) {
        EXPECT_TRUE(cloud.scales[child].isApprox((before.scales[1].array() - std::log(1.6)).matrix()));
        EXPECT_TRUE(fdm_equal(child, 1));
        EXPECT_NE(cloud.positions[child], before.positions[1]);
    }
}

TEST(Train, ZeroIterationsReturnsInitialCloud) {
    std::mt19937_64 rng(44);
    const GaussianCloud c = testutil::random_cloud(rng, 3, 2, 16, true);
    RGBDFrame f;
    f.color = Image(16, 16, 3);
    f.depth = Image(16, 16, 1, 3.0);
    f.mask = Image(16, 16, 1, 1.0);
    const std::vector<RGBDFrame> frames = {f};
    const std::vector<CameraFrame> cams = {testutil::square_camera(16)};
    TrainConfig cfg;
    cfg.iterations = 0;
    cfg.densify_freeze_iters = 0;
    const TrainResult r = train(c, frames, cams, cfg);
    EXPECT_EQ(r.cloud.positions, c.positions);
    EXPECT_EQ(r.cloud.fdm.weights, c.fdm.weights);
    EXPECT_TRUE(r.history.empty());
    EXPECT_THROW(train(c, std::span<const RGBDFrame>{}, std::span<const CameraFrame>{}, cfg),
                 InvalidParameter);
}

TEST(Train, StaticSingleGaussianOverfits) {
    GaussianCloud truth;
    truth.positions = {Vec3(0.05, -0.05, 3.0)};
    truth.rotations = {Vec4(1, 0.2, 0, 0.1)};
    truth.scales = {Vec3(std::log(0.6), std::log(0.4), std::log(0.3))};
    truth.opacities = {logit(0.9)};
    truth.sh = {Vec3(0.8, 0.4, 0.3)};
    truth.fdm = init_fdm(1, 1);
    const CameraFrame cam = testutil::square_camera(24);
    const RenderOutput gt = render(truth, cam, Vec3::Zero());
    RGBDFrame f{gt.color, gt.depth, Image(24, 24, 1, 1.0), 0.0};

    GaussianCloud start = truth;
    start.positions[0] += Vec3(0.1, 0.05, 0.1);
    start.scales[0] = Vec3::Constant(std::log(0.45));
    start.rotations[0] = Vec4(1, 0, 0, 0);
    start.opacities[0] = logit(0.5);
    start.sh[0] = Vec3(0.5, 0.5, 0.5);
    start.fdm = init_fdm(1, 4);
    TrainConfig cfg;
    cfg.iterations = 500;
    cfg.densify_freeze_iters = 500;
    cfg.densify_interval = 1000;
    cfg.lr_multipliers.position = 10.0; // extent of a single point is 0
    const std::vector<RGBDFrame> frames = {f};
    const std::vector<CameraFrame> cams = {cam};
    const TrainResult r = train(start, frames, cams, cfg);
    EXPECT_LT(r.history.back().loss.color, 0.01);
    EXPECT_EQ(r.cloud.size(), 1u);
}

TEST(Train, SameSeedIsBitReproducible) {
    SyntheticSpec spec;
    spec.gaussians = 60;
    spec.frames = 10;
    spec.width = spec.height = 20;
    const SyntheticScene scene = generate_synthetic(spec, 3);
    TrainConfig cfg;
    cfg.iterations = 60;
    cfg.densify_freeze_iters = 20;
    cfg.densify_interval = 20;
    cfg.seed = 9;
    const TrainResult a = train_scene(scene.frames, scene.cams, cfg);
    const TrainResult b = train_scene(scene.frames, scene.cams, cfg);
    ASSERT_EQ(a.history.size(), b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i) {
        EXPECT_EQ(a.history[i].loss.total, b.history[i].loss.total);
        EXPECT_EQ(a.history[i].gaussians, b.history[i].gaussians);
    }
    for (int gi = 0; gi < kParamGroupCount; ++gi) {
        const auto ga = group_values(a.cloud, static_cast<ParamGroup>(gi));
        const auto gb = group_values(b.cloud, static_cast<ParamGroup>(gi));
        ASSERT_EQ(ga.size(), gb.size());
        EXPECT_TRUE(std::equal(ga.begin(), ga.end(), gb.begin()));
    }
    EXPECT_TRUE(a.rng == b.rng);
}

TEST(Train, PointCountConstantBeforeFreeze) {
    SyntheticSpec spec;
    spec.gaussians = 60;
    spec.frames = 8;
    spec.width = spec.height = 16;
    const SyntheticScene scene = generate_synthetic(spec, 4);
    TrainConfig cfg;
    cfg.iterations = 40;
    cfg.densify_freeze_iters = 40;
    std::size_t first = 0;
    bool constant = true;
    train_scene(scene.frames, scene.cams, cfg,
                [&](const IterationRecord& r, const GaussianCloud&, const std::mt19937_64&) {
                    if (r.iter == 1) first = r.gaussians;
                    if (r.iter < cfg.densify_freeze_iters && r.gaussians != first) constant = false;
                });
    EXPECT_TRUE(constant);
}
