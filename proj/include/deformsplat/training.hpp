#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "deformsplat/camera.hpp"
#include "deformsplat/core_model.hpp"
#include "deformsplat/image.hpp"
#include "deformsplat/initialization.hpp"
#include "deformsplat/rasterizer.hpp"

namespace deformsplat {

enum class ParamGroup : int {
    Position = 0,
    Rotation,
    Scale,
    Opacity,
    Color,
    DeformWeight,
    DeformCenter,
    DeformWidth,
};
inline constexpr int kParamGroupCount = 8;

std::string_view group_name(ParamGroup g);

/// Flat view over every scalar of one parameter group.
std::span<double> group_values(GaussianCloud& cloud, ParamGroup g);
std::span<const double> group_values(const GaussianCloud& cloud, ParamGroup g);

/// Learning rate per group expressed as a multiple of TrainConfig::lr_initial.
/// The position rate is additionally multiplied by the scene extent and decays
/// exponentially to `position_final_ratio` of its initial value.
struct LrMultipliers {
    double position = 1.0;
    double rotation = 0.625;
    double scale = 3.125;
    double opacity = 31.25;
    double color = 1.5625;
    double deform_weight = 1.0;
    double deform_center = 0.5;
    double deform_width = 0.5;
};

struct TrainConfig {
    int iterations = 3000;
    double lr_initial = 1.6e-3;
    LrMultipliers lr_multipliers;
    double position_final_ratio = 0.01;
    int densify_freeze_iters = 600;
    int densify_interval = 100;
    int densify_until_iter = -1; // < 0: half of the iterations
    double grad_densify_threshold = 2e-4; // in half-image-normalized screen units
    double opacity_prune_threshold = 0.005;
    double percent_dense = 0.01;
    std::size_t max_gaussians = 50000;
    std::uint64_t seed = 0;
    int basis_count = kDefaultBasisCount;
    BasisKind basis_kind = BasisKind::LearnableGaussian;
    int sh_degree = 0;
    double tau = kDefaultMotionThreshold;
    bool motion_aware_fusion = true;
    double color_weight = 1.0;
    double depth_weight = 1.0;
    Vec3 background = Vec3::Zero();
    int threads = 1;

    /// Throws InvalidParameter unless iterations > 0 and the freeze fits in the run.
    void validate() const;
};

struct LossReport {
    double color = 0.0;
    double depth = 0.0;
    double total = 0.0;
    std::size_t valid_pixels = 0;
};

inline constexpr double kInverseDepthEpsilon = 1e-4;

/// Mean absolute error over mask = 1 pixels and all channels (0 with no valid
/// pixels). Writes d loss / d rendered into `grad` when given.
double color_loss(const Image& rendered, const Image& target, const Image& mask,
                  Image* grad = nullptr);

/// Mean |1 / rendered - 1 / target| over pixels with mask = 1, target > 0 and
/// rendered > kInverseDepthEpsilon.
double depth_loss(const Image& rendered, const Image& target, const Image& mask,
                  Image* grad = nullptr);

struct AdamHyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-15;
};

/// One bias-corrected Adam update in place; `step` counts from 1.
void adam_update(std::span<double> params, std::span<const double> grads, std::span<double> m,
                 std::span<double> v, long step, double lr, const AdamHyper& hyper = {});

/// Adam state for a whole cloud, kept aligned with the cloud through densification.
class CloudAdam {
public:
    CloudAdam() = default;
    explicit CloudAdam(const GaussianCloud& cloud) : m_(zeros_like(cloud)), v_(zeros_like(cloud)) {}

    /// Throws NumericalError naming the group if any gradient is non-finite.
    void step(GaussianCloud& params, const GaussianCloud& grads,
              const std::array<double, kParamGroupCount>& lr);

    long steps() const { return step_; }
    /// Appends zeroed state for a copy of `index` / keeps flagged entries.
    void append_zero(std::size_t index);
    void retain(const std::vector<bool>& keep);

private:
    GaussianCloud m_;
    GaussianCloud v_;
    long step_ = 0;
    AdamHyper hyper_;
};

/// Running screen-space gradient statistics used by densification.
struct DensifyStats {
    std::vector<double> grad_sum;
    std::vector<int> count;

    void reset(std::size_t n);
    void accumulate(const RenderGradients& g, int width, int height);
};

/// Clone/split/prune step. No-op before cfg.densify_freeze_iters and between
/// intervals. Returns true if the cloud changed.
bool densify_and_prune(GaussianCloud& cloud, CloudAdam& optimizer, DensifyStats& stats, int iter,
                       const TrainConfig& cfg, double scene_extent, std::mt19937_64& rng);

/// Radius of the point set around its centroid.
double scene_extent(std::span<const Vec3> points);

struct IterationRecord {
    int iter = 0;
    LossReport loss;
    std::size_t gaussians = 0;
};

struct TrainResult {
    GaussianCloud cloud;
    std::vector<IterationRecord> history;
    std::mt19937_64 rng;
};

/// Called after every iteration (iteration numbers start at 1).
using TrainCallback = std::function<void(const IterationRecord&, const GaussianCloud&,
                                         const std::mt19937_64&)>;

/// Per-group learning rates at iteration `iter` (0-based).
std::array<double, kParamGroupCount> learning_rates(const TrainConfig& cfg, double extent, int iter);

/// Optimizes `initial` against the given training frames.
TrainResult train(GaussianCloud initial, std::span<const RGBDFrame> frames,
                  std::span<const CameraFrame> cams, const TrainConfig& cfg,
                  const TrainCallback& callback = {});

/// Initializes from the training frames (with or without point fusion) and trains.
TrainResult train_scene(std::span<const RGBDFrame> frames, std::span<const CameraFrame> cams,
                        const TrainConfig& cfg, const TrainCallback& callback = {});

} // namespace deformsplat
