#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "deformsplat/camera.hpp"
#include "deformsplat/core_model.hpp"
#include "deformsplat/deform.hpp"
#include "deformsplat/image.hpp"

namespace deformsplat {

struct RasterSettings {
    double near_plane = 0.01;
    double low_pass = 0.3;               // px^2 added to the projected covariance diagonal
    double max_alpha = 0.99;             // per-splat alpha clamp
    double min_alpha = 1.0 / 255.0;      // contributions below this are skipped
    double min_transmittance = 1e-4;     // stop once transmittance falls below this
    double extent_sigmas = 3.0;          // splat footprint radius; <= 0 covers the whole image
    double depth_alpha_floor = 1e-6;     // denominator floor for normalized depth
    int threads = 1;

    /// No skipping, no early termination and unbounded footprints: the rendered
    /// image is then a smooth function of every parameter (used by gradient checks).
    static RasterSettings exact();
};

/// A projected Gaussian.
struct Splat2D {
    Vec2 mean;
    Mat2 covariance;
    Mat2 conic; // inverse covariance
    double depth = 0.0;
    double opacity = 0.0;
    Vec3 color = Vec3::Zero();
    // Inclusive pixel bounds of the footprint, already clipped to the image.
    int x_min = 0, x_max = -1, y_min = 0, y_max = -1;
};

/// EWA projection of a world-space Gaussian. Returns nullopt when the center is
/// not in front of the near plane. Opacity/color are left for the caller.
std::optional<Splat2D> project_gaussian(const Vec3& mean, const Mat3& covariance,
                                        const CameraFrame& cam, const RasterSettings& settings = {});

struct RenderOutput {
    Image color;       // H x W x 3
    Image depth;       // H x W, alpha-normalized
    Image accum_alpha; // H x W
    Image weight_sum;  // H x W, sum of blend weights (diagnostic)
};

/// One fragment in front-to-back order.
struct Fragment {
    double alpha;
    Vec3 color;
    double depth;
};

/// Front-to-back compositing of a single pixel. `add` returns false once the
/// transmittance has dropped below the stopping threshold.
class PixelBlender {
public:
    explicit PixelBlender(const RasterSettings& settings) : settings_(settings) {}

    /// Alpha is clamped to max_alpha; fragments below min_alpha are ignored.
    bool add(double alpha, const Vec3& color, double depth);

    double transmittance() const { return transmittance_; }
    double weight_sum() const { return weight_sum_; }
    Vec3 color(const Vec3& background) const { return color_ + background * transmittance_; }
    double accum_alpha() const { return 1.0 - transmittance_; }
    double depth() const;

private:
    const RasterSettings& settings_;
    double transmittance_ = 1.0;
    double weight_sum_ = 0.0;
    Vec3 color_ = Vec3::Zero();
    double depth_numerator_ = 0.0;
};

struct ProjectedGaussian {
    bool visible = false;
    Splat2D splat;
    Vec3 camera_point = Vec3::Zero();
    Vec3 view_dir = Vec3::UnitZ();
    Vec3 raw_color = Vec3::Zero(); // before clamping
    Vec4 unit_quat = Vec4(1, 0, 0, 0);
    Mat3 rotation = Mat3::Identity();
    Vec3 scale = Vec3::Ones();
    Mat3 view_cov = Mat3::Identity(); // W Sigma W^T
    Eigen::Matrix<double, 2, 3> jacobian = Eigen::Matrix<double, 2, 3>::Zero();
};

/// Everything the backward pass needs from a forward pass.
struct ForwardContext {
    DeformedAttributes deformed;
    std::vector<ProjectedGaussian> projected;
    std::vector<std::uint32_t> order; // visible Gaussians sorted front to back
    // Per-pixel lists of Gaussian indices in depth order (CSR layout).
    std::vector<std::uint32_t> pixel_offsets;
    std::vector<std::uint32_t> pixel_entries;
};

/// Deforms `cloud` to cam.time, projects, sorts and composites color and depth.
/// Throws NumericalError naming the first Gaussian with non-finite parameters.
RenderOutput render(const GaussianCloud& cloud, const CameraFrame& cam, const Vec3& background,
                    const RasterSettings& settings = {}, ForwardContext* context = nullptr);

struct RenderGradients {
    GaussianCloud params;           // d loss / d every learnable parameter
    std::vector<double> mean2d_norm; // |d loss / d projected mean| per Gaussian (densification)
    std::vector<bool> visible;
};

/// Backpropagates image-space gradients to every learnable parameter.
/// `context` may be a context filled by a matching forward call; otherwise the
/// forward state is recomputed.
RenderGradients render_backward(const GaussianCloud& cloud, const CameraFrame& cam,
                                const Vec3& background, const Image& grad_color,
                                const Image& grad_depth, const RasterSettings& settings = {},
                                const ForwardContext* context = nullptr);

} // namespace deformsplat
