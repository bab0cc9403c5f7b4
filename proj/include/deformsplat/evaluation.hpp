#pragma once

#include <span>
#include <string>
#include <vector>

#include "deformsplat/camera.hpp"
#include "deformsplat/core_model.hpp"
#include "deformsplat/image.hpp"
#include "deformsplat/initialization.hpp"
#include "deformsplat/rasterizer.hpp"

namespace deformsplat {

inline constexpr double kPsnrCap = 100.0;

/// 10 log10(1 / MSE) over pixels with mask != 0 (all channels), peak 1.0,
/// capped at kPsnrCap. Throws InvalidParameter when no pixel is valid.
double psnr(const Image& rendered, const Image& target, const Image& mask);
double psnr(const Image& rendered, const Image& target);

/// Mean SSIM with an 11 x 11 Gaussian window (sigma 1.5), C1 = 0.01^2,
/// C2 = 0.03^2, evaluated per channel over the fully covered window positions
/// and averaged. Throws InvalidParameter for images smaller than the window.
double ssim(const Image& rendered, const Image& target);

struct FrameMetrics {
    std::size_t frame = 0;
    double time = 0.0;
    double psnr = 0.0;
    double ssim = 0.0;
};

struct MetricReport {
    std::vector<FrameMetrics> frames;
    double psnr_mean = 0.0;
    double ssim_mean = 0.0;
    double fps = 0.0;
    double train_time = 0.0;

    /// `key = value` lines.
    std::string to_key_value() const;
    /// frame,time,psnr,ssim
    std::string to_csv() const;
};

/// Renders each given frame and scores it against the ground truth. Masked-out
/// pixels are excluded from PSNR and zeroed in both images before SSIM.
MetricReport evaluate(const GaussianCloud& cloud, std::span<const RGBDFrame> frames,
                      std::span<const CameraFrame> cams, std::span<const std::size_t> indices,
                      const Vec3& background = Vec3::Zero(), const RasterSettings& settings = {});

struct BenchResult {
    double fps_mean = 0.0;
    double fps_stddev = 0.0;
    int repetitions = 0;
    int threads = 1;
};

/// Renders every camera `repetitions` times after one untimed warm-up pass.
BenchResult bench_render(const GaussianCloud& cloud, std::span<const CameraFrame> cams,
                         int repetitions, int threads = 1);

} // namespace deformsplat
