#include "deformsplat/evaluation.hpp"

#include <array>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "deformsplat/errors.hpp"

namespace deformsplat {

double psnr(const Image& rendered, const Image& target, const Image& mask) {
    if (!rendered.same_shape(target) || !rendered.same_size(mask) || mask.channels != 1) {
        throw InvalidParameter("psnr: image dimensions differ");
    }
    double sum = 0.0;
    std::size_t count = 0;
    for (int y = 0; y < rendered.height; ++y) {
        for (int x = 0; x < rendered.width; ++x) {
            if (mask.at(x, y) == 0.0) {
                continue;
            }
            for (int c = 0; c < rendered.channels; ++c) {
                const double r = rendered.at(x, y, c) - target.at(x, y, c);
                sum += r * r;
                ++count;
            }
        }
    }
    if (count == 0) {
        throw InvalidParameter("psnr: no valid pixels");
    }
    const double mse = sum / static_cast<double>(count);
    if (mse == 0.0) {
        return kPsnrCap;
    }
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double psnr(const Image& rendered, const Image& target) {
    return psnr(rendered, target, Image(rendered.width, rendered.height, 1, 1.0));
}

namespace {

constexpr int kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;
constexpr double kSsimC1 = 0.01 * 0.01;
constexpr double kSsimC2 = 0.03 * 0.03;

std::array<double, kSsimWindow> ssim_kernel() {
    std::array<double, kSsimWindow> k{};
    double sum = 0.0;
    for (int i = 0; i < kSsimWindow; ++i) {
        const double d = i - kSsimWindow / 2;
        k[static_cast<std::size_t>(i)] = std::exp(-(d * d) / (2.0 * kSsimSigma * kSsimSigma));
        sum += k[static_cast<std::size_t>(i)];
    }
    for (double& v : k) {
        v /= sum;
    }
    return k;
}

} // namespace

double ssim(const Image& rendered, const Image& target) {
    if (!rendered.same_shape(target)) {
        throw InvalidParameter("ssim: image dimensions differ");
    }
    if (rendered.width < kSsimWindow || rendered.height < kSsimWindow) {
        throw InvalidParameter("ssim: image smaller than the 11 x 11 window");
    }
    const auto kernel = ssim_kernel();
    const int out_w = rendered.width - kSsimWindow + 1;
    const int out_h = rendered.height - kSsimWindow + 1;
    double total = 0.0;
    for (int c = 0; c < rendered.channels; ++c) {
        for (int y = 0; y < out_h; ++y) {
            for (int x = 0; x < out_w; ++x) {
                double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
                for (int j = 0; j < kSsimWindow; ++j) {
                    for (int i = 0; i < kSsimWindow; ++i) {
                        const double w = kernel[static_cast<std::size_t>(i)] *
                                         kernel[static_cast<std::size_t>(j)];
                        const double a = rendered.at(x + i, y + j, c);
                        const double b = target.at(x + i, y + j, c);
                        mx += w * a;
                        my += w * b;
                        sxx += w * a * a;
                        syy += w * b * b;
                        sxy += w * a * b;
                    }
                }
                const double vx = sxx - mx * mx;
                const double vy = syy - my * my;
                const double cov = sxy - mx * my;
                total += ((2.0 * mx * my + kSsimC1) * (2.0 * cov + kSsimC2)) /
                         ((mx * mx + my * my + kSsimC1) * (vx + vy + kSsimC2));
            }
        }
    }
    return total / (static_cast<double>(out_w) * out_h * rendered.channels);
}

std::string MetricReport::to_key_value() const {
    std::ostringstream os;
    os << std::setprecision(10);
    os << "frames = " << frames.size() << "\n";
    os << "psnr_mean = " << psnr_mean << "\n";
    os << "ssim_mean = " << ssim_mean << "\n";
    os << "fps = " << fps << "\n";
    os << "train_time = " << train_time << "\n";
    return os.str();
}

std::string MetricReport::to_csv() const {
    std::ostringstream os;
    os << std::setprecision(10);
    os << "frame,time,psnr,ssim\n";
    for (const auto& f : frames) {
        os << f.frame << "," << f.time << "," << f.psnr << "," << f.ssim << "\n";
    }
    return os.str();
}

MetricReport evaluate(const GaussianCloud& cloud, std::span<const RGBDFrame> frames,
                      std::span<const CameraFrame> cams, std::span<const std::size_t> indices,
                      const Vec3& background, const RasterSettings& settings) {
    if (frames.size() != cams.size()) {
        throw InvalidParameter("evaluate: frame and camera counts differ");
    }
    MetricReport report;
    for (const std::size_t i : indices) {
        const RGBDFrame& f = frames[i];
        const RenderOutput out = render(cloud, cams[i], background, settings);
        FrameMetrics m;
        m.frame = i;
        m.time = cams[i].time;
        m.psnr = psnr(out.color, f.color, f.mask);
        Image a = out.color;
        Image b = f.color;
        for (int y = 0; y < a.height; ++y) {
            for (int x = 0; x < a.width; ++x) {
                if (f.mask.at(x, y) == 0.0) {
                    for (int c = 0; c < 3; ++c) {
                        a.at(x, y, c) = 0.0;
                        b.at(x, y, c) = 0.0;
                    }
                }
            }
        }
        m.ssim = ssim(a, b);
        report.frames.push_back(m);
        report.psnr_mean += m.psnr;
        report.ssim_mean += m.ssim;
    }
    if (!report.frames.empty()) {
        report.psnr_mean /= static_cast<double>(report.frames.size());
        report.ssim_mean /= static_cast<double>(report.frames.size());
    }
    return report;
}

BenchResult bench_render(const GaussianCloud& cloud, std::span<const CameraFrame> cams,
                         int repetitions, int threads) {
    if (repetitions < 1) {
        throw InvalidParameter("bench_render: repetitions must be >= 1");
    }
    if (cams.empty()) {
        throw InvalidParameter("bench_render: no cameras");
    }
    RasterSettings settings;
    settings.threads = threads;
    const Vec3 bg = Vec3::Zero();
    for (const auto& cam : cams) {
        (void)render(cloud, cam, bg, settings);
    }
    std::vector<double> fps;
    for (int r = 0; r < repetitions; ++r) {
        const auto start = std::chrono::steady_clock::now();
        for (const auto& cam : cams) {
            (void)render(cloud, cam, bg, settings);
        }
        const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - start;
        fps.push_back(static_cast<double>(cams.size()) / std::max(dt.count(), 1e-12));
    }
    BenchResult out;
    out.repetitions = repetitions;
    out.threads = threads;
    for (const double f : fps) {
        out.fps_mean += f;
    }
    out.fps_mean /= static_cast<double>(fps.size());
    for (const double f : fps) {
        out.fps_stddev += (f - out.fps_mean) * (f - out.fps_mean);
    }
    out.fps_stddev = std::sqrt(out.fps_stddev / static_cast<double>(fps.size()));
    return out;
}

} // namespace deformsplat
