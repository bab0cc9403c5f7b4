#include "deformsplat/initialization.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <unordered_set>

#include "deformsplat/errors.hpp"

namespace deformsplat {

void RGBDFrame::validate() const {
    if (color.channels != 3 || depth.channels != 1 || mask.channels != 1 ||
        !color.same_size(depth) || !color.same_size(mask)) {
        throw InvalidParameter("RGBDFrame: color, depth and mask must share H x W");
    }
    for (const double d : depth.data) {
        if (!(d >= 0.0) || !std::isfinite(d)) {
            throw InvalidParameter("RGBDFrame: depth must be finite and non-negative");
        }
    }
    for (const double m : mask.data) {
        if (m != 0.0 && m != 1.0) {
            throw InvalidParameter("RGBDFrame: mask must be binary");
        }
    }
}

std::size_t MotionMask::count() const {
    return static_cast<std::size_t>(std::count(flags.begin(), flags.end(), std::uint8_t{1}));
}

SeedPointCloud backproject(const RGBDFrame& frame, const CameraFrame& cam) {
    if (frame.width() != cam.width || frame.height() != cam.height) {
        throw InvalidParameter("backproject: frame and camera dimensions differ");
    }
    SeedPointCloud out;
    for (int v = 0; v < frame.height(); ++v) {
        for (int u = 0; u < frame.width(); ++u) {
            const double d = frame.depth.at(u, v);
            if (frame.mask.at(u, v) == 0.0 || !(d > 0.0)) {
                continue;
            }
            const Vec3 pc(d * (u - cam.cx()) / cam.fx(), d * (v - cam.cy()) / cam.fy(), d);
            out.points.push_back(cam.to_world(pc));
            out.colors.emplace_back(frame.color.at(u, v, 0), frame.color.at(u, v, 1),
                                    frame.color.at(u, v, 2));
        }
    }
    if (out.points.empty()) {
        std::cerr << "warning: backproject produced no points (all pixels masked or depthless)\n";
    }
    return out;
}

MotionMask motion_mask(std::span<const RGBDFrame> frames, double tau) {
    if (frames.empty()) {
        throw InvalidParameter("motion_mask: no frames");
    }
    if (!(tau > 0.0)) {
        throw InvalidParameter("motion_mask: tau must be positive");
    }
    const RGBDFrame& first = frames.front();
    for (const auto& f : frames) {
        if (!f.color.same_shape(first.color)) {
            throw InvalidParameter("motion_mask: frames differ in size");
        }
    }
    Image mean(first.width(), first.height(), 3);
    for (const auto& f : frames) {
        for (std::size_t k = 0; k < mean.data.size(); ++k) {
            mean.data[k] += f.color.data[k];
        }
    }
    const auto n = static_cast<double>(frames.size());
    for (double& v : mean.data) {
        v /= n;
    }

    MotionMask m;
    m.width = first.width();
    m.height = first.height();
    m.tau = tau;
    m.frame_count = static_cast<int>(frames.size());
    m.flags.assign(first.color.pixel_count(), 0);
    for (int y = 0; y < m.height; ++y) {
        for (int x = 0; x < m.width; ++x) {
            double diff = 0.0;
            for (int c = 0; c < 3; ++c) {
                diff = std::max(diff, std::abs(first.color.at(x, y, c) - mean.at(x, y, c)));
            }
            const bool occluded = first.mask.at(x, y) == 0.0;
            m.flags[static_cast<std::size_t>(y) * m.width + x] = (diff > tau || occluded) ? 1 : 0;
        }
    }
    return m;
}

std::vector<std::size_t> donor_frames(std::size_t frame_count, int max_donors) {
    std::vector<std::size_t> out;
    const std::size_t m = std::min(frame_count, static_cast<std::size_t>(std::max(max_donors, 0)));
    if (m == 0) {
        return out;
    }
    if (m == 1) {
        return {0};
    }
    for (std::size_t k = 0; k < m; ++k) {
        const double pos = static_cast<double>(k) * static_cast<double>(frame_count - 1) /
                           static_cast<double>(m - 1);
        out.push_back(static_cast<std::size_t>(std::lround(pos)));
    }
    return out;
}

namespace {

struct VoxelKey {
    std::int64_t x, y, z;
    bool operator==(const VoxelKey&) const = default;
};

struct VoxelHash {
    std::size_t operator()(const VoxelKey& k) const {
        std::size_t h = std::hash<std::int64_t>{}(k.x);
        h ^= std::hash<std::int64_t>{}(k.y) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
        h ^= std::hash<std::int64_t>{}(k.z) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
        return h;
    }
};

VoxelKey voxel_of(const Vec3& p, double voxel) {
    return {static_cast<std::int64_t>(std::floor(p.x() / voxel)),
            static_cast<std::int64_t>(std::floor(p.y() / voxel)),
            static_cast<std::int64_t>(std::floor(p.z() / voxel))};
}

} // namespace

SeedPointCloud fuse_points(const SeedPointCloud& canonical, std::span<const RGBDFrame> frames,
                           std::span<const CameraFrame> cams, const MotionMask& fusion_mask,
                           double voxel, int max_donors) {
    if (frames.size() != cams.size()) {
        throw InvalidParameter("fuse_points: frame and camera counts differ");
    }
    SeedPointCloud out = canonical;
    if (frames.empty() || fusion_mask.count() == 0) {
        return out;
    }
    const CameraFrame& ref = cams.front();
    if (fusion_mask.width != ref.width || fusion_mask.height != ref.height) {
        throw InvalidParameter("fuse_points: fusion mask does not match the first camera");
    }
    const bool dedupe = voxel > 0.0;
    std::unordered_set<VoxelKey, VoxelHash> occupied;
    if (dedupe) {
        for (const auto& p : canonical.points) {
            occupied.insert(voxel_of(p, voxel));
        }
    }
    for (const std::size_t i : donor_frames(frames.size(), max_donors)) {
        const SeedPointCloud donor = backproject(frames[i], cams[i]);
        for (std::size_t k = 0; k < donor.size(); ++k) {
            const auto uv = ref.project_camera_point(ref.to_camera(donor.points[k]));
            if (!uv) {
                continue;
            }
            const long px = std::lround(uv->x());
            const long py = std::lround(uv->y());
            if (px < 0 || py < 0 || px >= ref.width || py >= ref.height ||
                !fusion_mask.at(static_cast<int>(px), static_cast<int>(py))) {
                continue;
            }
            if (dedupe && !occupied.insert(voxel_of(donor.points[k], voxel)).second) {
                continue;
            }
            out.points.push_back(donor.points[k]);
            out.colors.push_back(donor.colors[k]);
        }
    }
    return out;
}

std::vector<double> mean_knn_distance(std::span<const Vec3> points, int k) {
    const std::size_t n = points.size();
    std::vector<double> out(n, 0.0);
    if (n < 2 || k < 1) {
        return out;
    }
    const auto kk = std::min<std::size_t>(static_cast<std::size_t>(k), n - 1);
    std::vector<double> best;
    for (std::size_t i = 0; i < n; ++i) {
        best.assign(kk, std::numeric_limits<double>::infinity());
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) {
                continue;
            }
            const double d2 = (points[i] - points[j]).squaredNorm();
            if (d2 < best.back()) {
                best.back() = d2;
                for (std::size_t m = kk - 1; m > 0 && best[m] < best[m - 1]; --m) {
                    std::swap(best[m], best[m - 1]);
                }
            }
        }
        double sum = 0.0;
        for (const double d2 : best) {
            sum += std::sqrt(d2);
        }
        out[i] = sum / static_cast<double>(kk);
    }
    return out;
}

double median_nn_spacing(std::span<const Vec3> points) {
    if (points.size() < 2) {
        return 0.0;
    }
    auto d = mean_knn_distance(points, 1);
    const auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
    std::nth_element(d.begin(), mid, d.end());
    return *mid;
}

GaussianCloud seed_to_gaussians(const SeedPointCloud& seed, const SeedOptions& options) {
    if (seed.points.empty()) {
        throw InvalidParameter("seed_to_gaussians: empty seed point cloud");
    }
    if (seed.colors.size() != seed.points.size()) {
        throw InvalidParameter("seed_to_gaussians: point and color counts differ");
    }
    if (options.sh_degree < 0 || options.sh_degree > kMaxShDegree) {
        throw InvalidParameter("seed_to_gaussians: SH degree must be in [0, 3]");
    }
    const std::size_t n = seed.size();
    Vec3 centroid = Vec3::Zero();
    for (const auto& p : seed.points) {
        centroid += p;
    }
    centroid /= static_cast<double>(n);
    double extent = 0.0;
    for (const auto& p : seed.points) {
        extent = std::max(extent, (p - centroid).norm());
    }
    const double lo = 1e-4;
    const double hi = std::max(lo, extent / 10.0);
    const auto knn = mean_knn_distance(seed.points, 3);

    GaussianCloud cloud;
    cloud.sh_degree = options.sh_degree;
    cloud.positions = seed.points;
    cloud.rotations.assign(n, Vec4(1.0, 0.0, 0.0, 0.0));
    cloud.opacities.assign(n, logit(options.initial_opacity));
    cloud.scales.reserve(n);
    const auto c = static_cast<std::size_t>(cloud.sh_per_gaussian());
    cloud.sh.assign(n * c, Vec3::Zero());
    for (std::size_t i = 0; i < n; ++i) {
        const double s = std::clamp(knn[i], lo, hi);
        cloud.scales.emplace_back(Vec3::Constant(std::log(s)));
        cloud.sh[i * c] = seed.colors[i];
    }
    cloud.fdm = init_fdm(n, options.basis_count, options.basis_kind);
    return cloud;
}

SeedPointCloud build_seed(std::span<const RGBDFrame> frames, std::span<const CameraFrame> cams,
                          const InitOptions& options) {
    if (frames.empty() || frames.size() != cams.size()) {
        throw InvalidParameter("build_seed: need matching, non-empty frame and camera lists");
    }
    SeedPointCloud canonical = backproject(frames.front(), cams.front());
    if (!options.motion_aware_fusion) {
        return canonical;
    }
    const MotionMask f = motion_mask(frames, options.tau);
    const double voxel = options.voxel < 0.0 ? median_nn_spacing(canonical.points) : options.voxel;
    return fuse_points(canonical, frames, cams, f, voxel, options.max_donors);
}

GaussianCloud initialize_cloud(std::span<const RGBDFrame> frames,
                               std::span<const CameraFrame> cams, const InitOptions& options) {
    return seed_to_gaussians(build_seed(frames, cams, options), options.seed);
}

} // namespace deformsplat
