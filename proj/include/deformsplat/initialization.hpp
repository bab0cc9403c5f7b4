#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "deformsplat/camera.hpp"
#include "deformsplat/core_model.hpp"
#include "deformsplat/image.hpp"

namespace deformsplat {

/// One RGB-D observation. `mask` holds 1 for valid tissue and 0 elsewhere; a
/// depth of 0 marks a missing measurement.
struct RGBDFrame {
    Image color; // H x W x 3 in [0, 1]
    Image depth; // H x W, world units
    Image mask;  // H x W, {0, 1}
    double time = 0.0;

    int width() const { return color.width; }
    int height() const { return color.height; }
    /// Throws InvalidParameter on shape mismatch, negative depth or non-binary mask.
    void validate() const;
};

struct MotionMask {
    std::vector<std::uint8_t> flags; // row-major, 1 = fuse here
    int width = 0;
    int height = 0;
    double tau = 0.1;
    int frame_count = 0;

    bool at(int x, int y) const {
        return flags[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
                     static_cast<std::size_t>(x)] != 0;
    }
    std::size_t count() const;
};

struct SeedPointCloud {
    std::vector<Vec3> points;
    std::vector<Vec3> colors;

    std::size_t size() const { return points.size(); }
};

inline constexpr double kDefaultMotionThreshold = 0.1;
inline constexpr int kDefaultDonorFrames = 8;

/// World-space points for every pixel with mask = 1 and depth > 0.
SeedPointCloud backproject(const RGBDFrame& frame, const CameraFrame& cam);

/// Pixels whose color deviates from the all-frame mean by more than tau in any
/// channel, united with the pixels masked out in the first frame.
MotionMask motion_mask(std::span<const RGBDFrame> frames, double tau = kDefaultMotionThreshold);

/// Uniformly spaced donor frame indices: min(frame_count, max_donors) of them.
std::vector<std::size_t> donor_frames(std::size_t frame_count, int max_donors = kDefaultDonorFrames);

/// Appends donor-frame points whose projection into the first camera lands on a
/// flagged pixel of `fusion_mask`. A fused point is dropped if its voxel (edge
/// `voxel`) already holds a point; canonical points are never removed. A voxel
/// size of 0 disables deduplication.
SeedPointCloud fuse_points(const SeedPointCloud& canonical, std::span<const RGBDFrame> frames,
                           std::span<const CameraFrame> cams, const MotionMask& fusion_mask,
                           double voxel, int max_donors = kDefaultDonorFrames);

/// Median distance from each point to its nearest neighbour (0 for < 2 points).
double median_nn_spacing(std::span<const Vec3> points);

/// Mean distance to the k nearest neighbours of every point (brute force).
std::vector<double> mean_knn_distance(std::span<const Vec3> points, int k);

struct SeedOptions {
    int basis_count = kDefaultBasisCount;
    BasisKind basis_kind = BasisKind::LearnableGaussian;
    int sh_degree = 0;
    double initial_opacity = 0.1;
};

/// One Gaussian per seed point with isotropic scale from the 3-NN distance.
GaussianCloud seed_to_gaussians(const SeedPointCloud& seed, const SeedOptions& options = {});

struct InitOptions {
    double tau = kDefaultMotionThreshold;
    bool motion_aware_fusion = true;
    double voxel = -1.0; // < 0 selects the median nearest-neighbour spacing of the canonical cloud
    int max_donors = kDefaultDonorFrames;
    SeedOptions seed;
};

/// Canonical cloud from the first frame, optionally densified by point fusion.
SeedPointCloud build_seed(std::span<const RGBDFrame> frames, std::span<const CameraFrame> cams,
                          const InitOptions& options = {});

GaussianCloud initialize_cloud(std::span<const RGBDFrame> frames,
                               std::span<const CameraFrame> cams, const InitOptions& options = {});

} // namespace deformsplat
