#pragma once

#include <cstdint>
#include <vector>

#include "deformsplat/camera.hpp"
#include "deformsplat/core_model.hpp"
#include "deformsplat/initialization.hpp"
#include "deformsplat/split.hpp"

namespace deformsplat {

enum class MotionProfile {
    Sinusoidal,    // every Gaussian oscillates for the whole video
    LocalizedPoke, // a local indentation confined to [poke_start, poke_end]
};

struct SyntheticSpec {
    int gaussians = 300;
    int frames = 64;
    int width = 64;
    int height = 64;
    double depth = 3.0; // distance of the tissue surface from the camera
    MotionProfile profile = MotionProfile::Sinusoidal;
    double translation_amplitude = 0.08; // world units
    double rotation_amplitude = 0.3;     // radians
    double scale_amplitude = 0.1;        // log-scale units
    double frequency = 1.0;              // cycles per video
    double poke_start = 0.4;
    double poke_end = 0.6;
    double poke_amplitude = 0.25;
    double poke_radius = 0.5;
    bool occluder = false;
    double occluder_area = 0.2; // fraction of the image covered in every frame
    double camera_motion = 0.0; // radius of a circular camera translation
};

/// A Gaussian with a scripted trajectory.
struct ScriptedGaussian {
    Vec3 position;
    Vec4 rotation;
    Vec3 log_scale;
    double opacity_logit = 0.0;
    Vec3 color;
    Vec3 motion_dir;
    Vec3 rotation_axis;
    double phase = 0.0;
    double poke_weight = 0.0;
};

struct OccluderBox {
    int x0 = 0, y0 = 0, x1 = -1, y1 = -1; // inclusive pixel bounds
    bool contains(int x, int y) const { return x >= x0 && x <= x1 && y >= y0 && y <= y1; }
    long area() const { return x1 < x0 ? 0L : static_cast<long>(x1 - x0 + 1) * (y1 - y0 + 1); }
};

struct SyntheticScene {
    SyntheticSpec spec;
    std::vector<ScriptedGaussian> gaussians;
    std::vector<CameraFrame> cams;
    std::vector<RGBDFrame> frames;
    std::vector<OccluderBox> occluders; // one per frame when enabled
    FrameSplit split;

    /// Ground-truth cloud with the trajectories evaluated at `t` (no deformation parameters).
    GaussianCloud cloud_at(double t) const;
    CameraFrame camera_at(double t) const;
    OccluderBox occluder_at(double t) const;
};

inline constexpr double kOccluderDepth = 1.5;
inline const Vec3 kOccluderColor{0.55, 0.55, 0.6};

/// Deterministic scene for `seed`. Frames are rendered by the rasterizer from
/// the scripted ground truth; the mask is zero under the occluder and where the
/// accumulated opacity is below 0.5.
SyntheticScene generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

} // namespace deformsplat
