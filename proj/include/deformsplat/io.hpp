#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "deformsplat/camera.hpp"
#include "deformsplat/core_model.hpp"
#include "deformsplat/image.hpp"
#include "deformsplat/initialization.hpp"
#include "deformsplat/split.hpp"
#include "deformsplat/synthetic.hpp"
#include "deformsplat/training.hpp"

namespace deformsplat {

// Dataset layout:
//   cameras.json           intrinsics, depth_scale and one entry per frame
//   color/NNNNNN.png       8-bit RGB
//   depth/NNNNNN.png       16-bit single channel, world depth = value * depth_scale
//   mask/NNNNNN.png        8-bit, nonzero = valid tissue
//
// cameras.json:
//   { "fx", "fy", "cx", "cy", "width", "height", "depth_scale",
//     "frames": [ { "index": 0, "time": <raw seconds>,
//                   "world_to_camera": [16 numbers, row-major] }, ... ] }

struct SceneDataset {
    std::filesystem::path root;
    double fx = 0, fy = 0, cx = 0, cy = 0;
    int width = 0, height = 0;
    double depth_scale = 1e-3;
    std::vector<double> raw_times;
    std::vector<RGBDFrame> frames;
    std::vector<CameraFrame> cams; // timestamps normalized to [0, 1]
    FrameSplit split;

    std::vector<RGBDFrame> select_frames(std::span<const std::size_t> idx) const;
    std::vector<CameraFrame> select_cams(std::span<const std::size_t> idx) const;
};

/// Throws IoError on missing files, size mismatches or non-increasing timestamps.
SceneDataset load_dataset(const std::filesystem::path& root);

/// Writes frames in the layout above. Raw times default to the frame timestamps.
void save_dataset(const std::filesystem::path& root, std::span<const RGBDFrame> frames,
                  std::span<const CameraFrame> cams, double depth_scale);

/// Maps raw timestamps to [0, 1] (first -> 0, last -> 1). Throws IoError unless strictly increasing.
std::vector<double> normalize_times(std::span<const double> raw);

Image read_color_png(const std::filesystem::path& path);
Image read_depth_png(const std::filesystem::path& path, double depth_scale);
Image read_mask_png(const std::filesystem::path& path);
void write_color_png(const std::filesystem::path& path, const Image& color);
void write_depth_png(const std::filesystem::path& path, const Image& depth, double depth_scale);
void write_mask_png(const std::filesystem::path& path, const Image& mask);

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'D', 'S', 'P', 'L', 'A', 'T', 'C', 'K'};

// Checkpoint layout, all integers and floats little-endian:
//   magic[8] "DSPLATCK" | u32 version | u64 N | u32 B | u32 basis kind |
//   u32 SH degree | u64 iteration | u32 len + config JSON | u32 len + RNG state |
//   u64 blob bytes | blob
// The blob holds float64 arrays in this order: positions (N x 3), rotations
// (N x 4, wxyz), log-scales (N x 3), opacity logits (N), SH (N x C x 3),
// deformation weights, centers, widths (each N x 10 x B).
struct Checkpoint {
    std::uint32_t version = kCheckpointVersion;
    std::uint64_t iteration = 0;
    std::string config_json;
    std::string rng_state;
    GaussianCloud cloud;
};

std::uint64_t checkpoint_blob_bytes(std::uint64_t n, int basis_count, int sh_degree);

void save_checkpoint(const std::filesystem::path& path, const GaussianCloud& cloud,
                     const std::string& config_json, std::uint64_t iteration,
                     const std::string& rng_state = {});
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Training config as JSON (used as the checkpoint config echo).
std::string config_to_json(const TrainConfig& cfg, const std::string& data_path = {});

SyntheticSpec synthetic_spec_from_json(const std::string& text);
std::string synthetic_spec_to_json(const SyntheticSpec& spec);

/// iter,L_C,L_D,L,N_gaussians with round-trip precision.
std::string loss_history_csv(std::span<const IterationRecord> history);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

} // namespace deformsplat
