#include "deformsplat/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "deformsplat/errors.hpp"

namespace deformsplat {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string frame_name(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%06zu.png", i);
    return buf;
}

cv::Mat read_png(const fs::path& path, int expected_depth, int expected_channels) {
    if (!fs::exists(path)) {
        throw IoError("missing image file: " + path.string());
    }
    cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
    if (m.empty()) {
        throw IoError("cannot decode image: " + path.string());
    }
    if (m.depth() != expected_depth || m.channels() != expected_channels) {
        throw IoError("unexpected pixel format in " + path.string());
    }
    return m;
}

void write_png(const fs::path& path, const cv::Mat& m) {
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    if (!cv::imwrite(path.string(), m)) {
        throw IoError("cannot write image: " + path.string());
    }
}

std::uint8_t to_u8(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

} // namespace

Image read_color_png(const fs::path& path) {
    const cv::Mat m = read_png(path, CV_8U, 3);
    Image img(m.cols, m.rows, 3);
    for (int y = 0; y < m.rows; ++y) {
        for (int x = 0; x < m.cols; ++x) {
            const auto& bgr = m.at<cv::Vec3b>(y, x);
            for (int c = 0; c < 3; ++c) {
                img.at(x, y, c) = bgr[2 - c] / 255.0;
            }
        }
    }
    return img;
}

Image read_depth_png(const fs::path& path, double depth_scale) {
    const cv::Mat m = read_png(path, CV_16U, 1);
    Image img(m.cols, m.rows, 1);
    for (int y = 0; y < m.rows; ++y) {
        for (int x = 0; x < m.cols; ++x) {
            img.at(x, y) = m.at<std::uint16_t>(y, x) * depth_scale;
        }
    }
    return img;
}

Image read_mask_png(const fs::path& path) {
    const cv::Mat m = read_png(path, CV_8U, 1);
    Image img(m.cols, m.rows, 1);
    for (int y = 0; y < m.rows; ++y) {
        for (int x = 0; x < m.cols; ++x) {
            img.at(x, y) = m.at<std::uint8_t>(y, x) != 0 ? 1.0 : 0.0;
        }
    }
    return img;
}

void write_color_png(const fs::path& path, const Image& color) {
    if (color.channels != 3) {
        throw InvalidParameter("write_color_png: expected 3 channels");
    }
    cv::Mat m(color.height, color.width, CV_8UC3);
    for (int y = 0; y < color.height; ++y) {
        for (int x = 0; x < color.width; ++x) {
            m.at<cv::Vec3b>(y, x) = cv::Vec3b(to_u8(color.at(x, y, 2)), to_u8(color.at(x, y, 1)),
                                              to_u8(color.at(x, y, 0)));
        }
    }
    write_png(path, m);
}

void write_depth_png(const fs::path& path, const Image& depth, double depth_scale) {
    if (!(depth_scale > 0.0)) {
        throw InvalidParameter("write_depth_png: depth_scale must be positive");
    }
    cv::Mat m(depth.height, depth.width, CV_16UC1);
    for (int y = 0; y < depth.height; ++y) {
        for (int x = 0; x < depth.width; ++x) {
            const double v = std::clamp(std::round(depth.at(x, y) / depth_scale), 0.0, 65535.0);
            m.at<std::uint16_t>(y, x) = static_cast<std::uint16_t>(v);
        }
    }
    write_png(path, m);
}

void write_mask_png(const fs::path& path, const Image& mask) {
    cv::Mat m(mask.height, mask.width, CV_8UC1);
    for (int y = 0; y < mask.height; ++y) {
        for (int x = 0; x < mask.width; ++x) {
            m.at<std::uint8_t>(y, x) = mask.at(x, y) != 0.0 ? 255 : 0;
        }
    }
    write_png(path, m);
}

std::vector<double> normalize_times(std::span<const double> raw) {
    for (std::size_t i = 1; i < raw.size(); ++i) {
        if (!(raw[i] > raw[i - 1])) {
            throw IoError("timestamps must be strictly increasing (frame " + std::to_string(i) +
                          ")");
        }
    }
    std::vector<double> out(raw.size(), 0.0);
    if (raw.size() < 2) {
        return out;
    }
    const double t0 = raw.front();
    const double span = raw.back() - t0;
    for (std::size_t i = 0; i < raw.size(); ++i) {
        out[i] = (raw[i] - t0) / span;
    }
    out.back() = 1.0;
    return out;
}

std::vector<RGBDFrame> SceneDataset::select_frames(std::span<const std::size_t> idx) const {
    std::vector<RGBDFrame> out;
    for (const auto i : idx) {
        out.push_back(frames.at(i));
    }
    return out;
}

std::vector<CameraFrame> SceneDataset::select_cams(std::span<const std::size_t> idx) const {
    std::vector<CameraFrame> out;
    for (const auto i : idx) {
        out.push_back(cams.at(i));
    }
    return out;
}

SceneDataset load_dataset(const fs::path& root) {
    const fs::path manifest = root / "cameras.json";
    if (!fs::exists(manifest)) {
        throw IoError("dataset manifest not found: " + manifest.string());
    }
    json j;
    try {
        j = json::parse(read_text(manifest));
    } catch (const json::exception& e) {
        throw IoError("malformed camera manifest " + manifest.string() + ": " + e.what());
    }
    SceneDataset ds;
    ds.root = root;
    std::vector<Mat4> extrinsics;
    try {
        ds.fx = j.at("fx").get<double>();
        ds.fy = j.at("fy").get<double>();
        ds.cx = j.at("cx").get<double>();
        ds.cy = j.at("cy").get<double>();
        ds.width = j.at("width").get<int>();
        ds.height = j.at("height").get<int>();
        ds.depth_scale = j.at("depth_scale").get<double>();
        const auto& frames = j.at("frames");
        for (std::size_t i = 0; i < frames.size(); ++i) {
            const auto& f = frames[i];
            if (f.at("index").get<std::size_t>() != i) {
                throw IoError("frame indices must be contiguous from 0 (entry " +
                              std::to_string(i) + ")");
            }
            ds.raw_times.push_back(f.at("time").get<double>());
            const auto m = f.at("world_to_camera").get<std::vector<double>>();
            if (m.size() != 16) {
                throw IoError("world_to_camera must have 16 entries (frame " + std::to_string(i) +
                              ")");
            }
            Mat4 t;
            for (int r = 0; r < 4; ++r) {
                for (int c = 0; c < 4; ++c) {
                    t(r, c) = m[static_cast<std::size_t>(r * 4 + c)];
                }
            }
            extrinsics.push_back(t);
        }
    } catch (const json::exception& e) {
        throw IoError("camera manifest " + manifest.string() + ": " + e.what());
    }
    if (extrinsics.empty()) {
        throw IoError("dataset has no frames: " + root.string());
    }
    if (!(ds.depth_scale > 0.0)) {
        throw IoError("depth_scale must be positive");
    }
    const auto times = normalize_times(ds.raw_times);

    for (std::size_t i = 0; i < extrinsics.size(); ++i) {
        RGBDFrame f;
        f.color = read_color_png(root / "color" / frame_name(i));
        f.depth = read_depth_png(root / "depth" / frame_name(i), ds.depth_scale);
        f.mask = read_mask_png(root / "mask" / frame_name(i));
        f.time = times[i];
        if (f.color.width != ds.width || f.color.height != ds.height ||
            !f.color.same_size(f.depth) || !f.color.same_size(f.mask)) {
            throw IoError("frame " + std::to_string(i) + " dimensions do not match " +
                          std::to_string(ds.width) + "x" + std::to_string(ds.height));
        }
        CameraFrame cam = CameraFrame::from_pinhole(ds.fx, ds.fy, ds.cx, ds.cy, ds.width,
                                                    ds.height, extrinsics[i], times[i]);
        try {
            cam.validate();
        } catch (const InvalidParameter& e) {
            throw IoError("frame " + std::to_string(i) + ": " + e.what());
        }
        ds.frames.push_back(std::move(f));
        ds.cams.push_back(cam);
    }
    ds.split = split_frames(ds.frames.size());
    return ds;
}

void save_dataset(const fs::path& root, std::span<const RGBDFrame> frames,
                  std::span<const CameraFrame> cams, double depth_scale) {
    if (frames.empty() || frames.size() != cams.size()) {
        throw InvalidParameter("save_dataset: need matching, non-empty frame and camera lists");
    }
    fs::create_directories(root);
    const CameraFrame& c0 = cams.front();
    json j;
    j["fx"] = c0.fx();
    j["fy"] = c0.fy();
    j["cx"] = c0.cx();
    j["cy"] = c0.cy();
    j["width"] = c0.width;
    j["height"] = c0.height;
    j["depth_scale"] = depth_scale;
    j["frames"] = json::array();
    for (std::size_t i = 0; i < frames.size(); ++i) {
        std::vector<double> m;
        for (int r = 0; r < 4; ++r) {
            for (int c = 0; c < 4; ++c) {
                m.push_back(cams[i].world_to_camera(r, c));
            }
        }
        j["frames"].push_back({{"index", i}, {"time", frames[i].time}, {"world_to_camera", m}});
        write_color_png(root / "color" / frame_name(i), frames[i].color);
        write_depth_png(root / "depth" / frame_name(i), frames[i].depth, depth_scale);
        write_mask_png(root / "mask" / frame_name(i), frames[i].mask);
    }
    write_text(root / "cameras.json", j.dump(2) + "\n");
}

// --- checkpoints -----------------------------------------------------------

namespace {

class ByteWriter {
public:
    void u32(std::uint32_t v) { put(v, 4); }
    void u64(std::uint64_t v) { put(v, 8); }
    void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
    void bytes(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        buf_.insert(buf_.end(), s.begin(), s.end());
    }
    void raw(const char* p, std::size_t n) { buf_.insert(buf_.end(), p, p + n); }
    const std::vector<char>& data() const { return buf_; }

private:
    void put(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) {
            buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
        }
    }
    std::vector<char> buf_;
};

class ByteReader {
public:
    ByteReader(const std::vector<char>& buf, std::string path) : buf_(buf), path_(std::move(path)) {}

    std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
    std::uint64_t u64() { return get(8); }
    double f64() { return std::bit_cast<double>(get(8)); }
    std::string bytes() {
        const std::uint32_t n = u32();
        need(n);
        std::string s(buf_.data() + pos_, n);
        pos_ += n;
        return s;
    }
    void need(std::size_t n) const {
        if (pos_ + n > buf_.size()) {
            throw IoError("checkpoint " + path_ + ": truncated header");
        }
    }
    std::size_t remaining() const { return buf_.size() - pos_; }
    std::size_t pos() const { return pos_; }

private:
    std::uint64_t get(int n) {
        need(static_cast<std::size_t>(n));
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) {
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
        }
        pos_ += static_cast<std::size_t>(n);
        return v;
    }
    const std::vector<char>& buf_;
    std::string path_;
    std::size_t pos_ = 0;
};

} // namespace

std::uint64_t checkpoint_blob_bytes(std::uint64_t n, int basis_count, int sh_degree) {
    const std::uint64_t per = 3 + 4 + 3 + 1 + 3 * static_cast<std::uint64_t>(sh_coeff_count(sh_degree)) +
                              3 * static_cast<std::uint64_t>(kDeformChannels) *
                                  static_cast<std::uint64_t>(basis_count);
    return n * per * 8;
}

void save_checkpoint(const fs::path& path, const GaussianCloud& cloud,
                     const std::string& config_json, std::uint64_t iteration,
                     const std::string& rng_state) {
    cloud.check_consistent();
    ByteWriter w;
    w.raw(kCheckpointMagic, sizeof(kCheckpointMagic));
    w.u32(kCheckpointVersion);
    w.u64(cloud.size());
    w.u32(static_cast<std::uint32_t>(cloud.fdm.basis_count));
    w.u32(static_cast<std::uint32_t>(cloud.fdm.kind));
    w.u32(static_cast<std::uint32_t>(cloud.sh_degree));
    w.u64(iteration);
    w.bytes(config_json);
    w.bytes(rng_state);
    w.u64(checkpoint_blob_bytes(cloud.size(), cloud.fdm.basis_count, cloud.sh_degree));
    for (int gi = 0; gi < kParamGroupCount; ++gi) {
        for (const double v : group_values(cloud, static_cast<ParamGroup>(gi))) {
            w.f64(v);
        }
    }
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) {
        throw IoError("cannot open checkpoint for writing: " + path.string());
    }
    os.write(w.data().data(), static_cast<std::streamsize>(w.data().size()));
    if (!os) {
        throw IoError("failed writing checkpoint: " + path.string());
    }
}

Checkpoint load_checkpoint(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw IoError("cannot open checkpoint: " + path.string());
    }
    const std::vector<char> buf((std::istreambuf_iterator<char>(is)),
                                std::istreambuf_iterator<char>());
    if (buf.size() < sizeof(kCheckpointMagic) ||
        std::memcmp(buf.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
        throw IoError("checkpoint " + path.string() + ": bad magic bytes");
    }
    std::vector<char> rest(buf.begin() + sizeof(kCheckpointMagic), buf.end());
    ByteReader h(rest, path.string());

    Checkpoint ck;
    ck.version = h.u32();
    if (ck.version != kCheckpointVersion) {
        throw IoError("checkpoint " + path.string() + ": unsupported format version " +
                      std::to_string(ck.version) + " (expected " +
                      std::to_string(kCheckpointVersion) + ")");
    }
    const std::uint64_t n = h.u64();
    const auto basis = static_cast<int>(h.u32());
    const std::uint32_t kind = h.u32();
    const auto sh_degree = static_cast<int>(h.u32());
    ck.iteration = h.u64();
    ck.config_json = h.bytes();
    ck.rng_state = h.bytes();
    const std::uint64_t declared = h.u64();
    if (basis < 1 || kind > 1 || sh_degree < 0 || sh_degree > kMaxShDegree) {
        throw IoError("checkpoint " + path.string() + ": invalid header fields");
    }
    const std::uint64_t expected = checkpoint_blob_bytes(n, basis, sh_degree);
    if (declared != expected || h.remaining() != expected) {
        throw IoError("checkpoint " + path.string() + ": parameter blob length mismatch, expected " +
                      std::to_string(expected) + " bytes, got " + std::to_string(h.remaining()));
    }

    GaussianCloud& c = ck.cloud;
    c.sh_degree = sh_degree;
    c.positions.assign(n, Vec3::Zero());
    c.rotations.assign(n, Vec4::Zero());
    c.scales.assign(n, Vec3::Zero());
    c.opacities.assign(n, 0.0);
    c.sh.assign(n * static_cast<std::uint64_t>(sh_coeff_count(sh_degree)), Vec3::Zero());
    c.fdm = init_fdm(n, basis, static_cast<BasisKind>(kind));
    for (int gi = 0; gi < kParamGroupCount; ++gi) {
        for (double& v : group_values(c, static_cast<ParamGroup>(gi))) {
            v = h.f64();
        }
    }
    return ck;
}

// --- JSON helpers ------------------------------------------------------------

std::string config_to_json(const TrainConfig& cfg, const std::string& data_path) {
    json j;
    j["data"] = data_path;
    j["iterations"] = cfg.iterations;
    j["lr_initial"] = cfg.lr_initial;
    j["lr_multipliers"] = {{"position", cfg.lr_multipliers.position},
                           {"rotation", cfg.lr_multipliers.rotation},
                           {"scale", cfg.lr_multipliers.scale},
                           {"opacity", cfg.lr_multipliers.opacity},
                           {"color", cfg.lr_multipliers.color},
                           {"deform_weight", cfg.lr_multipliers.deform_weight},
                           {"deform_center", cfg.lr_multipliers.deform_center},
                           {"deform_width", cfg.lr_multipliers.deform_width}};
    j["position_final_ratio"] = cfg.position_final_ratio;
    j["densify_freeze_iters"] = cfg.densify_freeze_iters;
    j["densify_interval"] = cfg.densify_interval;
    j["densify_until_iter"] = cfg.densify_until_iter;
    j["grad_densify_threshold"] = cfg.grad_densify_threshold;
    j["opacity_prune_threshold"] = cfg.opacity_prune_threshold;
    j["percent_dense"] = cfg.percent_dense;
    j["max_gaussians"] = cfg.max_gaussians;
    j["seed"] = cfg.seed;
    j["bases"] = cfg.basis_count;
    j["basis"] = cfg.basis_kind == BasisKind::LearnableGaussian ? "gaussian" : "fourier-poly";
    j["sh_degree"] = cfg.sh_degree;
    j["tau"] = cfg.tau;
    j["mapf"] = cfg.motion_aware_fusion;
    j["color_weight"] = cfg.color_weight;
    j["depth_weight"] = cfg.depth_weight;
    j["background"] = {cfg.background.x(), cfg.background.y(), cfg.background.z()};
    return j.dump();
}

SyntheticSpec synthetic_spec_from_json(const std::string& text) {
    SyntheticSpec s;
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw IoError(std::string("malformed synthetic spec: ") + e.what());
    }
    auto opt = [&](const char* key, auto& field) {
        if (j.contains(key)) {
            field = j.at(key).get<std::decay_t<decltype(field)>>();
        }
    };
    try {
        opt("gaussians", s.gaussians);
        opt("frames", s.frames);
        opt("width", s.width);
        opt("height", s.height);
        opt("depth", s.depth);
        opt("translation_amplitude", s.translation_amplitude);
        opt("rotation_amplitude", s.rotation_amplitude);
        opt("scale_amplitude", s.scale_amplitude);
        opt("frequency", s.frequency);
        opt("poke_start", s.poke_start);
        opt("poke_end", s.poke_end);
        opt("poke_amplitude", s.poke_amplitude);
        opt("poke_radius", s.poke_radius);
        opt("occluder", s.occluder);
        opt("occluder_area", s.occluder_area);
        opt("camera_motion", s.camera_motion);
        if (j.contains("profile")) {
            const auto p = j.at("profile").get<std::string>();
            if (p == "sinusoidal") {
                s.profile = MotionProfile::Sinusoidal;
            } else if (p == "poke") {
                s.profile = MotionProfile::LocalizedPoke;
            } else {
                throw IoError("unknown motion profile '" + p + "' (sinusoidal | poke)");
            }
        }
    } catch (const json::exception& e) {
        throw IoError(std::string("synthetic spec: ") + e.what());
    }
    return s;
}

std::string synthetic_spec_to_json(const SyntheticSpec& s) {
    json j;
    j["gaussians"] = s.gaussians;
    j["frames"] = s.frames;
    j["width"] = s.width;
    j["height"] = s.height;
    j["depth"] = s.depth;
    j["profile"] = s.profile == MotionProfile::Sinusoidal ? "sinusoidal" : "poke";
    j["translation_amplitude"] = s.translation_amplitude;
    j["rotation_amplitude"] = s.rotation_amplitude;
    j["scale_amplitude"] = s.scale_amplitude;
    j["frequency"] = s.frequency;
    j["poke_start"] = s.poke_start;
    j["poke_end"] = s.poke_end;
    j["poke_amplitude"] = s.poke_amplitude;
    j["poke_radius"] = s.poke_radius;
    j["occluder"] = s.occluder;
    j["occluder_area"] = s.occluder_area;
    j["camera_motion"] = s.camera_motion;
    return j.dump(2);
}

std::string loss_history_csv(std::span<const IterationRecord> history) {
    std::ostringstream os;
    os << "iter,L_C,L_D,L,N_gaussians\n";
    char buf[160];
    for (const auto& r : history) {
        std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,%zu\n", r.iter, r.loss.color,
                      r.loss.depth, r.loss.total, r.gaussians);
        os << buf;
    }
    return os.str();
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) {
        throw IoError("cannot write file: " + path.string());
    }
    os << text;
}

std::string read_text(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw IoError("cannot read file: " + path.string());
    }
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

} // namespace deformsplat
