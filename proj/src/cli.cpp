#include "deformsplat/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "deformsplat/errors.hpp"
#include "deformsplat/evaluation.hpp"
#include "deformsplat/io.hpp"
#include "deformsplat/synthetic.hpp"
#include "deformsplat/training.hpp"

namespace deformsplat {

namespace fs = std::filesystem;

namespace {

struct TrainArgs {
    std::string data;
    std::string out;
    int iters = 3000;
    double lr = 1.6e-3;
    int bases = kDefaultBasisCount;
    double tau = kDefaultMotionThreshold;
    std::uint64_t seed = 0;
    bool no_mapf = false;
    std::string basis = "gaussian";
    int threads = 1;
    int log_every = 100;
};

struct RenderArgs {
    std::string ckpt;
    std::string data;
    std::optional<double> time;
    std::optional<int> frame;
    std::string out;
};

struct EvalArgs {
    std::string ckpt;
    std::string data;
    std::string out;
    int threads = 1;
};

struct SynthArgs {
    std::string spec;
    std::string out;
    std::uint64_t seed = 0;
};

struct BenchArgs {
    std::string ckpt;
    std::string data;
    int reps = 10;
    int threads = 0; // 0: hardware concurrency
};

std::string rng_to_string(const std::mt19937_64& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

// The dataset path stored in a checkpoint's config echo, used when --data is omitted.
std::string resolve_data(const std::string& given, const Checkpoint& ck) {
    if (!given.empty()) {
        return given;
    }
    const auto j = nlohmann::json::parse(ck.config_json, nullptr, false);
    if (j.is_object() && j.contains("data") && j["data"].is_string() &&
        !j["data"].get<std::string>().empty()) {
        return j["data"].get<std::string>();
    }
    throw InvalidParameter("no dataset recorded in checkpoint; pass --data");
}

int cmd_train(const TrainArgs& a) {
    TrainConfig cfg;
    cfg.iterations = a.iters;
    cfg.lr_initial = a.lr;
    cfg.basis_count = a.bases;
    cfg.tau = a.tau;
    cfg.seed = a.seed;
    cfg.motion_aware_fusion = !a.no_mapf;
    cfg.basis_kind = a.basis == "gaussian" ? BasisKind::LearnableGaussian : BasisKind::FourierPolynomial;
    cfg.threads = a.threads;
    // Short runs keep the freeze inside the run.
    cfg.densify_freeze_iters = std::min(cfg.densify_freeze_iters, cfg.iterations);
    cfg.validate();

    const SceneDataset ds = load_dataset(a.data);
    const auto frames = ds.select_frames(ds.split.train);
    const auto cams = ds.select_cams(ds.split.train);
    std::cout << "loaded " << ds.frames.size() << " frames (" << frames.size() << " train, "
              << ds.split.test.size() << " test)\n";

    const auto start = std::chrono::steady_clock::now();
    const TrainCallback log = [&](const IterationRecord& r, const GaussianCloud&,
                                  const std::mt19937_64&) {
        if (a.log_every > 0 && (r.iter % a.log_every == 0 || r.iter == cfg.iterations)) {
            std::printf("iter %5d  L_C %.5f  L_D %.5f  L %.5f  N %zu\n", r.iter, r.loss.color,
                        r.loss.depth, r.loss.total, r.gaussians);
            std::fflush(stdout);
        }
    };
    const TrainResult result = train_scene(frames, cams, cfg, log);
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    const fs::path out(a.out);
    fs::create_directories(out);
    const std::string config = config_to_json(cfg, fs::absolute(a.data).string());
    save_checkpoint(out / "checkpoint.bin", result.cloud, config,
                    static_cast<std::uint64_t>(cfg.iterations), rng_to_string(result.rng));
    write_text(out / "loss.csv", loss_history_csv(result.history));
    write_text(out / "config.json", nlohmann::json::parse(config).dump(2) + "\n");

    if (!ds.split.test.empty()) {
        RasterSettings rs;
        rs.threads = cfg.threads;
        MetricReport rep = evaluate(result.cloud, ds.frames, ds.cams, ds.split.test,
                                    cfg.background, rs);
        rep.train_time = seconds;
        write_text(out / "metrics.txt", rep.to_key_value());
        write_text(out / "metrics.csv", rep.to_csv());
        std::printf("test PSNR %.3f dB  SSIM %.4f\n", rep.psnr_mean, rep.ssim_mean);
    }
    std::printf("trained %zu Gaussians in %.1f s -> %s\n", result.cloud.size(), seconds,
                (out / "checkpoint.bin").string().c_str());
    return 0;
}

int cmd_render(const RenderArgs& a) {
    const Checkpoint ck = load_checkpoint(a.ckpt);
    const SceneDataset ds = load_dataset(resolve_data(a.data, ck));
    CameraFrame cam;
    if (a.frame) {
        if (*a.frame < 0 || static_cast<std::size_t>(*a.frame) >= ds.cams.size()) {
            throw InvalidParameter("--frame out of range [0, " + std::to_string(ds.cams.size()) +
                                   ")");
        }
        cam = ds.cams[static_cast<std::size_t>(*a.frame)];
    } else {
        const double t = *a.time;
        if (!(t >= 0.0 && t <= 1.0)) {
            throw InvalidParameter("--time must lie in [0, 1]");
        }
        // Pose of the frame closest in time; the deformation is evaluated at t itself.
        std::size_t best = 0;
        for (std::size_t i = 1; i < ds.cams.size(); ++i) {
            if (std::abs(ds.cams[i].time - t) < std::abs(ds.cams[best].time - t)) {
                best = i;
            }
        }
        cam = ds.cams[best];
        cam.time = t;
    }
    const RenderOutput r = render(ck.cloud, cam, Vec3::Zero());
    const fs::path base(a.out);
    const fs::path color = base.string() + "_color.png";
    const fs::path depth = base.string() + "_depth.png";
    write_color_png(color, r.color);
    write_depth_png(depth, r.depth, ds.depth_scale);
    std::printf("wrote %s and %s (t = %.6f)\n", color.string().c_str(), depth.string().c_str(),
                cam.time);
    return 0;
}

int cmd_eval(const EvalArgs& a) {
    const Checkpoint ck = load_checkpoint(a.ckpt);
    const SceneDataset ds = load_dataset(resolve_data(a.data, ck));
    if (ds.split.test.empty()) {
        throw InvalidParameter("dataset has no test frames (needs at least 2 frames)");
    }
    RasterSettings rs;
    rs.threads = a.threads;
    const MetricReport rep = evaluate(ck.cloud, ds.frames, ds.cams, ds.split.test, Vec3::Zero(), rs);
    std::cout << rep.to_key_value();
    if (!a.out.empty()) {
        const fs::path out(a.out);
        write_text(out / "metrics.txt", rep.to_key_value());
        write_text(out / "metrics.csv", rep.to_csv());
    }
    return 0;
}

int cmd_synth(const SynthArgs& a) {
    const SyntheticSpec spec =
        a.spec.empty() ? SyntheticSpec{} : synthetic_spec_from_json(read_text(a.spec));
    const SyntheticScene scene = generate_synthetic(spec, a.seed);
    constexpr double depth_scale = 1e-4;
    save_dataset(a.out, scene.frames, scene.cams, depth_scale);
    write_text(fs::path(a.out) / "spec.json", synthetic_spec_to_json(spec) + "\n");
    std::printf("wrote %zu frames (%zu train / %zu test) to %s\n", scene.frames.size(),
                scene.split.train.size(), scene.split.test.size(), a.out.c_str());
    return 0;
}

int cmd_bench(const BenchArgs& a) {
    const Checkpoint ck = load_checkpoint(a.ckpt);
    const SceneDataset ds = load_dataset(resolve_data(a.data, ck));
    const int hw = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    const int multi = a.threads > 0 ? a.threads : hw;
    const BenchResult single = bench_render(ck.cloud, ds.cams, a.reps, 1);
    std::printf("threads = 1  fps = %.2f +- %.2f  (%d reps, %zu Gaussians)\n", single.fps_mean,
                single.fps_stddev, single.repetitions, ck.cloud.size());
    if (multi > 1) {
        const BenchResult par = bench_render(ck.cloud, ds.cams, a.reps, multi);
        std::printf("threads = %d  fps = %.2f +- %.2f\n", multi, par.fps_mean, par.fps_stddev);
    }
    return 0;
}

} // namespace

int run_cli(int argc, char** argv) {
    CLI::App app{"Deformable Gaussian splatting for dynamic RGB-D scenes"};
    app.require_subcommand(1);

    TrainArgs ta;
    auto* train = app.add_subcommand("train", "fit a dynamic scene");
    train->add_option("--data", ta.data, "dataset directory")->required();
    train->add_option("--out", ta.out, "output directory")->required();
    train->add_option("--iters", ta.iters, "iterations")->capture_default_str();
    train->add_option("--lr", ta.lr, "initial learning rate")->capture_default_str();
    train->add_option("--bases", ta.bases, "basis functions per channel")->capture_default_str();
    train->add_option("--tau", ta.tau, "motion-mask threshold")->capture_default_str();
    train->add_option("--seed", ta.seed, "random seed")->capture_default_str();
    train->add_flag("--no-mapf", ta.no_mapf, "initialize from the first frame only");
    train->add_option("--basis", ta.basis, "gaussian | fourier-poly")
        ->check(CLI::IsMember({"gaussian", "fourier-poly"}))
        ->capture_default_str();
    train->add_option("--threads", ta.threads, "rasterizer threads")->capture_default_str();
    train->add_option("--log-every", ta.log_every, "progress interval (0 = quiet)")
        ->capture_default_str();

    RenderArgs ra;
    auto* rend = app.add_subcommand("render", "render a checkpoint at one timestamp");
    rend->add_option("--ckpt", ra.ckpt, "checkpoint file")->required();
    auto* time_opt = rend->add_option("--time", ra.time, "normalized time in [0, 1]");
    auto* frame_opt = rend->add_option("--frame", ra.frame, "dataset frame index");
    time_opt->excludes(frame_opt);
    rend->add_option("--out", ra.out, "output prefix (_color.png, _depth.png)")->required();
    rend->add_option("--data", ra.data, "dataset (defaults to the training dataset)");

    EvalArgs ea;
    auto* eval = app.add_subcommand("eval", "score a checkpoint on the test split");
    eval->add_option("--ckpt", ea.ckpt, "checkpoint file")->required();
    eval->add_option("--data", ea.data, "dataset (defaults to the training dataset)");
    eval->add_option("--out", ea.out, "directory for metrics.txt / metrics.csv");
    eval->add_option("--threads", ea.threads, "rasterizer threads")->capture_default_str();

    SynthArgs sa;
    auto* synth = app.add_subcommand("synth", "write a synthetic dataset");
    synth->add_option("--spec", sa.spec, "scene spec JSON (defaults when omitted)");
    synth->add_option("--out", sa.out, "output directory")->required();
    synth->add_option("--seed", sa.seed, "random seed")->capture_default_str();

    BenchArgs ba;
    auto* bench = app.add_subcommand("bench", "measure rendering speed");
    bench->add_option("--ckpt", ba.ckpt, "checkpoint file")->required();
    bench->add_option("--reps", ba.reps, "timed passes over all cameras")->capture_default_str();
    bench->add_option("--data", ba.data, "dataset (defaults to the training dataset)");
    bench->add_option("--threads", ba.threads, "threads for the parallel run (0 = all cores)");

    try {
        app.parse(argc, argv);
        if (rend->parsed() && !ra.time && !ra.frame) {
            throw CLI::RequiredError("render needs --time or --frame");
        }
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (train->parsed()) {
            return cmd_train(ta);
        }
        if (rend->parsed()) {
            return cmd_render(ra);
        }
        if (eval->parsed()) {
            return cmd_eval(ea);
        }
        if (synth->parsed()) {
            return cmd_synth(sa);
        }
        return cmd_bench(ba);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}

} // namespace deformsplat
