#include "deformsplat/training.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "deformsplat/errors.hpp"

namespace deformsplat {

std::string_view group_name(ParamGroup g) {
    switch (g) {
    case ParamGroup::Position: return "position";
    case ParamGroup::Rotation: return "rotation";
    case ParamGroup::Scale: return "scale";
    case ParamGroup::Opacity: return "opacity";
    case ParamGroup::Color: return "color";
    case ParamGroup::DeformWeight: return "deform_weight";
    case ParamGroup::DeformCenter: return "deform_center";
    case ParamGroup::DeformWidth: return "deform_width";
    }
    return "unknown";
}

namespace {

template <class V>
std::span<double> flat(std::vector<V>& v) {
    if (v.empty()) {
        return {};
    }
    return {v.data()->data(), v.size() * static_cast<std::size_t>(V::SizeAtCompileTime)};
}

} // namespace

std::span<double> group_values(GaussianCloud& cloud, ParamGroup g) {
    switch (g) {
    case ParamGroup::Position: return flat(cloud.positions);
    case ParamGroup::Rotation: return flat(cloud.rotations);
    case ParamGroup::Scale: return flat(cloud.scales);
    case ParamGroup::Opacity: return cloud.opacities;
    case ParamGroup::Color: return flat(cloud.sh);
    case ParamGroup::DeformWeight: return cloud.fdm.weights;
    case ParamGroup::DeformCenter: return cloud.fdm.centers;
    case ParamGroup::DeformWidth: return cloud.fdm.widths;
    }
    return {};
}

std::span<const double> group_values(const GaussianCloud& cloud, ParamGroup g) {
    return group_values(const_cast<GaussianCloud&>(cloud), g);
}

void TrainConfig::validate() const {
    if (iterations < 0) {
        throw InvalidParameter("TrainConfig: iterations must be non-negative");
    }
    if (densify_freeze_iters < 0 || (iterations > 0 && densify_freeze_iters > iterations)) {
        throw InvalidParameter("TrainConfig: densify_freeze_iters must lie in [0, iterations]");
    }
    if (densify_interval < 1) {
        throw InvalidParameter("TrainConfig: densify_interval must be >= 1");
    }
    if (!(lr_initial > 0.0) || basis_count < 1) {
        throw InvalidParameter("TrainConfig: lr_initial must be positive and basis_count >= 1");
    }
}

double color_loss(const Image& rendered, const Image& target, const Image& mask, Image* grad) {
    if (!rendered.same_shape(target) || !rendered.same_size(mask) || mask.channels != 1) {
        throw InvalidParameter("color_loss: image dimensions differ");
    }
    std::size_t valid = 0;
    for (const double m : mask.data) {
        valid += m != 0.0 ? 1 : 0;
    }
    if (grad != nullptr) {
        *grad = Image(rendered.width, rendered.height, rendered.channels);
    }
    if (valid == 0) {
        return 0.0;
    }
    const double norm = 1.0 / (static_cast<double>(valid) * rendered.channels);
    double sum = 0.0;
    for (int y = 0; y < rendered.height; ++y) {
        for (int x = 0; x < rendered.width; ++x) {
            if (mask.at(x, y) == 0.0) {
                continue;
            }
            for (int c = 0; c < rendered.channels; ++c) {
                const double r = rendered.at(x, y, c) - target.at(x, y, c);
                sum += std::abs(r);
                if (grad != nullptr && r != 0.0) {
                    grad->at(x, y, c) = (r > 0.0 ? norm : -norm);
                }
            }
        }
    }
    return sum * norm;
}

double depth_loss(const Image& rendered, const Image& target, const Image& mask, Image* grad) {
    if (!rendered.same_shape(target) || !rendered.same_size(mask) || rendered.channels != 1 ||
        mask.channels != 1) {
        throw InvalidParameter("depth_loss: image dimensions differ");
    }
    if (grad != nullptr) {
        *grad = Image(rendered.width, rendered.height, 1);
    }
    auto is_valid = [&](std::size_t k) {
        return mask.data[k] != 0.0 && target.data[k] > 0.0 &&
               rendered.data[k] > kInverseDepthEpsilon;
    };
    std::size_t valid = 0;
    for (std::size_t k = 0; k < mask.data.size(); ++k) {
        valid += is_valid(k) ? 1 : 0;
    }
    if (valid == 0) {
        return 0.0;
    }
    const double norm = 1.0 / static_cast<double>(valid);
    double sum = 0.0;
    for (std::size_t k = 0; k < mask.data.size(); ++k) {
        if (!is_valid(k)) {
            continue;
        }
        const double inv = 1.0 / rendered.data[k];
        const double r = inv - 1.0 / target.data[k];
        sum += std::abs(r);
        if (grad != nullptr && r != 0.0) {
            grad->data[k] = (r > 0.0 ? norm : -norm) * (-inv * inv);
        }
    }
    return sum * norm;
}

void adam_update(std::span<double> params, std::span<const double> grads, std::span<double> m,
                 std::span<double> v, long step, double lr, const AdamHyper& hyper) {
    if (grads.size() != params.size() || m.size() != params.size() || v.size() != params.size()) {
        throw InvalidParameter("adam_update: state does not match parameter shape");
    }
    if (step < 1) {
        throw InvalidParameter("adam_update: step counts from 1");
    }
    const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(step));
    for (std::size_t k = 0; k < params.size(); ++k) {
        const double g = grads[k];
        m[k] = hyper.beta1 * m[k] + (1.0 - hyper.beta1) * g;
        v[k] = hyper.beta2 * v[k] + (1.0 - hyper.beta2) * g * g;
        const double m_hat = m[k] / bc1;
        const double v_hat = v[k] / bc2;
        params[k] -= lr * m_hat / (std::sqrt(v_hat) + hyper.epsilon);
    }
}

void CloudAdam::step(GaussianCloud& params, const GaussianCloud& grads,
                     const std::array<double, kParamGroupCount>& lr) {
    for (int gi = 0; gi < kParamGroupCount; ++gi) {
        const auto g = static_cast<ParamGroup>(gi);
        for (const double v : group_values(grads, g)) {
            if (!std::isfinite(v)) {
                throw NumericalError("adam: non-finite gradient in parameter group '" +
                                     std::string(group_name(g)) + "'");
            }
        }
    }
    ++step_;
    for (int gi = 0; gi < kParamGroupCount; ++gi) {
        const auto g = static_cast<ParamGroup>(gi);
        if (lr[static_cast<std::size_t>(gi)] == 0.0) {
            continue;
        }
        adam_update(group_values(params, g), group_values(grads, g), group_values(m_, g),
                    group_values(v_, g), step_, lr[static_cast<std::size_t>(gi)], hyper_);
    }
}

void CloudAdam::append_zero(std::size_t index) {
    for (GaussianCloud* s : {&m_, &v_}) {
        s->append_copy(index);
        const std::size_t last = s->size() - 1;
        s->positions[last].setZero();
        s->rotations[last].setZero();
        s->scales[last].setZero();
        s->opacities[last] = 0.0;
        const auto c = static_cast<std::size_t>(s->sh_per_gaussian());
        for (std::size_t k = 0; k < c; ++k) {
            s->sh[last * c + k].setZero();
        }
        const std::size_t stride = s->fdm.gaussian_stride();
        std::fill_n(s->fdm.weights.end() - static_cast<std::ptrdiff_t>(stride), stride, 0.0);
        std::fill_n(s->fdm.centers.end() - static_cast<std::ptrdiff_t>(stride), stride, 0.0);
        std::fill_n(s->fdm.widths.end() - static_cast<std::ptrdiff_t>(stride), stride, 0.0);
    }
}

void CloudAdam::retain(const std::vector<bool>& keep) {
    m_.retain(keep);
    v_.retain(keep);
}

void DensifyStats::reset(std::size_t n) {
    grad_sum.assign(n, 0.0);
    count.assign(n, 0);
}

void DensifyStats::accumulate(const RenderGradients& g, int width, int height) {
    (void)height;
    // Half-image scaling matches the normalized-device-coordinate convention of
    // the usual densification threshold.
    const double scale = 0.5 * static_cast<double>(std::max(width, height));
    for (std::size_t i = 0; i < g.visible.size() && i < grad_sum.size(); ++i) {
        if (g.visible[i]) {
            grad_sum[i] += g.mean2d_norm[i] * scale;
            ++count[i];
        }
    }
}

double scene_extent(std::span<const Vec3> points) {
    if (points.empty()) {
        return 0.0;
    }
    Vec3 c = Vec3::Zero();
    for (const auto& p : points) {
        c += p;
    }
    c /= static_cast<double>(points.size());
    double r = 0.0;
    for (const auto& p : points) {
        r = std::max(r, (p - c).norm());
    }
    return r;
}

bool densify_and_prune(GaussianCloud& cloud, CloudAdam& optimizer, DensifyStats& stats, int iter,
                       const TrainConfig& cfg, double extent, std::mt19937_64& rng) {
    if (iter < cfg.densify_freeze_iters || iter % cfg.densify_interval != 0) {
        return false;
    }
    const int until = cfg.densify_until_iter >= 0 ? cfg.densify_until_iter : cfg.iterations / 2;
    if (iter > until) {
        return false;
    }
    const std::size_t n = cloud.size();
    if (stats.grad_sum.size() != n) {
        stats.reset(n);
    }
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<bool> remove(n, false);
    bool changed = false;

    auto sample_offset = [&](std::size_t i) {
        const Vec3 s = cloud.scales[i].array().exp();
        const Vec3 z(normal(rng), normal(rng), normal(rng));
        return Vec3(quat_to_rotation(cloud.rotations[i]) * s.cwiseProduct(z));
    };
    auto add_child = [&](std::size_t parent, Vec3 position, Vec3 log_scale) {
        cloud.append_copy(parent);
        optimizer.append_zero(parent);
        cloud.positions.back() = position;
        cloud.scales.back() = log_scale;
        remove.push_back(false);
        changed = true;
    };

    for (std::size_t i = 0; i < n; ++i) {
        if (stats.count[i] == 0 || cloud.size() >= cfg.max_gaussians) {
            continue;
        }
        const double avg = stats.grad_sum[i] / stats.count[i];
        if (avg < cfg.grad_densify_threshold) {
            continue;
        }
        const double max_scale = std::exp(cloud.scales[i].maxCoeff());
        if (max_scale <= cfg.percent_dense * extent) {
            add_child(i, cloud.positions[i] + sample_offset(i), cloud.scales[i]);
        } else {
            const Vec3 child_scale = cloud.scales[i].array() - std::log(1.6);
            add_child(i, cloud.positions[i] + sample_offset(i), child_scale);
            add_child(i, cloud.positions[i] + sample_offset(i), child_scale);
            remove[i] = true;
        }
    }

    std::vector<bool> keep(cloud.size(), true);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        if (remove[i] || sigmoid(cloud.opacities[i]) < cfg.opacity_prune_threshold) {
            keep[i] = false;
            changed = true;
        }
    }
    if (changed) {
        cloud.retain(keep);
        optimizer.retain(keep);
    }
    stats.reset(cloud.size());
    return changed;
}

std::array<double, kParamGroupCount> learning_rates(const TrainConfig& cfg, double extent,
                                                     int iter) {
    const LrMultipliers& m = cfg.lr_multipliers;
    const double base = cfg.lr_initial;
    const double pos_init = base * m.position * std::max(extent, 1e-12);
    const double frac =
        cfg.iterations > 1 ? std::clamp(static_cast<double>(iter) / (cfg.iterations - 1), 0.0, 1.0)
                           : 0.0;
    const double pos = pos_init * std::exp(frac * std::log(cfg.position_final_ratio));
    return {pos,
            base * m.rotation,
            base * m.scale,
            base * m.opacity,
            base * m.color,
            base * m.deform_weight,
            base * m.deform_center,
            base * m.deform_width};
}

TrainResult train(GaussianCloud initial, std::span<const RGBDFrame> frames,
                  std::span<const CameraFrame> cams, const TrainConfig& cfg,
                  const TrainCallback& callback) {
    cfg.validate();
    if (frames.empty() || frames.size() != cams.size()) {
        throw InvalidParameter("train: empty training set or frame/camera count mismatch");
    }
    initial.check_consistent();

    TrainResult result;
    result.rng.seed(cfg.seed);
    result.cloud = std::move(initial);
    GaussianCloud& cloud = result.cloud;
    const double extent = scene_extent(cloud.positions);
    CloudAdam adam(cloud);
    DensifyStats stats;
    stats.reset(cloud.size());

    RasterSettings settings;
    settings.threads = cfg.threads;
    std::uniform_int_distribution<std::size_t> pick(0, frames.size() - 1);
    ForwardContext ctx;
    Image grad_color;
    Image grad_depth;

    for (int it = 0; it < cfg.iterations; ++it) {
        const std::size_t f = pick(result.rng);
        const RGBDFrame& frame = frames[f];
        const CameraFrame& cam = cams[f];

        const RenderOutput out = render(cloud, cam, cfg.background, settings, &ctx);
        LossReport loss;
        loss.color = color_loss(out.color, frame.color, frame.mask, &grad_color);
        loss.depth = depth_loss(out.depth, frame.depth, frame.mask, &grad_depth);
        loss.total = cfg.color_weight * loss.color + cfg.depth_weight * loss.depth;
        for (double& g : grad_color.data) {
            g *= cfg.color_weight;
        }
        for (double& g : grad_depth.data) {
            g *= cfg.depth_weight;
        }
        for (const double m : frame.mask.data) {
            loss.valid_pixels += m != 0.0 ? 1 : 0;
        }

        const RenderGradients grads =
            render_backward(cloud, cam, cfg.background, grad_color, grad_depth, settings, &ctx);
        stats.accumulate(grads, cam.width, cam.height);
        adam.step(cloud, grads.params, learning_rates(cfg, extent, it));
        densify_and_prune(cloud, adam, stats, it + 1, cfg, extent, result.rng);

        IterationRecord rec{it + 1, loss, cloud.size()};
        result.history.push_back(rec);
        if (callback) {
            callback(rec, cloud, result.rng);
        }
    }
    return result;
}

TrainResult train_scene(std::span<const RGBDFrame> frames, std::span<const CameraFrame> cams,
                        const TrainConfig& cfg, const TrainCallback& callback) {
    InitOptions init;
    init.tau = cfg.tau;
    init.motion_aware_fusion = cfg.motion_aware_fusion;
    init.seed.basis_count = cfg.basis_count;
    init.seed.basis_kind = cfg.basis_kind;
    init.seed.sh_degree = cfg.sh_degree;
    return train(initialize_cloud(frames, cams, init), frames, cams, cfg, callback);
}

} // namespace deformsplat
