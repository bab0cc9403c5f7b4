#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace deformsplat {

/// Deformed attribute channels per Gaussian: 3 position, 4 rotation, 3 log-scale.
inline constexpr int kPositionChannels = 3;
inline constexpr int kRotationChannels = 4;
inline constexpr int kScaleChannels = 3;
inline constexpr int kDeformChannels = kPositionChannels + kRotationChannels + kScaleChannels;

inline constexpr int kPositionChannelOffset = 0;
inline constexpr int kRotationChannelOffset = kPositionChannels;
inline constexpr int kScaleChannelOffset = kPositionChannels + kRotationChannels;

/// Lower bound applied to basis widths before evaluation.
inline constexpr double kMinBasisWidth = 1e-3;

inline constexpr int kDefaultBasisCount = 17;

enum class BasisKind : std::uint32_t {
    LearnableGaussian = 0,
    FourierPolynomial = 1,
};

/// Fixed Fourier/polynomial basis used as the ablation baseline.
///
/// Slots [0, B - 2K) hold monomials t^0, t^1, ...; the remaining 2K slots hold
/// the pairs sin(2 pi k t), cos(2 pi k t) for k = 1..K with K = floor(B / 2).
class FourierPolyBasis {
public:
    enum class SlotType { Polynomial, Sine, Cosine };
    struct Slot {
        SlotType type;
        int order; // polynomial degree or frequency k
    };

    explicit FourierPolyBasis(int basis_count);

    int size() const { return static_cast<int>(slots_.size()); }
    const Slot& slot(int index) const { return slots_.at(static_cast<std::size_t>(index)); }
    double eval(double t, int index) const;

private:
    std::vector<Slot> slots_;
};

/// Per-Gaussian deformation parameters. Every Gaussian carries kDeformChannels
/// channels and each channel holds `basis_count` weights, centers and widths.
/// Flat layout: index(g, c, j) = (g * kDeformChannels + c) * basis_count + j.
///
/// For FourierPolynomial only the weights are used; centers and widths are
/// kept so the layout does not depend on the basis kind.
struct FdmParams {
    int basis_count = kDefaultBasisCount;
    BasisKind kind = BasisKind::LearnableGaussian;
    std::vector<double> weights;
    std::vector<double> centers;
    std::vector<double> widths; // raw; effective width is max(raw, kMinBasisWidth)

    std::size_t gaussian_count() const;
    std::size_t channel_stride() const { return static_cast<std::size_t>(basis_count); }
    std::size_t gaussian_stride() const {
        return static_cast<std::size_t>(basis_count) * kDeformChannels;
    }
    std::size_t offset(std::size_t gaussian, int channel) const {
        return (gaussian * kDeformChannels + static_cast<std::size_t>(channel)) *
               static_cast<std::size_t>(basis_count);
    }
};

/// Read-only view of one channel.
struct ChannelView {
    std::span<const double> weights;
    std::span<const double> centers;
    std::span<const double> widths;
};

/// Gradient sink for one channel; spans must have length B.
struct ChannelGrad {
    std::span<double> weights;
    std::span<double> centers;
    std::span<double> widths;
};

ChannelView channel(const FdmParams& params, std::size_t gaussian, int channel_index);
ChannelGrad channel_grad(FdmParams& grads, std::size_t gaussian, int channel_index);

double effective_width(double raw_width);

/// exp(-(t - center)^2 / (2 width^2)); width must already be floored.
double basis_eval(double t, double center, double width);

/// Weighted sum of Gaussian bases. Widths are floored internally.
double curve_eval(double t, const ChannelView& ch);

/// Curve value for either basis kind. `fourier` is required when kind is FourierPolynomial.
double curve_eval(double t, const ChannelView& ch, BasisKind kind, const FourierPolyBasis* fourier);

/// Accumulates upstream * d(curve)/d(params) into `grad`. Widths below the floor
/// receive no gradient. Centers/widths get nothing under FourierPolynomial.
void curve_backward(double t, const ChannelView& ch, BasisKind kind,
                    const FourierPolyBasis* fourier, double upstream, const ChannelGrad& grad);

/// Parameters for `gaussian_count` Gaussians: centers at (j + 0.5) / B for j = 0..B-1, widths 1 / B,
/// weights zero. The seed is accepted for API stability; initialization is deterministic.
FdmParams init_fdm(std::size_t gaussian_count, int basis_count,
                   BasisKind kind = BasisKind::LearnableGaussian, std::uint64_t rng_seed = 0);

} // namespace deformsplat
