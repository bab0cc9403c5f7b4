#include "deformsplat/deform.hpp"

#include <cmath>
#include <optional>

#include "deformsplat/errors.hpp"

namespace deformsplat {

namespace {

std::optional<FourierPolyBasis> make_fourier(const FdmParams& fdm) {
    if (fdm.kind == BasisKind::FourierPolynomial) {
        return FourierPolyBasis(fdm.basis_count);
    }
    return std::nullopt;
}

} // namespace

DeformedAttributes deform_cloud(const GaussianCloud& cloud, double t) {
    if (!std::isfinite(t)) {
        throw InvalidParameter("deform_cloud: time must be finite");
    }
    cloud.check_consistent();
    const auto fourier = make_fourier(cloud.fdm);
    const FourierPolyBasis* basis = fourier ? &*fourier : nullptr;
    const auto kind = cloud.fdm.kind;

    DeformedAttributes out{cloud.positions, cloud.rotations, cloud.scales};
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        for (int c = 0; c < kPositionChannels; ++c) {
            out.positions[i][c] +=
                curve_eval(t, channel(cloud.fdm, i, kPositionChannelOffset + c), kind, basis);
        }
        for (int c = 0; c < kRotationChannels; ++c) {
            out.rotations[i][c] +=
                curve_eval(t, channel(cloud.fdm, i, kRotationChannelOffset + c), kind, basis);
        }
        for (int c = 0; c < kScaleChannels; ++c) {
            out.scales[i][c] +=
                curve_eval(t, channel(cloud.fdm, i, kScaleChannelOffset + c), kind, basis);
        }
    }
    return out;
}

void deform_backward(const GaussianCloud& cloud, double t, const DeformedAttributes& upstream,
                     GaussianCloud& grad) {
    const auto fourier = make_fourier(cloud.fdm);
    const FourierPolyBasis* basis = fourier ? &*fourier : nullptr;
    const auto kind = cloud.fdm.kind;

    for (std::size_t i = 0; i < cloud.size(); ++i) {
        grad.positions[i] += upstream.positions[i];
        grad.rotations[i] += upstream.rotations[i];
        grad.scales[i] += upstream.scales[i];
        for (int c = 0; c < kPositionChannels; ++c) {
            const int ch = kPositionChannelOffset + c;
            curve_backward(t, channel(cloud.fdm, i, ch), kind, basis, upstream.positions[i][c],
                           channel_grad(grad.fdm, i, ch));
        }
        for (int c = 0; c < kRotationChannels; ++c) {
            const int ch = kRotationChannelOffset + c;
            curve_backward(t, channel(cloud.fdm, i, ch), kind, basis, upstream.rotations[i][c],
                           channel_grad(grad.fdm, i, ch));
        }
        for (int c = 0; c < kScaleChannels; ++c) {
            const int ch = kScaleChannelOffset + c;
            curve_backward(t, channel(cloud.fdm, i, ch), kind, basis, upstream.scales[i][c],
                           channel_grad(grad.fdm, i, ch));
        }
    }
}

} // namespace deformsplat
