#include "deformsplat/fdm.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "deformsplat/errors.hpp"

namespace deformsplat {

FourierPolyBasis::FourierPolyBasis(int basis_count) {
    if (basis_count < 1) {
        throw InvalidParameter("FourierPolyBasis: basis count must be >= 1");
    }
    const int frequencies = basis_count / 2;
    const int poly = basis_count - 2 * frequencies;
    for (int d = 0; d < poly; ++d) {
        slots_.push_back({SlotType::Polynomial, d});
    }
    for (int k = 1; k <= frequencies; ++k) {
        slots_.push_back({SlotType::Sine, k});
        slots_.push_back({SlotType::Cosine, k});
    }
}

double FourierPolyBasis::eval(double t, int index) const {
    const Slot& s = slot(index);
    switch (s.type) {
    case SlotType::Polynomial:
        return std::pow(t, s.order);
    case SlotType::Sine:
        return std::sin(2.0 * std::numbers::pi * s.order * t);
    case SlotType::Cosine:
        return std::cos(2.0 * std::numbers::pi * s.order * t);
    }
    return 0.0;
}

std::size_t FdmParams::gaussian_count() const {
    const std::size_t stride = gaussian_stride();
    return stride == 0 ? 0 : weights.size() / stride;
}

ChannelView channel(const FdmParams& params, std::size_t gaussian, int channel_index) {
    const std::size_t off = params.offset(gaussian, channel_index);
    const std::size_t b = params.channel_stride();
    return {std::span<const double>(params.weights).subspan(off, b),
            std::span<const double>(params.centers).subspan(off, b),
            std::span<const double>(params.widths).subspan(off, b)};
}

ChannelGrad channel_grad(FdmParams& grads, std::size_t gaussian, int channel_index) {
    const std::size_t off = grads.offset(gaussian, channel_index);
    const std::size_t b = grads.channel_stride();
    return {std::span<double>(grads.weights).subspan(off, b),
            std::span<double>(grads.centers).subspan(off, b),
            std::span<double>(grads.widths).subspan(off, b)};
}

double effective_width(double raw_width) { return std::max(raw_width, kMinBasisWidth); }

double basis_eval(double t, double center, double width) {
    const double d = t - center;
    return std::exp(-(d * d) / (2.0 * width * width));
}

double curve_eval(double t, const ChannelView& ch) {
    double sum = 0.0;
    for (std::size_t j = 0; j < ch.weights.size(); ++j) {
        if (ch.weights[j] == 0.0) {
            continue;
        }
        sum += ch.weights[j] * basis_eval(t, ch.centers[j], effective_width(ch.widths[j]));
    }
    return sum;
}

double curve_eval(double t, const ChannelView& ch, BasisKind kind, const FourierPolyBasis* fourier) {
    if (kind == BasisKind::LearnableGaussian) {
        return curve_eval(t, ch);
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < ch.weights.size(); ++j) {
        sum += ch.weights[j] * fourier->eval(t, static_cast<int>(j));
    }
    return sum;
}

void curve_backward(double t, const ChannelView& ch, BasisKind kind,
                    const FourierPolyBasis* fourier, double upstream, const ChannelGrad& grad) {
    if (upstream == 0.0) {
        return;
    }
    const std::size_t b = ch.weights.size();
    if (kind == BasisKind::FourierPolynomial) {
        for (std::size_t j = 0; j < b; ++j) {
            grad.weights[j] += upstream * fourier->eval(t, static_cast<int>(j));
        }
        return;
    }
    for (std::size_t j = 0; j < b; ++j) {
        const double raw = ch.widths[j];
        const double sigma = effective_width(raw);
        const double d = t - ch.centers[j];
        const double basis = basis_eval(t, ch.centers[j], sigma);
        grad.weights[j] += upstream * basis;
        const double wb = upstream * ch.weights[j] * basis;
        if (wb == 0.0) {
            continue;
        }
        grad.centers[j] += wb * d / (sigma * sigma);
        if (raw > kMinBasisWidth) {
            grad.widths[j] += wb * d * d / (sigma * sigma * sigma);
        }
    }
}

FdmParams init_fdm(std::size_t gaussian_count, int basis_count, BasisKind kind,
                   std::uint64_t /*rng_seed*/) {
    if (basis_count < 1) {
        throw InvalidParameter("init_fdm: basis count must be >= 1");
    }
    FdmParams p;
    p.basis_count = basis_count;
    p.kind = kind;
    const std::size_t total = gaussian_count * p.gaussian_stride();
    p.weights.assign(total, 0.0);
    p.centers.resize(total);
    p.widths.assign(total, 1.0 / basis_count);
    for (std::size_t i = 0; i < total; ++i) {
        const auto j = static_cast<double>(i % p.channel_stride());
        p.centers[i] = (j + 0.5) / basis_count;
    }
    return p;
}

} // namespace deformsplat
