#pragma once

#include <vector>

#include "deformsplat/core_model.hpp"

namespace deformsplat {

/// Raw attributes of every Gaussian at one timestamp. Offsets are added to the
/// stored (pre-activation) values: rotations before normalization, scales in log space.
struct DeformedAttributes {
    std::vector<Vec3> positions;
    std::vector<Vec4> rotations;
    std::vector<Vec3> scales;
};

DeformedAttributes deform_cloud(const GaussianCloud& cloud, double t);

/// Chains gradients w.r.t. the deformed attributes back onto the canonical
/// attributes and deformation parameters of `grad` (accumulating).
void deform_backward(const GaussianCloud& cloud, double t, const DeformedAttributes& upstream,
                     GaussianCloud& grad);

} // namespace deformsplat
