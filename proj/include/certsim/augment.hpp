#pragma once

#include <array>

#include "certsim/rng.hpp"
#include "certsim/tensor.hpp"

namespace certsim {

// Color-jitter pipeline used on the distillation side stream: optional
// horizontal flip, brightness scale, contrast about the image mean,
// saturation toward per-pixel gray, hue rotation in the opponent-color
// plane, then a clamp back to [0, 1].
struct AugmentationConfig {
    double flip_prob = 0.5;
    std::array<double, 2> brightness{0.75, 1.25};
    std::array<double, 2> contrast{0.75, 1.25};
    std::array<double, 2> saturation{0.6, 1.4};
    double hue_shift = 0.35; // max rotation angle, radians
    uint64_t seed = 0;

    void validate() const;
};

Tensor jitter(const Tensor& img, const AugmentationConfig& cfg, Rng& rng);

} // namespace certsim
