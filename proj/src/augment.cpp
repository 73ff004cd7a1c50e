#include "certsim/augment.hpp"

#include <cmath>

#include "certsim/errors.hpp"

namespace certsim {

void AugmentationConfig::validate() const {
    if (flip_prob < 0.0 || flip_prob > 1.0) {
        throw ConfigError("flip_prob must lie in [0, 1]");
    }
    for (const auto& range : {brightness, contrast, saturation}) {
        if (!(range[0] > 0.0) || range[0] > range[1]) {
            throw ConfigError("jitter ranges must be positive with lo <= hi");
        }
    }
    if (hue_shift < 0.0) throw ConfigError("hue_shift must be non-negative");
}

Tensor jitter(const Tensor& img, const AugmentationConfig& cfg, Rng& rng) {
    cfg.validate();
    if (img.ndim() != 3 || img.shape()[0] != 3) {
        throw DimensionError("jitter expects a [3 x s x s] image, got " + format_shape(img.shape()));
    }
    const size_t s = img.shape()[1];
    const size_t plane = s * img.shape()[2];
    Tensor out = img;

    if (rng.uniform() < cfg.flip_prob) {
        const size_t cols = img.shape()[2];
        for (size_t c = 0; c < 3; ++c) {
            double* p = out.ptr() + c * plane;
            for (size_t r = 0; r < s; ++r) {
                double* row = p + r * cols;
                for (size_t j = 0; j < cols / 2; ++j) std::swap(row[j], row[cols - 1 - j]);
            }
        }
    }

    const double beta = rng.uniform(cfg.brightness[0], cfg.brightness[1]);
    for (double& v : out.data()) v *= beta;

    const double gamma = rng.uniform(cfg.contrast[0], cfg.contrast[1]);
    if (gamma != 1.0) {
        double mean = 0.0;
        for (double v : out.data()) mean += v;
        mean /= static_cast<double>(out.size());
        for (double& v : out.data()) v = mean + gamma * (v - mean);
    }

    const double sat = rng.uniform(cfg.saturation[0], cfg.saturation[1]);
    if (sat != 1.0) {
        for (size_t i = 0; i < plane; ++i) {
            const double gray = (out[i] + out[plane + i] + out[2 * plane + i]) / 3.0;
            out[i] = gray + sat * (out[i] - gray);
            out[plane + i] = gray + sat * (out[plane + i] - gray);
            out[2 * plane + i] = gray + sat * (out[2 * plane + i] - gray);
        }
    }

    const double theta = rng.uniform(-cfg.hue_shift, cfg.hue_shift);
    if (theta != 0.0) {
        // Orthonormal opponent basis: luma (r+g+b)/sqrt3 stays fixed while the
        // two chroma coordinates rotate.
        const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
        const double inv_sqrt6 = 1.0 / std::sqrt(6.0);
        const double ct = std::cos(theta), st = std::sin(theta);
        for (size_t i = 0; i < plane; ++i) {
            const double r = out[i], g = out[plane + i], b = out[2 * plane + i];
            const double o1 = (r - g) * inv_sqrt2;
            const double o2 = (r + g - 2.0 * b) * inv_sqrt6;
            const double n1 = ct * o1 - st * o2;
            const double n2 = st * o1 + ct * o2;
            const double d1 = n1 - o1, d2 = n2 - o2;
            out[i] = r + d1 * inv_sqrt2 + d2 * inv_sqrt6;
            out[plane + i] = g - d1 * inv_sqrt2 + d2 * inv_sqrt6;
            out[2 * plane + i] = b - 2.0 * d2 * inv_sqrt6;
        }
    }

    for (double& v : out.data()) v = std::min(1.0, std::max(0.0, v));
    return out;
}

} // namespace certsim
