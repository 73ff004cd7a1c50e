#pragma once

#include <cstdint>

#include "certsim/layers.hpp"
#include "certsim/metric.hpp"

namespace certsim {

enum class AttackNorm { l2, linf };
enum class AttackObjective { triplet_ce, embed_mse };

struct AttackConfig {
    AttackNorm norm = AttackNorm::l2;
    double epsilon = 1.0;
    size_t steps = 50;
    double step_size = 0.0; // <= 0 selects 2.5 * epsilon / steps
    AttackObjective objective = AttackObjective::triplet_ce;
    bool random_init = true;
    uint64_t seed = 0;

    void validate() const;
    double effective_step() const;
};

// Projects a perturbation onto the epsilon ball: radial rescale for l2,
// per-coordinate clamp for linf. epsilon must be positive.
Tensor project_ball(const Tensor& delta, AttackNorm norm, double epsilon);

struct AttackResult {
    Tensor delta;
    double best_loss = 0.0;
    double final_distance = 0.0; // d(x, x + delta) for embedding attacks
};

// PGD ascent on the triplet cross-entropy, perturbing the reference only.
// Every iterate is projected onto the budget ball and clamped so that
// x + delta stays in [0, 1]; the best iterate by loss is returned. A zero
// budget returns the zero perturbation.
AttackResult attack_triplet(const FeatureExtractor& f, const Triplet& t, const AttackConfig& cfg,
                            const Tensor* warm_start = nullptr);

// PGD ascent on the mean squared embedding displacement of a single image.
AttackResult attack_embedding(const FeatureExtractor& f, const Tensor& x, const AttackConfig& cfg,
                              const Tensor* warm_start = nullptr);

} // namespace certsim
