#pragma once

#include <cstdint>
#include <string>

#include "certsim/augment.hpp"

namespace certsim {

enum class OptimizerKind { sgd, adam };
enum class JitterTarget { student_standard, teacher };

struct TrainConfig {
    OptimizerKind optimizer = OptimizerKind::adam;
    double learning_rate = 1e-3;
    size_t batch_size = 16;
    size_t epochs = 10;
    double hinge_margin = 0.5;
    double jitter_weight = 1.0;
    JitterTarget jitter_target = JitterTarget::student_standard;
    uint64_t seed = 0;

    void validate() const;
};

struct RunConfig {
    TrainConfig train;
    AugmentationConfig augment;
};

// Flat `key = value` file. Lines starting with '#' and blank lines are
// skipped; unknown keys are rejected.
RunConfig parse_config_text(const std::string& text);
RunConfig load_config(const std::string& path);

} // namespace certsim
