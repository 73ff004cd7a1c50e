#pragma once

#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "certsim/config.hpp"
#include "certsim/data_io.hpp"
#include "certsim/layers.hpp"
#include "certsim/metric.hpp"

namespace certsim {

// Plain SGD or Adam(0.9, 0.999, 1e-8) over the extractor's parameter list.
class Optimizer {
public:
    Optimizer(OptimizerKind kind, double learning_rate, FeatureExtractor& model);

    // Applies one update from the given per-parameter gradients (parallel to
    // FeatureExtractor::parameters()), then refreshes the model caches and
    // asserts parameters stayed finite.
    void step(const std::vector<Tensor>& grads);

    FeatureExtractor& model() { return *model_; }

private:
    OptimizerKind kind_;
    double lr_;
    FeatureExtractor* model_;
    std::vector<Tensor*> params_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    size_t t_ = 0;
};

// Collects leaf gradients after backward(); missing gradients read as zero.
std::vector<Tensor> collect_gradients(const FeatureExtractor& model, const ExtractorVars& vars);

// One distillation update: loss = RMSE(student(x_std), teacher) +
// jitter_weight * RMSE(student(x_jit), target), where the target is the
// standard-stream student embedding or (config switch) the teacher vector.
// The student must run without projection here.
double distill_step(FeatureExtractor& student, const Tensor& teacher_embed, const Tensor& x_std,
                    const Tensor& x_jit, double jitter_weight, JitterTarget target, Optimizer& opt);

// One fine-tuning update on the mean hinge loss of a triplet batch; the
// student runs with projection.
double finetune_step(FeatureExtractor& student, std::span<const Triplet> batch, double hinge_margin,
                     Optimizer& opt);

struct EpochLog {
    std::string phase;
    size_t epoch = 0;
    double loss = 0.0;
    double val_natural = -1.0; // -1 when no validation split given
};

using LogSink = std::function<void(const EpochLog&)>;

// Full distillation phase over the dataset's reference images.
void distill(FeatureExtractor& student, const std::vector<LoadedTriplet>& data,
             const EmbeddingStore& teacher, const TrainConfig& cfg, const AugmentationConfig& aug,
             const std::vector<LoadedTriplet>* val, const LogSink& log);

// Full fine-tuning phase on 2AFC triplets.
void finetune(FeatureExtractor& student, const std::vector<LoadedTriplet>& data,
              const TrainConfig& cfg, const std::vector<LoadedTriplet>* val, const LogSink& log);

// The two-step pipeline: distillation (projection off), then hinge
// fine-tuning (projection on). Returns the trained extractor.
FeatureExtractor train(FeatureExtractor student, const std::vector<LoadedTriplet>& data,
                       const EmbeddingStore& teacher, const TrainConfig& distill_cfg,
                       const TrainConfig& finetune_cfg, const AugmentationConfig& aug,
                       const std::vector<LoadedTriplet>* val, const LogSink& log);

} // namespace certsim
