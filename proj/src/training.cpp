#include "certsim/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "certsim/errors.hpp"
#include "certsim/rng.hpp"

namespace certsim {

namespace {

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

ad::Var rmse(const ad::Var& u, const ad::Var& v) {
    ad::Var diff = ad::sub(u, v);
    return ad::sqrt(ad::mean(ad::mul(diff, diff)));
}

ad::Var hinge_graph(const ad::Var& margin, double m) {
    return ad::relu(ad::add_scalar(ad::neg(margin), m));
}

} // namespace

Optimizer::Optimizer(OptimizerKind kind, double learning_rate, FeatureExtractor& model)
    : kind_(kind), lr_(learning_rate), model_(&model), params_(model.parameters()) {
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (kind_ == OptimizerKind::adam) {
        m_.resize(params_.size());
        v_.resize(params_.size());
        for (size_t i = 0; i < params_.size(); ++i) {
            m_[i].assign(params_[i]->size(), 0.0);
            v_[i].assign(params_[i]->size(), 0.0);
        }
    }
}

void Optimizer::step(const std::vector<Tensor>& grads) {
    if (grads.size() != params_.size()) {
        throw ConfigError("gradient list does not match parameter list");
    }
    ++t_;
    for (size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = *params_[i];
        const Tensor& g = grads[i];
        if (g.size() != p.size()) {
            throw DimensionError("gradient shape " + format_shape(g.shape()) +
                                 " does not match parameter " + format_shape(p.shape()));
        }
        if (kind_ == OptimizerKind::sgd) {
            for (size_t j = 0; j < p.size(); ++j) p[j] -= lr_ * g[j];
        } else {
            const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(t_));
            const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(t_));
            auto& m = m_[i];
            auto& v = v_[i];
            for (size_t j = 0; j < p.size(); ++j) {
                m[j] = kAdamBeta1 * m[j] + (1.0 - kAdamBeta1) * g[j];
                v[j] = kAdamBeta2 * v[j] + (1.0 - kAdamBeta2) * g[j] * g[j];
                const double mhat = m[j] / bc1;
                const double vhat = v[j] / bc2;
                p[j] -= lr_ * mhat / (std::sqrt(vhat) + kAdamEps);
            }
        }
        if (!p.all_finite()) {
            throw NumericError("parameter became non-finite after optimizer step " + std::to_string(t_));
        }
    }
    model_->invalidate_caches();
}

std::vector<Tensor> collect_gradients(const FeatureExtractor& model, const ExtractorVars& vars) {
    std::vector<Tensor> grads;
    const auto params = model.parameters();
    size_t pi = 0;
    for (const auto& layer_vars : vars.per_layer) {
        for (const auto& v : layer_vars) {
            if (v.node()->grad_ready) {
                grads.push_back(v.node()->grad);
            } else {
                grads.push_back(Tensor::zeros_like(*params[pi]));
            }
            ++pi;
        }
    }
    return grads;
}

double distill_step(FeatureExtractor& student, const Tensor& teacher_embed, const Tensor& x_std,
                    const Tensor& x_jit, double jitter_weight, JitterTarget target, Optimizer& opt) {
    if (student.project) {
        throw ConfigError("distillation runs without the unit-ball projection; disable it first");
    }
    if (teacher_embed.size() != student.embed_dim) {
        throw ConfigError("teacher embedding dimension " + std::to_string(teacher_embed.size()) +
                          " does not match student embed_dim " + std::to_string(student.embed_dim));
    }
    TrainGraph graph = student.make_train_graph();
    ad::Var e_std = student.extract_train(graph, ad::Var::constant(x_std)).embedding;
    ad::Var loss = rmse(e_std, ad::Var::constant(teacher_embed));
    if (jitter_weight > 0.0) {
        ad::Var e_jit = student.extract_train(graph, ad::Var::constant(x_jit)).embedding;
        ad::Var jit_target = target == JitterTarget::student_standard
                                 ? e_std
                                 : ad::Var::constant(teacher_embed);
        loss = ad::add(loss, ad::scale(rmse(e_jit, jit_target), jitter_weight));
    }
    const double loss_value = loss.value()[0];
    if (!std::isfinite(loss_value)) throw NumericError("distillation loss is not finite");
    loss.backward();
    opt.step(collect_gradients(student, graph.vars));
    return loss_value;
}

double finetune_step(FeatureExtractor& student, std::span<const Triplet> batch, double hinge_margin,
                     Optimizer& opt) {
    if (batch.empty()) throw ConfigError("fine-tuning batch is empty");
    if (!(hinge_margin > 0.0)) throw ConfigError("hinge margin parameter must be positive");
    TrainGraph graph = student.make_train_graph();
    ad::Var total;
    for (const Triplet& t : batch) {
        validate_triplet(t);
        ad::Var ex = student.extract_train(graph, ad::Var::constant(t.x)).embedding;
        ad::Var e0 = student.extract_train(graph, ad::Var::constant(t.x0)).embedding;
        ad::Var e1 = student.extract_train(graph, ad::Var::constant(t.x1)).embedding;
        ad::Var h = hinge_graph(margin_graph(ex, e0, e1, t.y), hinge_margin);
        total = total.defined() ? ad::add(total, h) : h;
    }
    ad::Var loss = ad::scale(total, 1.0 / static_cast<double>(batch.size()));
    const double loss_value = loss.value()[0];
    if (!std::isfinite(loss_value)) throw NumericError("fine-tuning loss is not finite");
    loss.backward();
    opt.step(collect_gradients(student, graph.vars));
    return loss_value;
}

namespace {

double validation_natural(const FeatureExtractor& f, const std::vector<LoadedTriplet>& val) {
    if (val.empty()) return -1.0;
    size_t hits = 0;
    for (const auto& lt : val) {
        if (classify(f, lt.t).decision == lt.t.y) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(val.size());
}

std::vector<size_t> shuffled_indices(size_t n, Rng& rng) {
    std::vector<size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    for (size_t i = n; i > 1; --i) {
        std::swap(idx[i - 1], idx[rng.index(i)]);
    }
    return idx;
}

} // namespace

void distill(FeatureExtractor& student, const std::vector<LoadedTriplet>& data,
             const EmbeddingStore& teacher, const TrainConfig& cfg, const AugmentationConfig& aug,
             const std::vector<LoadedTriplet>* val, const LogSink& log) {
    cfg.validate();
    aug.validate();
    if (data.empty()) throw ConfigError("distillation dataset is empty");
    check_teacher_coverage(teacher, data);
    if (teacher.dim() != student.embed_dim) {
        throw ConfigError("teacher embedding dimension " + std::to_string(teacher.dim()) +
                          " does not match student embed_dim " + std::to_string(student.embed_dim));
    }

    Optimizer opt(cfg.optimizer, cfg.learning_rate, student);
    const Rng base = Rng(cfg.seed).fork("distill").fork(aug.seed);

    for (size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng = base.fork("shuffle").fork(epoch);
        const auto order = shuffled_indices(data.size(), shuffle_rng);
        double loss_sum = 0.0;
        size_t batches = 0;
        for (size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
            const size_t end = std::min(order.size(), begin + cfg.batch_size);
            TrainGraph graph = student.make_train_graph();
            ad::Var total;
            for (size_t bi = begin; bi < end; ++bi) {
                const LoadedTriplet& lt = data[order[bi]];
                Rng sample_rng = base.fork(hash64(lt.id)).fork(epoch);
                const Tensor x_jit = jitter(lt.t.x, aug, sample_rng);
                const Tensor target = teacher.embedding(lt.id);
                ad::Var e_std = student.extract_train(graph, ad::Var::constant(lt.t.x)).embedding;
                ad::Var loss = rmse(e_std, ad::Var::constant(target));
                if (cfg.jitter_weight > 0.0) {
                    ad::Var e_jit = student.extract_train(graph, ad::Var::constant(x_jit)).embedding;
                    ad::Var jt = cfg.jitter_target == JitterTarget::student_standard
                                     ? e_std
                                     : ad::Var::constant(target);
                    loss = ad::add(loss, ad::scale(rmse(e_jit, jt), cfg.jitter_weight));
                }
                total = total.defined() ? ad::add(total, loss) : loss;
            }
            ad::Var batch_loss = ad::scale(total, 1.0 / static_cast<double>(end - begin));
            const double lv = batch_loss.value()[0];
            if (!std::isfinite(lv)) throw NumericError("distillation loss is not finite");
            batch_loss.backward();
            opt.step(collect_gradients(student, graph.vars));
            loss_sum += lv;
            ++batches;
        }
        if (log) {
            EpochLog entry;
            entry.phase = "distill";
            entry.epoch = epoch;
            entry.loss = batches ? loss_sum / static_cast<double>(batches) : 0.0;
            entry.val_natural = val ? validation_natural(student, *val) : -1.0;
            log(entry);
        }
    }
    student.ensure_caches();
}

void finetune(FeatureExtractor& student, const std::vector<LoadedTriplet>& data,
              const TrainConfig& cfg, const std::vector<LoadedTriplet>* val, const LogSink& log) {
    cfg.validate();
    if (data.empty()) throw ConfigError("fine-tuning dataset is empty");

    Optimizer opt(cfg.optimizer, cfg.learning_rate, student);
    const Rng base = Rng(cfg.seed).fork("finetune");

    for (size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng = base.fork("shuffle").fork(epoch);
        const auto order = shuffled_indices(data.size(), shuffle_rng);
        double loss_sum = 0.0;
        size_t batches = 0;
        for (size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
            const size_t end = std::min(order.size(), begin + cfg.batch_size);
            std::vector<Triplet> batch;
            batch.reserve(end - begin);
            for (size_t bi = begin; bi < end; ++bi) batch.push_back(data[order[bi]].t);
            loss_sum += finetune_step(student, batch, cfg.hinge_margin, opt);
            ++batches;
        }
        if (log) {
            EpochLog entry;
            entry.phase = "finetune";
            entry.epoch = epoch;
            entry.loss = batches ? loss_sum / static_cast<double>(batches) : 0.0;
            entry.val_natural = val ? validation_natural(student, *val) : -1.0;
            log(entry);
        }
    }
    student.ensure_caches();
}

FeatureExtractor train(FeatureExtractor student, const std::vector<LoadedTriplet>& data,
                       const EmbeddingStore& teacher, const TrainConfig& distill_cfg,
                       const TrainConfig& finetune_cfg, const AugmentationConfig& aug,
                       const std::vector<LoadedTriplet>* val, const LogSink& log) {
    student.project = false;
    distill(student, data, teacher, distill_cfg, aug, val, log);
    student.project = true;
    finetune(student, data, finetune_cfg, val, log);
    return student;
}

} // namespace certsim
