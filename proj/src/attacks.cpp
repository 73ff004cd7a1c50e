#include "certsim/attacks.hpp"

#include <cmath>
#include <functional>
#include <limits>

#include "certsim/errors.hpp"
#include "certsim/rng.hpp"

namespace certsim {

void AttackConfig::validate() const {
    if (epsilon < 0.0) throw ConfigError("attack epsilon must be non-negative");
    if (steps == 0) throw ConfigError("attack needs at least one step");
    if (step_size < 0.0) throw ConfigError("attack step_size must be positive when given");
}

double AttackConfig::effective_step() const {
    return step_size > 0.0 ? step_size : 2.5 * epsilon / static_cast<double>(steps);
}

Tensor project_ball(const Tensor& delta, AttackNorm norm, double epsilon) {
    if (!(epsilon > 0.0)) throw ConfigError("project_ball requires epsilon > 0");
    Tensor out = delta;
    if (norm == AttackNorm::l2) {
        const double n = l2_norm(out);
        if (n > epsilon) {
            const double s = epsilon / n;
            for (double& v : out.data()) v *= s;
        }
    } else {
        for (double& v : out.data()) v = std::min(epsilon, std::max(-epsilon, v));
    }
    return out;
}

namespace {

Tensor clamp_to_box(const Tensor& x, const Tensor& delta) {
    // Keeps x + delta inside [0,1]; coordinatewise shrink, so neither norm
    // budget can grow.
    Tensor out = delta;
    for (size_t i = 0; i < out.size(); ++i) {
        const double lo = -x[i];
        const double hi = 1.0 - x[i];
        out[i] = std::min(hi, std::max(lo, out[i]));
    }
    return out;
}

Tensor random_in_ball(const Tensor& like, AttackNorm norm, double epsilon, Rng& rng) {
    Tensor delta = Tensor::zeros_like(like);
    if (norm == AttackNorm::linf) {
        for (double& v : delta.data()) v = rng.uniform(-epsilon, epsilon);
    } else {
        for (double& v : delta.data()) v = rng.normal();
        const double n = l2_norm(delta);
        if (n > 0.0) {
            const double r = epsilon * std::pow(rng.uniform(), 1.0 / static_cast<double>(delta.size()));
            for (double& v : delta.data()) v *= r / n;
        }
    }
    return delta;
}

using LossBuilder = std::function<ad::Var(const ad::Var& x_pert)>;

// d(x, x + delta), or NaN when an embedding is degenerate (the objective is
// still well defined there, only the cosine report is not).
double safe_distance(const FeatureExtractor& f, const Tensor& a, const Tensor& b) {
    const Tensor ea = f.extract(a).embedding;
    const Tensor eb = f.extract(b).embedding;
    if (l2_norm(ea) < kEmbedNormFloor || l2_norm(eb) < kEmbedNormFloor) {
        return std::numeric_limits<double>::quiet_NaN();
    }
    return cosine_distance(ea, eb);
}

AttackResult pgd(const FeatureExtractor& f, const Tensor& x, const AttackConfig& cfg,
                 const LossBuilder& loss_fn, const Tensor* warm_start) {
    cfg.validate();
    f.ensure_caches();

    AttackResult best;
    best.delta = Tensor::zeros_like(x);
    best.best_loss = -std::numeric_limits<double>::infinity();

    if (cfg.epsilon == 0.0) {
        const double l0 = loss_fn(ad::Var::constant(x)).value()[0];
        best.best_loss = l0;
        return best;
    }

    Tensor delta = Tensor::zeros_like(x);
    if (warm_start != nullptr) {
        delta = clamp_to_box(x, project_ball(*warm_start, cfg.norm, cfg.epsilon));
    } else if (cfg.random_init) {
        Rng rng = Rng(cfg.seed).fork("pgd-init");
        delta = clamp_to_box(x, random_in_ball(x, cfg.norm, cfg.epsilon, rng));
    }

    const double alpha = cfg.effective_step();
    for (size_t iter = 0;; ++iter) {
        ad::Var xp = ad::Var::leaf(add(x, delta));
        ad::Var loss = loss_fn(xp);
        const double lv = loss.value()[0];
        if (!std::isfinite(lv)) {
            throw NumericError("attack aborted: loss is not finite at iterate " + std::to_string(iter));
        }
        if (lv > best.best_loss) {
            best.best_loss = lv;
            best.delta = delta;
        }
        if (iter == cfg.steps) break;

        loss.backward();
        Tensor g = xp.node()->grad_ready ? xp.grad() : Tensor::zeros_like(x);
        if (cfg.norm == AttackNorm::l2) {
            const double gn = l2_norm(g);
            const double s = gn > 1e-20 ? alpha / gn : 0.0;
            for (size_t i = 0; i < delta.size(); ++i) delta[i] += s * g[i];
        } else {
            for (size_t i = 0; i < delta.size(); ++i) {
                const double sg = g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0);
                delta[i] += alpha * sg;
            }
        }
        delta = clamp_to_box(x, project_ball(delta, cfg.norm, cfg.epsilon));
    }
    return best;
}

} // namespace

AttackResult attack_triplet(const FeatureExtractor& f, const Triplet& t, const AttackConfig& cfg,
                            const Tensor* warm_start) {
    if (cfg.objective != AttackObjective::triplet_ce) {
        throw ConfigError("attack_triplet requires the triplet_ce objective");
    }
    validate_triplet(t);
    const Tensor e0 = f.extract(t.x0).embedding;
    const Tensor e1 = f.extract(t.x1).embedding;

    auto loss_fn = [&f, &t, &e0, &e1](const ad::Var& xp) {
        ad::Var ex = f.extract_graph(xp).embedding;
        ad::Var h0 = cosine_distance(ex, ad::Var::constant(e1)); // logit for class 0
        ad::Var h1 = cosine_distance(ex, ad::Var::constant(e0)); // logit for class 1
        // Cross entropy of softmax([h0, h1]) against the true label.
        ad::Var lse = ad::log(ad::add(ad::exp(h0), ad::exp(h1)));
        return ad::sub(lse, t.y == 1 ? h1 : h0);
    };
    AttackResult res = pgd(f, t.x, cfg, loss_fn, warm_start);
    res.final_distance = safe_distance(f, t.x, add(t.x, res.delta));
    return res;
}

AttackResult attack_embedding(const FeatureExtractor& f, const Tensor& x, const AttackConfig& cfg,
                              const Tensor* warm_start) {
    if (cfg.objective != AttackObjective::embed_mse) {
        throw ConfigError("attack_embedding requires the embed_mse objective");
    }
    const Tensor ex = f.extract(x).embedding;
    auto loss_fn = [&f, &ex](const ad::Var& xp) {
        ad::Var ep = f.extract_graph(xp).embedding;
        ad::Var diff = ad::sub(ep, ad::Var::constant(ex));
        return ad::mean(ad::mul(diff, diff));
    };
    AttackResult res = pgd(f, x, cfg, loss_fn, warm_start);
    res.final_distance = safe_distance(f, x, add(x, res.delta));
    return res;
}

} // namespace certsim
