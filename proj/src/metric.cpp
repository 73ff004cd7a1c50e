#include "certsim/metric.hpp"

#include <algorithm>
#include <cmath>

#include "certsim/errors.hpp"

namespace certsim {

void validate_triplet(const Triplet& t) {
    if (!t.x.same_shape(t.x0) || !t.x.same_shape(t.x1)) {
        throw DimensionError("triplet tensors must share one shape: x " + format_shape(t.x.shape()) +
                             ", x0 " + format_shape(t.x0.shape()) + ", x1 " + format_shape(t.x1.shape()));
    }
    if (t.y != 0 && t.y != 1) {
        throw DataError("triplet label must be 0 or 1, got " + std::to_string(t.y));
    }
}

double cosine_distance(const Tensor& ea, const Tensor& eb) {
    const double na = l2_norm(ea);
    const double nb = l2_norm(eb);
    if (na < kEmbedNormFloor || nb < kEmbedNormFloor) {
        throw NumericError("degenerate embedding: norm below " + std::to_string(kEmbedNormFloor));
    }
    const double d = 1.0 - dot(ea, eb) / (na * nb);
    return std::clamp(d, 0.0, 2.0);
}

ad::Var cosine_distance(const ad::Var& ea, const ad::Var& eb) {
    const double na = l2_norm(ea.value());
    const double nb = l2_norm(eb.value());
    if (na < kEmbedNormFloor || nb < kEmbedNormFloor) {
        throw NumericError("degenerate embedding: norm below " + std::to_string(kEmbedNormFloor));
    }
    ad::Var cos = ad::div_scalar(ad::dot(ea, eb), ad::mul(ad::l2norm(ea), ad::l2norm(eb)));
    return ad::add_scalar(ad::neg(cos), 1.0);
}

double distance(const FeatureExtractor& f, const Tensor& a, const Tensor& b) {
    return cosine_distance(f.extract(a).embedding, f.extract(b).embedding);
}

Logits classify(const FeatureExtractor& f, const Triplet& t) {
    validate_triplet(t);
    const Tensor ex = f.extract(t.x).embedding;
    const Tensor e0 = f.extract(t.x0).embedding;
    const Tensor e1 = f.extract(t.x1).embedding;
    Logits out;
    out.d_x1 = cosine_distance(ex, e1);
    out.d_x0 = cosine_distance(ex, e0);
    out.decision = out.d_x1 <= out.d_x0 ? 1 : 0;
    return out;
}

double margin(const FeatureExtractor& f, const Triplet& t) {
    const Logits l = classify(f, t);
    const double h_y = t.y == 1 ? l.d_x0 : l.d_x1;
    const double h_other = t.y == 1 ? l.d_x1 : l.d_x0;
    return h_y - h_other;
}

ad::Var margin_graph(const ad::Var& ex, const ad::Var& ex0, const ad::Var& ex1, int y) {
    ad::Var d1 = cosine_distance(ex, ex1); // H_0
    ad::Var d0 = cosine_distance(ex, ex0); // H_1
    return y == 1 ? ad::sub(d0, d1) : ad::sub(d1, d0);
}

Certificate certify(const FeatureExtractor& f, const Triplet& t) {
    validate_triplet(t);
    const ExtractResult rx = f.extract(t.x);
    const ExtractResult r0 = f.extract(t.x0);
    const ExtractResult r1 = f.extract(t.x1);

    const double d1 = cosine_distance(rx.embedding, r1.embedding);
    const double d0 = cosine_distance(rx.embedding, r0.embedding);

    Certificate cert;
    cert.margin = t.y == 1 ? d0 - d1 : d1 - d0;
    cert.gap = l2_distance(r0.embedding, r1.embedding);
    cert.correct = (d1 <= d0 ? 1 : 0) == t.y;
    cert.degenerate_gap = cert.gap <= kGapThreshold;
    cert.radius = (cert.margin > 0.0 && !cert.degenerate_gap) ? cert.margin / cert.gap : 0.0;
    cert.valid = f.project && !cert.degenerate_gap &&
                 rx.pre_projection_norm >= 1.0 &&
                 r0.pre_projection_norm >= 1.0 &&
                 r1.pre_projection_norm >= 1.0;
    return cert;
}

RobustnessGap robustness_gap(const FeatureExtractor& f, const Tensor& a, const Tensor& b,
                             const Tensor& delta) {
    if (!a.same_shape(delta)) {
        throw DimensionError("perturbation shape " + format_shape(delta.shape()) +
                             " does not match image shape " + format_shape(a.shape()));
    }
    const Tensor a_pert = add(a, delta);
    const ExtractResult ra = f.extract(a);
    const ExtractResult rb = f.extract(b);
    const ExtractResult rp = f.extract(a_pert);

    RobustnessGap out;
    out.lhs = std::abs(cosine_distance(ra.embedding, rb.embedding) -
                       cosine_distance(rp.embedding, rb.embedding));
    out.rhs = l2_norm(delta);
    out.verifiable = f.project &&
                     ra.pre_projection_norm >= 1.0 &&
                     rb.pre_projection_norm >= 1.0 &&
                     rp.pre_projection_norm >= 1.0;
    return out;
}

double hinge_loss(const FeatureExtractor& f, const Triplet& t, double m) {
    if (!(m > 0.0)) throw ConfigError("hinge margin parameter must be positive");
    return std::max(0.0, m - margin(f, t));
}

} // namespace certsim
