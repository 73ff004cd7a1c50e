#pragma once

#include <array>

#include "certsim/layers.hpp"
#include "certsim/tensor.hpp"

namespace certsim {

// Embeddings with norm below this are degenerate for cosine distance.
constexpr double kEmbedNormFloor = 1e-12;
// Below this gap the two distortions are indistinguishable and no radius is
// certified.
constexpr double kGapThreshold = 1e-12;

// One 2AFC judgment: a reference x, two distortions x0/x1, and the label of
// the distortion judged closer to x.
struct Triplet {
    Tensor x;
    Tensor x0;
    Tensor x1;
    int y = 0;
};

void validate_triplet(const Triplet& t);

// Logits of the soft classifier H(x) = [d(x, x1), d(x, x0)]; the decision is
// argmax with ties resolved to 1.
struct Logits {
    double d_x1 = 0.0; // H_0
    double d_x0 = 0.0; // H_1
    int decision = 0;
};

struct Certificate {
    double margin = 0.0;
    double gap = 0.0;    // ||f(x0) - f(x1)||_2
    double radius = 0.0; // max(0, margin) / gap
    bool correct = false;
    bool valid = false;  // all three pre-projection norms >= 1 and gap above threshold
    bool degenerate_gap = false;
};

struct RobustnessGap {
    double lhs = 0.0; // |d(a,b) - d(a+delta,b)|
    double rhs = 0.0; // ||delta||_2
    bool verifiable = false;
};

// 1 - cosine similarity of two embeddings; throws NumericError when either
// norm is below kEmbedNormFloor. Result clamped into [0, 2].
double cosine_distance(const Tensor& ea, const Tensor& eb);
ad::Var cosine_distance(const ad::Var& ea, const ad::Var& eb);

double distance(const FeatureExtractor& f, const Tensor& a, const Tensor& b);

Logits classify(const FeatureExtractor& f, const Triplet& t);

// Signed margin M = H_y - H_{1-y}; positive iff the decision matches y
// (modulo the tie rule).
double margin(const FeatureExtractor& f, const Triplet& t);

// Margin from precomputed embedding Vars, for training and attack graphs.
ad::Var margin_graph(const ad::Var& ex, const ad::Var& ex0, const ad::Var& ex1, int y);

Certificate certify(const FeatureExtractor& f, const Triplet& t);

RobustnessGap robustness_gap(const FeatureExtractor& f, const Tensor& a, const Tensor& b,
                             const Tensor& delta);

// max(0, m - margin); the fine-tuning objective.
double hinge_loss(const FeatureExtractor& f, const Triplet& t, double m);

} // namespace certsim
