#pragma once

#include <string>
#include <variant>
#include <vector>

#include "certsim/autodiff.hpp"
#include "certsim/tensor.hpp"

namespace certsim {

// Stabilization floor added to the scaling diagonal; keeps the residual
// correction well defined at W = 0 and only ever enlarges the diagonal, so
// the layer stays non-expansive.
constexpr double kScalingEpsilon = 1e-9;

// Residual layer x - 2 W T^{-1} relu(W^T x + b), with T the diagonal
// scaling sum_j |W^T W|_ij q_j / q_i + eps. q is kept positive through the
// unconstrained parameterization q = exp(log_q).
struct SllDenseLayer {
    Tensor w;      // [n_in x n_inner]
    Tensor bias;   // [n_inner]
    Tensor log_q;  // [n_inner]

    size_t n_in() const { return w.shape()[0]; }
    size_t n_inner() const { return w.shape()[1]; }

    Tensor forward(const Tensor& x) const;
    ad::Var forward(const ad::Var& x) const; // parameters treated as constants

    // Training path. The derived node is the in-graph scaling diagonal,
    // built once per step and shared by every sample in the batch.
    ad::Var derived_train(const std::vector<ad::Var>& params) const;
    ad::Var forward_train(const std::vector<ad::Var>& params, const ad::Var& derived,
                          const ad::Var& x) const;

    const Tensor& scaling() const;
    void prepare() const;
    void invalidate();
    void validate() const;

    mutable Tensor t_cache_;
    mutable bool cache_valid_ = false;
};

// Convolutional form of the same layer: W^T is a circular stride-1
// cross-correlation from c input channels to h inner channels, W its
// adjoint. The per-channel scaling sums |corr(K_i, K_j)| over all spatial
// offsets, which is position-invariant under circular padding.
struct SllConvLayer {
    Tensor kernel; // [h x c x k x k]
    Tensor bias;   // [h]
    Tensor log_q;  // [h]

    size_t inner_channels() const { return kernel.shape()[0]; }
    size_t channels() const { return kernel.shape()[1]; }
    size_t kernel_size() const { return kernel.shape()[2]; }

    Tensor forward(const Tensor& x) const; // x: [c x s x s], s >= k
    ad::Var forward(const ad::Var& x) const;
    ad::Var derived_train(const std::vector<ad::Var>& params) const;
    ad::Var forward_train(const std::vector<ad::Var>& params, const ad::Var& derived,
                          const ad::Var& x) const;

    const Tensor& scaling() const;
    void prepare() const;
    void invalidate();
    void validate() const;

    mutable Tensor t_cache_;
    mutable bool cache_valid_ = false;
};

struct FlattenLayer {};

// Dimension-changing 1-Lipschitz map: y = (W / sigma_max(W)) x. The exact
// top singular value is divided out, so the operator norm is 1.
struct SpectralLinearLayer {
    Tensor w; // [out x in]

    size_t out_dim() const { return w.shape()[0]; }
    size_t in_dim() const { return w.shape()[1]; }

    Tensor forward(const Tensor& x) const;
    ad::Var forward(const ad::Var& x) const;
    ad::Var derived_train(const std::vector<ad::Var>& params) const;
    ad::Var forward_train(const std::vector<ad::Var>& params, const ad::Var& derived,
                          const ad::Var& x) const;

    const Tensor& normalized() const;
    void prepare() const;
    void invalidate();
    void validate() const;

    mutable Tensor w_hat_cache_;
    mutable bool cache_valid_ = false;
};

using Layer = std::variant<SllConvLayer, SllDenseLayer, FlattenLayer, SpectralLinearLayer>;

// Nearest point of the unit l2 ball: identity inside, radial rescale
// outside. Idempotent and non-expansive.
Tensor project_unit_ball(const Tensor& x);
ad::Var project_unit_ball(const ad::Var& x);

struct ExtractResult {
    Tensor embedding;
    double pre_projection_norm = 0.0;
};

struct GraphExtract {
    ad::Var embedding;
    double pre_projection_norm = 0.0;
};

// Leaf Vars over every trainable tensor, grouped per layer in the same
// order as parameters().
struct ExtractorVars {
    std::vector<std::vector<ad::Var>> per_layer;
    std::vector<ad::Var> flat() const;
};

// Parameter leaves plus the per-layer derived nodes (scaling diagonals and
// the normalized head), built once per training step.
struct TrainGraph {
    ExtractorVars vars;
    std::vector<ad::Var> derived; // undefined Var for flatten layers
};

class FeatureExtractor {
public:
    std::vector<Layer> layers;
    bool project = true;
    size_t embed_dim = 0;
    std::vector<size_t> input_shape;

    ExtractResult extract(const Tensor& x) const;
    GraphExtract extract_graph(const ad::Var& x) const;

    ExtractorVars make_param_vars() const;
    TrainGraph make_train_graph() const;
    GraphExtract extract_train(const TrainGraph& graph, const ad::Var& x) const;

    std::vector<Tensor*> parameters();
    std::vector<const Tensor*> parameters() const;

    // Recomputes scaling diagonals and the normalized head. Must be called
    // before sharing the extractor across evaluation threads; forwards on a
    // single thread recompute lazily.
    void ensure_caches() const;
    void invalidate_caches();
    void validate() const;

private:
    void check_input(const Tensor& x) const;
};

// Desk-scale default: three conv layers, flatten, two dense layers, then a
// spectrally normalized linear head into the embedding space.
FeatureExtractor make_default_extractor(uint64_t seed, size_t image_size = 16,
                                        size_t channels = 3, size_t embed_dim = 32,
                                        size_t conv_inner = 16, size_t dense_inner = 64,
                                        bool project = true);

// Checkpoint: "CSCK" magic, version byte, little-endian u64 JSON header
// length, JSON header (layer specs, dtype, version), then one LSTN blob per
// trainable tensor in layer order. Round-trips are bit-exact.
void save_model(const FeatureExtractor& f, const std::string& path);
FeatureExtractor load_model(const std::string& path);

} // namespace certsim
