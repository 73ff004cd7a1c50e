#include "certsim/layers.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "certsim/errors.hpp"
#include "certsim/kernels.hpp"
#include "certsim/linalg.hpp"
#include "certsim/lstn.hpp"
#include "certsim/rng.hpp"

namespace certsim {

using nlohmann::json;

namespace {

void check_finite_params(const Tensor& t, const char* layer, const char* name) {
    if (!t.all_finite()) {
        throw NumericError(std::string(layer) + " parameter " + name + " contains non-finite values");
    }
}

Tensor exp_tensor(const Tensor& t) {
    Tensor out = t;
    for (double& v : out.data()) v = std::exp(v);
    return out;
}

} // namespace

// --- SllDenseLayer ----------------------------------------------------------

void SllDenseLayer::validate() const {
    if (w.ndim() != 2) throw DimensionError("dense layer weight must be rank 2, got " + format_shape(w.shape()));
    if (bias.ndim() != 1 || bias.shape()[0] != n_inner()) {
        throw DimensionError("dense layer bias shape " + format_shape(bias.shape()) +
                             " does not match inner width " + std::to_string(n_inner()));
    }
    if (log_q.ndim() != 1 || log_q.shape()[0] != n_inner()) {
        throw DimensionError("dense layer log_q shape " + format_shape(log_q.shape()) +
                             " does not match inner width " + std::to_string(n_inner()));
    }
    check_finite_params(w, "dense", "w");
    check_finite_params(bias, "dense", "bias");
    check_finite_params(log_q, "dense", "log_q");
}

const Tensor& SllDenseLayer::scaling() const {
    if (!cache_valid_) prepare();
    return t_cache_;
}

void SllDenseLayer::prepare() const {
    validate();
    const size_t nin = n_in(), m = n_inner();
    const Tensor q = exp_tensor(log_q);
    // |W^T W| row sums weighted by q_j / q_i.
    Tensor t({m});
    for (size_t i = 0; i < m; ++i) {
        double acc = 0.0;
        for (size_t j = 0; j < m; ++j) {
            double dotij = 0.0;
            for (size_t r = 0; r < nin; ++r) dotij += w[r * m + i] * w[r * m + j];
            acc += std::abs(dotij) * q[j];
        }
        t[i] = acc / q[i] + kScalingEpsilon;
    }
    t_cache_ = std::move(t);
    cache_valid_ = true;
}

void SllDenseLayer::invalidate() {
    cache_valid_ = false;
}

Tensor SllDenseLayer::forward(const Tensor& x) const {
    if (x.ndim() != 1 || x.shape()[0] != n_in()) {
        throw DimensionError("dense layer expects input [" + std::to_string(n_in()) +
                             "], got " + format_shape(x.shape()));
    }
    const Tensor& t = scaling();
    const size_t nin = n_in(), m = n_inner();
    // inner = relu(W^T x + b), scaled by T^{-1}. Accumulation order mirrors
    // the graph ops so both paths round identically.
    std::vector<double> inner(m);
    for (size_t i = 0; i < m; ++i) {
        double acc = 0.0;
        for (size_t r = 0; r < nin; ++r) acc += w[r * m + i] * x[r];
        acc += bias[i];
        inner[i] = acc > 0.0 ? acc / t[i] : 0.0;
    }
    Tensor out = x;
    for (size_t r = 0; r < nin; ++r) {
        double acc = 0.0;
        const double* row = w.ptr() + r * m;
        for (size_t i = 0; i < m; ++i) acc += row[i] * inner[i];
        out[r] = x[r] - 2.0 * acc;
    }
    return out;
}

ad::Var SllDenseLayer::forward(const ad::Var& x) const {
    const ad::Var wc = ad::Var::constant(w);
    const ad::Var bc = ad::Var::constant(bias);
    const ad::Var tc = ad::Var::constant(scaling());
    ad::Var inner = ad::relu(ad::add(ad::matvec(ad::transpose(wc), x), bc));
    ad::Var scaled = ad::div(inner, tc);
    return ad::sub(x, ad::scale(ad::matvec(wc, scaled), 2.0));
}

ad::Var SllDenseLayer::derived_train(const std::vector<ad::Var>& params) const {
    const ad::Var& wv = params[0];
    const ad::Var& uv = params[2];
    ad::Var q = ad::exp(uv);
    ad::Var gram_abs = ad::abs(ad::matmul(ad::transpose(wv), wv));
    return ad::add_scalar(ad::div(ad::matvec(gram_abs, q), q), kScalingEpsilon);
}

ad::Var SllDenseLayer::forward_train(const std::vector<ad::Var>& params, const ad::Var& derived,
                                     const ad::Var& x) const {
    const ad::Var& wv = params[0];
    const ad::Var& bv = params[1];
    ad::Var inner = ad::relu(ad::add(ad::matvec(ad::transpose(wv), x), bv));
    ad::Var scaled = ad::div(inner, derived);
    return ad::sub(x, ad::scale(ad::matvec(wv, scaled), 2.0));
}

// --- SllConvLayer -----------------------------------------------------------

void SllConvLayer::validate() const {
    if (kernel.ndim() != 4 || kernel.shape()[2] != kernel.shape()[3]) {
        throw DimensionError("conv kernel must be [h x c x k x k], got " + format_shape(kernel.shape()));
    }
    if (kernel_size() % 2 == 0) {
        throw ConfigError("conv kernel size must be odd, got " + std::to_string(kernel_size()));
    }
    if (bias.ndim() != 1 || bias.shape()[0] != inner_channels()) {
        throw DimensionError("conv bias shape " + format_shape(bias.shape()) +
                             " does not match inner channels " + std::to_string(inner_channels()));
    }
    if (log_q.ndim() != 1 || log_q.shape()[0] != inner_channels()) {
        throw DimensionError("conv log_q shape " + format_shape(log_q.shape()) +
                             " does not match inner channels " + std::to_string(inner_channels()));
    }
    check_finite_params(kernel, "conv", "kernel");
    check_finite_params(bias, "conv", "bias");
    check_finite_params(log_q, "conv", "log_q");
}

const Tensor& SllConvLayer::scaling() const {
    if (!cache_valid_) prepare();
    return t_cache_;
}

void SllConvLayer::prepare() const {
    validate();
    const size_t h = inner_channels(), c = channels(), ks = kernel_size();
    const size_t span = 2 * ks - 1;
    const Tensor q = exp_tensor(log_q);
    std::vector<double> corr(h * h * span * span);
    kernels::kernel_corr(kernel.ptr(), corr.data(), h, c, ks);
    Tensor t({h});
    for (size_t i = 0; i < h; ++i) {
        double acc = 0.0;
        for (size_t j = 0; j < h; ++j) {
            double s = 0.0;
            const double* block = corr.data() + (i * h + j) * span * span;
            for (size_t o = 0; o < span * span; ++o) s += std::abs(block[o]);
            acc += s * q[j];
        }
        t[i] = acc / q[i] + kScalingEpsilon;
    }
    t_cache_ = std::move(t);
    cache_valid_ = true;
}

void SllConvLayer::invalidate() {
    cache_valid_ = false;
}

Tensor SllConvLayer::forward(const Tensor& x) const {
    const size_t c = channels(), h = inner_channels(), ks = kernel_size();
    if (x.ndim() != 3 || x.shape()[0] != c || x.shape()[1] != x.shape()[2]) {
        throw DimensionError("conv layer expects input [" + std::to_string(c) +
                             " x s x s], got " + format_shape(x.shape()));
    }
    const size_t s = x.shape()[1];
    if (s < ks) {
        throw ConfigError("conv image size " + std::to_string(s) + " smaller than kernel " +
                          std::to_string(ks));
    }
    const Tensor& t = scaling();
    Tensor inner({h, s, s});
    kernels::conv2d_circular(x.ptr(), kernel.ptr(), inner.ptr(), c, h, s, ks);
    const size_t plane = s * s;
    for (size_t o = 0; o < h; ++o) {
        const double b = bias[o];
        const double ti = t[o];
        double* p = inner.ptr() + o * plane;
        for (size_t i = 0; i < plane; ++i) {
            const double v = p[i] + b;
            p[i] = v > 0.0 ? v / ti : 0.0;
        }
    }
    Tensor corr_back({c, s, s});
    kernels::conv2d_adjoint(inner.ptr(), kernel.ptr(), corr_back.ptr(), c, h, s, ks);
    Tensor out = x;
    for (size_t i = 0; i < out.size(); ++i) out[i] -= 2.0 * corr_back[i];
    return out;
}

ad::Var SllConvLayer::forward(const ad::Var& x) const {
    const ad::Var kc = ad::Var::constant(kernel);
    const ad::Var bc = ad::Var::constant(bias);
    const ad::Var tc = ad::Var::constant(scaling());
    ad::Var inner = ad::relu(ad::add_channel_bias(ad::conv2d_circular(x, kc), bc));
    ad::Var scaled = ad::div_channel(inner, tc);
    return ad::sub(x, ad::scale(ad::conv2d_adjoint(scaled, kc), 2.0));
}

ad::Var SllConvLayer::derived_train(const std::vector<ad::Var>& params) const {
    const ad::Var& kv = params[0];
    const ad::Var& uv = params[2];
    const size_t h = inner_channels(), ks = kernel_size();
    const size_t span = 2 * ks - 1;
    ad::Var q = ad::exp(uv);
    ad::Var corr_abs = ad::abs(ad::kernel_corr(kv));
    ad::Var rows = ad::reshape(corr_abs, {h * h, span * span});
    ad::Var offset_sums = ad::matvec(rows, ad::Var::constant(Tensor::full({span * span}, 1.0)));
    ad::Var weighted = ad::matvec(ad::reshape(offset_sums, {h, h}), q);
    return ad::add_scalar(ad::div(weighted, q), kScalingEpsilon);
}

ad::Var SllConvLayer::forward_train(const std::vector<ad::Var>& params, const ad::Var& derived,
                                    const ad::Var& x) const {
    const ad::Var& kv = params[0];
    const ad::Var& bv = params[1];
    ad::Var inner = ad::relu(ad::add_channel_bias(ad::conv2d_circular(x, kv), bv));
    ad::Var scaled = ad::div_channel(inner, derived);
    return ad::sub(x, ad::scale(ad::conv2d_adjoint(scaled, kv), 2.0));
}

// --- SpectralLinearLayer ----------------------------------------------------

void SpectralLinearLayer::validate() const {
    if (w.ndim() != 2) {
        throw DimensionError("spectral linear weight must be rank 2, got " + format_shape(w.shape()));
    }
    check_finite_params(w, "spectral_linear", "w");
}

const Tensor& SpectralLinearLayer::normalized() const {
    if (!cache_valid_) prepare();
    return w_hat_cache_;
}

void SpectralLinearLayer::prepare() const {
    validate();
    const TopSingular sv = top_singular(w);
    Tensor what = w;
    if (sv.sigma > 1e-30) {
        for (double& v : what.data()) v /= sv.sigma;
    }
    w_hat_cache_ = std::move(what);
    cache_valid_ = true;
}

void SpectralLinearLayer::invalidate() {
    cache_valid_ = false;
}

Tensor SpectralLinearLayer::forward(const Tensor& x) const {
    if (x.ndim() != 1 || x.shape()[0] != in_dim()) {
        throw DimensionError("spectral linear expects input [" + std::to_string(in_dim()) +
                             "], got " + format_shape(x.shape()));
    }
    const Tensor& what = normalized();
    const size_t m = out_dim(), n = in_dim();
    Tensor out({m});
    for (size_t i = 0; i < m; ++i) {
        double acc = 0.0;
        const double* row = what.ptr() + i * n;
        for (size_t j = 0; j < n; ++j) acc += row[j] * x[j];
        out[i] = acc;
    }
    return out;
}

ad::Var SpectralLinearLayer::forward(const ad::Var& x) const {
    return ad::matvec(ad::Var::constant(normalized()), x);
}

ad::Var SpectralLinearLayer::derived_train(const std::vector<ad::Var>& params) const {
    return ad::spectral_normalize(params[0]);
}

ad::Var SpectralLinearLayer::forward_train(const std::vector<ad::Var>& /*params*/,
                                           const ad::Var& derived, const ad::Var& x) const {
    return ad::matvec(derived, x);
}

// --- projection --------------------------------------------------------------

Tensor project_unit_ball(const Tensor& x) {
    const double n = l2_norm(x);
    if (n <= 1.0) return x;
    Tensor out = x;
    for (double& v : out.data()) v /= n;
    return out;
}

ad::Var project_unit_ball(const ad::Var& x) {
    const double n = l2_norm(x.value());
    if (n <= 1.0) return x;
    return ad::div_scalar(x, ad::l2norm(x));
}

// --- FeatureExtractor ---------------------------------------------------------

std::vector<ad::Var> ExtractorVars::flat() const {
    std::vector<ad::Var> out;
    for (const auto& layer : per_layer) {
        for (const auto& v : layer) out.push_back(v);
    }
    return out;
}

void FeatureExtractor::check_input(const Tensor& x) const {
    if (x.shape() != input_shape) {
        throw DimensionError("extractor expects input " + format_shape(input_shape) +
                             ", got " + format_shape(x.shape()));
    }
}

ExtractResult FeatureExtractor::extract(const Tensor& x) const {
    check_input(x);
    Tensor cur = x;
    for (const auto& layer : layers) {
        std::visit([&cur](const auto& l) {
            using T = std::decay_t<decltype(l)>;
            if constexpr (std::is_same_v<T, FlattenLayer>) {
                cur = cur.reshaped({cur.size()});
            } else {
                cur = l.forward(cur);
            }
        }, layer);
    }
    ExtractResult res;
    res.pre_projection_norm = l2_norm(cur);
    res.embedding = project ? project_unit_ball(cur) : cur;
    return res;
}

GraphExtract FeatureExtractor::extract_graph(const ad::Var& x) const {
    check_input(x.value());
    ad::Var cur = x;
    for (const auto& layer : layers) {
        std::visit([&cur](const auto& l) {
            using T = std::decay_t<decltype(l)>;
            if constexpr (std::is_same_v<T, FlattenLayer>) {
                cur = ad::reshape(cur, {cur.value().size()});
            } else {
                cur = l.forward(cur);
            }
        }, layer);
    }
    GraphExtract res;
    res.pre_projection_norm = l2_norm(cur.value());
    res.embedding = project ? project_unit_ball(cur) : cur;
    return res;
}

ExtractorVars FeatureExtractor::make_param_vars() const {
    ExtractorVars vars;
    for (const auto& layer : layers) {
        std::vector<ad::Var> lv;
        std::visit([&lv](const auto& l) {
            using T = std::decay_t<decltype(l)>;
            if constexpr (std::is_same_v<T, SllConvLayer>) {
                lv = {ad::Var::leaf(l.kernel), ad::Var::leaf(l.bias), ad::Var::leaf(l.log_q)};
            } else if constexpr (std::is_same_v<T, SllDenseLayer>) {
                lv = {ad::Var::leaf(l.w), ad::Var::leaf(l.bias), ad::Var::leaf(l.log_q)};
            } else if constexpr (std::is_same_v<T, SpectralLinearLayer>) {
                lv = {ad::Var::leaf(l.w)};
            }
        }, layer);
        vars.per_layer.push_back(std::move(lv));
    }
    return vars;
}

TrainGraph FeatureExtractor::make_train_graph() const {
    TrainGraph g;
    g.vars = make_param_vars();
    g.derived.resize(layers.size());
    for (size_t i = 0; i < layers.size(); ++i) {
        const auto& lv = g.vars.per_layer[i];
        std::visit([&g, &lv, i](const auto& l) {
            using T = std::decay_t<decltype(l)>;
            if constexpr (!std::is_same_v<T, FlattenLayer>) {
                g.derived[i] = l.derived_train(lv);
            }
        }, layers[i]);
    }
    return g;
}

GraphExtract FeatureExtractor::extract_train(const TrainGraph& graph, const ad::Var& x) const {
    check_input(x.value());
    if (graph.vars.per_layer.size() != layers.size()) {
        throw ConfigError("parameter vars do not match extractor layers");
    }
    ad::Var cur = x;
    for (size_t i = 0; i < layers.size(); ++i) {
        const auto& lv = graph.vars.per_layer[i];
        const auto& dv = graph.derived[i];
        std::visit([&cur, &lv, &dv](const auto& l) {
            using T = std::decay_t<decltype(l)>;
            if constexpr (std::is_same_v<T, FlattenLayer>) {
                cur = ad::reshape(cur, {cur.value().size()});
            } else {
                cur = l.forward_train(lv, dv, cur);
            }
        }, layers[i]);
    }
    GraphExtract res;
    res.pre_projection_norm = l2_norm(cur.value());
    res.embedding = project ? project_unit_ball(cur) : cur;
    return res;
}

std::vector<Tensor*> FeatureExtractor::parameters() {
    std::vector<Tensor*> out;
    for (auto& layer : layers) {
        std::visit([&out](auto& l) {
            using T = std::decay_t<decltype(l)>;
            if constexpr (std::is_same_v<T, SllConvLayer>) {
                out.push_back(&l.kernel);
                out.push_back(&l.bias);
                out.push_back(&l.log_q);
            } else if constexpr (std::is_same_v<T, SllDenseLayer>) {
                out.push_back(&l.w);
                out.push_back(&l.bias);
                out.push_back(&l.log_q);
            } else if constexpr (std::is_same_v<T, SpectralLinearLayer>) {
                out.push_back(&l.w);
            }
        }, layer);
    }
    return out;
}

std::vector<const Tensor*> FeatureExtractor::parameters() const {
    std::vector<const Tensor*> out;
    for (auto* p : const_cast<FeatureExtractor*>(this)->parameters()) out.push_back(p);
    return out;
}

void FeatureExtractor::ensure_caches() const {
    for (const auto& layer : layers) {
        std::visit([](const auto& l) {
            using T = std::decay_t<decltype(l)>;
            if constexpr (!std::is_same_v<T, FlattenLayer>) l.prepare();
        }, layer);
    }
}

void FeatureExtractor::invalidate_caches() {
    for (auto& layer : layers) {
        std::visit([](auto& l) {
            using T = std::decay_t<decltype(l)>;
            if constexpr (!std::is_same_v<T, FlattenLayer>) l.invalidate();
        }, layer);
    }
}

void FeatureExtractor::validate() const {
    if (input_shape.empty()) throw ConfigError("extractor input shape not set");
    std::vector<size_t> shape = input_shape;
    for (const auto& layer : layers) {
        std::visit([&shape](const auto& l) {
            using T = std::decay_t<decltype(l)>;
            if constexpr (std::is_same_v<T, SllConvLayer>) {
                l.validate();
                if (shape.size() != 3 || shape[0] != l.channels() || shape[1] != shape[2]) {
                    throw DimensionError("conv layer cannot consume " + format_shape(shape));
                }
                if (shape[1] < l.kernel_size()) {
                    throw ConfigError("conv image size smaller than kernel");
                }
            } else if constexpr (std::is_same_v<T, SllDenseLayer>) {
                l.validate();
                if (shape.size() != 1 || shape[0] != l.n_in()) {
                    throw DimensionError("dense layer cannot consume " + format_shape(shape));
                }
            } else if constexpr (std::is_same_v<T, FlattenLayer>) {
                shape = {shape_numel(shape)};
            } else if constexpr (std::is_same_v<T, SpectralLinearLayer>) {
                l.validate();
                if (shape.size() != 1 || shape[0] != l.in_dim()) {
                    throw DimensionError("spectral linear cannot consume " + format_shape(shape));
                }
                shape = {l.out_dim()};
            }
        }, layer);
    }
    if (shape.size() != 1 || shape[0] != embed_dim) {
        throw DimensionError("extractor output " + format_shape(shape) +
                             " does not match embed_dim " + std::to_string(embed_dim));
    }
}

FeatureExtractor make_default_extractor(uint64_t seed, size_t image_size, size_t channels,
                                        size_t embed_dim, size_t conv_inner, size_t dense_inner,
                                        bool project) {
    Rng rng = Rng(seed).fork("extractor-init");
    const size_t k = 3;
    FeatureExtractor f;
    f.project = project;
    f.embed_dim = embed_dim;
    f.input_shape = {channels, image_size, image_size};

    auto normal_tensor = [&rng](std::vector<size_t> shape, double sigma) {
        Tensor t(std::move(shape));
        for (double& v : t.data()) v = sigma * rng.normal();
        return t;
    };

    for (int i = 0; i < 3; ++i) {
        SllConvLayer conv;
        conv.kernel = normal_tensor({conv_inner, channels, k, k},
                                    1.0 / std::sqrt(static_cast<double>(channels * k * k)));
        conv.bias = Tensor({conv_inner});
        conv.log_q = Tensor({conv_inner});
        f.layers.emplace_back(std::move(conv));
    }
    f.layers.emplace_back(FlattenLayer{});

    const size_t flat = channels * image_size * image_size;
    for (int i = 0; i < 2; ++i) {
        SllDenseLayer dense;
        dense.w = normal_tensor({flat, dense_inner}, 1.0 / std::sqrt(static_cast<double>(flat)));
        dense.bias = Tensor({dense_inner});
        dense.log_q = Tensor({dense_inner});
        f.layers.emplace_back(std::move(dense));
    }

    SpectralLinearLayer head;
    head.w = normal_tensor({embed_dim, flat}, 1.0 / std::sqrt(static_cast<double>(flat)));
    f.layers.emplace_back(std::move(head));

    f.validate();
    return f;
}

// --- checkpoint i/o -----------------------------------------------------------

namespace {

constexpr char kCkptMagic[4] = {'C', 'S', 'C', 'K'};
constexpr uint8_t kCkptVersion = 1;

json layer_spec(const Layer& layer) {
    json j;
    std::visit([&j](const auto& l) {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, SllConvLayer>) {
            j = {{"kind", "sll_conv"},
                 {"inner_channels", l.inner_channels()},
                 {"channels", l.channels()},
                 {"kernel_size", l.kernel_size()}};
        } else if constexpr (std::is_same_v<T, SllDenseLayer>) {
            j = {{"kind", "sll_dense"}, {"n_in", l.n_in()}, {"n_inner", l.n_inner()}};
        } else if constexpr (std::is_same_v<T, FlattenLayer>) {
            j = {{"kind", "flatten"}};
        } else if constexpr (std::is_same_v<T, SpectralLinearLayer>) {
            j = {{"kind", "spectral_linear"}, {"out", l.out_dim()}, {"in", l.in_dim()}};
        }
    }, layer);
    return j;
}

size_t layer_blob_count(const json& spec) {
    const std::string kind = spec.at("kind");
    if (kind == "sll_conv" || kind == "sll_dense") return 3;
    if (kind == "spectral_linear") return 1;
    if (kind == "flatten") return 0;
    throw FormatError("unknown layer kind '" + kind + "' in checkpoint header");
}

} // namespace

void save_model(const FeatureExtractor& f, const std::string& path) {
    f.validate();
    json header;
    header["format"] = "certsim-checkpoint";
    header["version"] = kCkptVersion;
    header["dtype"] = "f64";
    header["project"] = f.project;
    header["embed_dim"] = f.embed_dim;
    header["input_shape"] = f.input_shape;
    json lj = json::array();
    for (const auto& layer : f.layers) lj.push_back(layer_spec(layer));
    header["layers"] = lj;

    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path + " for writing");
    os.write(kCkptMagic, 4);
    const char version = static_cast<char>(kCkptVersion);
    os.write(&version, 1);
    const std::string hs = header.dump();
    uint64_t len = hs.size();
    char lenbuf[8];
    for (int i = 0; i < 8; ++i) lenbuf[i] = static_cast<char>((len >> (8 * i)) & 0xff);
    os.write(lenbuf, 8);
    os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const Tensor* p : f.parameters()) write_lstn(os, *p);
    os.flush();
    if (!os) throw IoError("failed writing " + path);
}

FeatureExtractor load_model(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path + " for reading");
    char magic[4];
    if (!is.read(magic, 4)) throw IoError("truncated checkpoint while reading magic");
    if (std::memcmp(magic, kCkptMagic, 4) != 0) {
        throw FormatError("bad checkpoint magic at offset 0");
    }
    char version = 0;
    if (!is.read(&version, 1)) throw IoError("truncated checkpoint while reading version");
    if (static_cast<uint8_t>(version) != kCkptVersion) {
        throw FormatError("unsupported checkpoint version " + std::to_string(version));
    }
    unsigned char lenbuf[8];
    if (!is.read(reinterpret_cast<char*>(lenbuf), 8)) {
        throw IoError("truncated checkpoint while reading header length");
    }
    uint64_t len = 0;
    for (int i = 0; i < 8; ++i) len |= static_cast<uint64_t>(lenbuf[i]) << (8 * i);
    std::string hs(len, '\0');
    if (!is.read(hs.data(), static_cast<std::streamsize>(len))) {
        throw IoError("truncated checkpoint while reading header");
    }
    json header;
    try {
        header = json::parse(hs);
    } catch (const json::exception& e) {
        throw FormatError(std::string("unparseable checkpoint header: ") + e.what());
    }

    FeatureExtractor f;
    try {
        f.project = header.at("project").get<bool>();
        f.embed_dim = header.at("embed_dim").get<size_t>();
        f.input_shape = header.at("input_shape").get<std::vector<size_t>>();
        size_t total_blobs = 0;
        for (const auto& spec : header.at("layers")) total_blobs += layer_blob_count(spec);
        size_t blobs_read = 0;
        auto next_blob = [&]() {
            if (is.peek() == std::char_traits<char>::eof()) {
                throw FormatError("checkpoint header declares " + std::to_string(total_blobs) +
                                  " tensor blobs, file ends after " + std::to_string(blobs_read));
            }
            Tensor t = read_lstn(is);
            ++blobs_read;
            return t;
        };
        for (const auto& spec : header.at("layers")) {
            const std::string kind = spec.at("kind");
            if (kind == "sll_conv") {
                SllConvLayer l;
                l.kernel = next_blob();
                l.bias = next_blob();
                l.log_q = next_blob();
                f.layers.emplace_back(std::move(l));
            } else if (kind == "sll_dense") {
                SllDenseLayer l;
                l.w = next_blob();
                l.bias = next_blob();
                l.log_q = next_blob();
                f.layers.emplace_back(std::move(l));
            } else if (kind == "flatten") {
                f.layers.emplace_back(FlattenLayer{});
            } else if (kind == "spectral_linear") {
                SpectralLinearLayer l;
                l.w = next_blob();
                f.layers.emplace_back(std::move(l));
            } else {
                throw FormatError("unknown layer kind '" + kind + "' in checkpoint header");
            }
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed checkpoint header: ") + e.what());
    }
    f.validate();
    return f;
}

} // namespace certsim
