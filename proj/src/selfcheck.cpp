#include "certsim/selfcheck.hpp"

#include <cmath>
#include <filesystem>
#include <ostream>
#include <sstream>

#include "certsim/autodiff.hpp"
#include "certsim/errors.hpp"
#include "certsim/lstn.hpp"
#include "certsim/metric.hpp"
#include "certsim/rng.hpp"

namespace certsim {

namespace {

Tensor random_tensor(std::vector<size_t> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = rng.uniform(lo, hi);
    return t;
}

// Keeps grad-check probe points away from relu/abs kinks.
Tensor random_tensor_away_from_zero(std::vector<size_t> shape, Rng& rng, double margin = 1e-2) {
    Tensor t(std::move(shape));
    for (double& v : t.data()) {
        const double mag = rng.uniform(margin, 1.0);
        v = rng.uniform() < 0.5 ? -mag : mag;
    }
    return t;
}

} // namespace

double lipschitz_fuzz_ratio(const FeatureExtractor& f, size_t pairs, uint64_t seed) {
    f.ensure_caches();
    Rng rng = Rng(seed).fork("lipschitz-fuzz");
    double worst = 0.0;
    for (size_t i = 0; i < pairs; ++i) {
        Tensor x = random_tensor(f.input_shape, rng, 0.0, 1.0);
        Tensor y = random_tensor(f.input_shape, rng, 0.0, 1.0);
        const double din = l2_distance(x, y);
        if (din < 1e-9) continue;
        const double dout = l2_distance(f.extract(x).embedding, f.extract(y).embedding);
        worst = std::max(worst, dout / din);
    }
    return worst;
}

double lipschitz_fuzz_ratio_dense(const SllDenseLayer& layer, size_t pairs, uint64_t seed) {
    layer.prepare();
    Rng rng = Rng(seed).fork("dense-fuzz");
    double worst = 0.0;
    for (size_t i = 0; i < pairs; ++i) {
        Tensor x = random_tensor({layer.n_in()}, rng);
        Tensor y = random_tensor({layer.n_in()}, rng);
        const double din = l2_distance(x, y);
        if (din < 1e-9) continue;
        const double dout = l2_distance(layer.forward(x), layer.forward(y));
        worst = std::max(worst, dout / din);
    }
    return worst;
}

double lipschitz_fuzz_ratio_conv(const SllConvLayer& layer, size_t image_size, size_t pairs,
                                 uint64_t seed) {
    layer.prepare();
    Rng rng = Rng(seed).fork("conv-fuzz");
    double worst = 0.0;
    for (size_t i = 0; i < pairs; ++i) {
        Tensor x = random_tensor({layer.channels(), image_size, image_size}, rng);
        Tensor y = random_tensor({layer.channels(), image_size, image_size}, rng);
        const double din = l2_distance(x, y);
        if (din < 1e-9) continue;
        const double dout = l2_distance(layer.forward(x), layer.forward(y));
        worst = std::max(worst, dout / din);
    }
    return worst;
}

namespace {

struct SuiteResult {
    bool ok = true;
    std::string detail;
};

SuiteResult gradient_suite() {
    Rng rng(4242);
    double worst = 0.0;
    const double tol = 1e-5;
    const int points = 20;

    auto check = [&](const std::function<ad::Var(const ad::Var&)>& fn, const Tensor& p) {
        worst = std::max(worst, ad::grad_check(fn, p, 1e-5));
    };

    for (int i = 0; i < points; ++i) {
        Rng local = rng.fork(i);
        const Tensor weights = random_tensor({6}, local);
        // elementwise chain through mul/add/exp/log/sqrt
        check([&](const ad::Var& x) {
            ad::Var w = ad::Var::constant(weights);
            ad::Var z = ad::mul(x, x);
            z = ad::add(z, ad::exp(ad::scale(x, 0.3)));
            z = ad::sqrt(ad::add_scalar(z, 2.0));
            z = ad::log(ad::add_scalar(ad::mul(z, z), 1.0));
            return ad::dot(z, w);
        }, random_tensor({6}, local));
        // relu/abs away from kinks
        check([&](const ad::Var& x) {
            ad::Var w = ad::Var::constant(weights);
            return ad::dot(ad::add(ad::relu(x), ad::abs(x)), w);
        }, random_tensor_away_from_zero({6}, local));
        // matmul/matvec/transpose
        const Tensor b = random_tensor({4, 3}, local);
        check([&](const ad::Var& x) {
            ad::Var m = ad::reshape(x, {3, 4});
            ad::Var prod = ad::matmul(m, ad::Var::constant(b));
            return ad::sum(ad::mul(prod, prod));
        }, random_tensor({12}, local));
        // conv pair
        const Tensor kern = random_tensor({2, 2, 3, 3}, local);
        check([&](const ad::Var& x) {
            ad::Var img = ad::reshape(x, {2, 5, 5});
            ad::Var z = ad::conv2d_circular(img, ad::Var::constant(kern));
            return ad::sum(ad::mul(z, z));
        }, random_tensor({50}, local));
    }

    SuiteResult res;
    res.ok = worst <= tol;
    std::ostringstream os;
    os << "max relative error " << worst << " (tolerance " << tol << ")";
    res.detail = os.str();
    return res;
}

SuiteResult lipschitz_suite() {
    Rng rng(77);
    SllDenseLayer dense;
    dense.w = random_tensor({12, 8}, rng);
    dense.bias = random_tensor({8}, rng);
    dense.log_q = random_tensor({8}, rng, -0.5, 0.5);

    SllConvLayer conv;
    conv.kernel = random_tensor({4, 2, 3, 3}, rng);
    conv.bias = random_tensor({4}, rng);
    conv.log_q = random_tensor({4}, rng, -0.5, 0.5);

    FeatureExtractor f = make_default_extractor(9001, 8, 3, 16, 8, 24, true);

    const double tol = 1.0 + 1e-9;
    const double rd = lipschitz_fuzz_ratio_dense(dense, 10000, 1);
    const double rc = lipschitz_fuzz_ratio_conv(conv, 8, 10000, 2);
    const double rf = lipschitz_fuzz_ratio(f, 10000, 3);

    SuiteResult res;
    res.ok = rd <= tol && rc <= tol && rf <= tol;
    std::ostringstream os;
    os << "ratios dense " << rd << ", conv " << rc << ", extractor " << rf;
    res.detail = os.str();
    return res;
}

SuiteResult projection_suite() {
    Rng rng(5150);
    bool ok = true;
    for (int i = 0; i < 10000; ++i) {
        Tensor x = random_tensor({8}, rng, -3.0, 3.0);
        Tensor y = random_tensor({8}, rng, -3.0, 3.0);
        const Tensor px = project_unit_ball(x);
        const Tensor py = project_unit_ball(y);
        ok = ok && l2_norm(px) <= 1.0 + 1e-12;
        ok = ok && l2_distance(project_unit_ball(px), px) <= 1e-12;           // idempotent
        ok = ok && l2_distance(px, py) <= l2_distance(x, y) + 1e-12;          // non-expansive
    }
    return {ok, ok ? "idempotent and non-expansive on 10000 pairs" : "violation found"};
}

SuiteResult roundtrip_suite() {
    namespace fs = std::filesystem;
    Rng rng(31337);
    const fs::path dir = fs::temp_directory_path() / "certsim-selfcheck";
    fs::create_directories(dir);

    bool ok = true;
    {
        Tensor t = random_tensor({3, 5, 7}, rng);
        const std::string path = (dir / "t64.lstn").string();
        save_tensor(path, t);
        const Tensor back = load_tensor(path);
        ok = ok && back.shape() == t.shape() && back.data() == t.data() && back.dtype() == t.dtype();
    }
    {
        Tensor t = random_tensor({4, 4}, rng).with_dtype(Dtype::f32);
        const std::string path = (dir / "t32.lstn").string();
        save_tensor(path, t);
        const Tensor back = load_tensor(path);
        ok = ok && back.data() == t.data() && back.dtype() == Dtype::f32;
    }
    {
        FeatureExtractor f = make_default_extractor(11, 8, 3, 16, 8, 24, true);
        const std::string path = (dir / "model.ckpt").string();
        save_model(f, path);
        const FeatureExtractor back = load_model(path);
        const auto pa = f.parameters();
        const auto pb = back.parameters();
        ok = ok && pa.size() == pb.size();
        for (size_t i = 0; ok && i < pa.size(); ++i) {
            ok = pa[i]->data() == pb[i]->data();
        }
    }
    std::error_code ec;
    fs::remove_all(dir, ec);
    return {ok, ok ? "LSTN and checkpoint round trips bit-exact" : "round trip mismatch"};
}

} // namespace

bool run_selfcheck(std::ostream& out) {
    bool all_ok = true;
    const std::pair<const char*, SuiteResult> suites[] = {
        {"grad_check", gradient_suite()},
        {"lipschitz_fuzz", lipschitz_suite()},
        {"projection", projection_suite()},
        {"format_roundtrip", roundtrip_suite()},
    };
    for (const auto& [name, res] : suites) {
        out << (res.ok ? "[PASS] " : "[FAIL] ") << name << ": " << res.detail << "\n";
        all_ok = all_ok && res.ok;
    }
    return all_ok;
}

} // namespace certsim
