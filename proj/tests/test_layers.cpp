#include <doctest.h>

#include <cmath>
#include <fstream>

#include "certsim/errors.hpp"
#include "certsim/layers.hpp"
#include "certsim/linalg.hpp"
#include "certsim/selfcheck.hpp"
#include "test_helpers.hpp"

using namespace certsim;

namespace {

SllDenseLayer random_dense(size_t n_in, size_t n_inner, Rng& rng) {
    SllDenseLayer l;
    l.w = testutil::random_tensor({n_in, n_inner}, rng);
    l.bias = testutil::random_tensor({n_inner}, rng);
    l.log_q = testutil::random_tensor({n_inner}, rng, -0.5, 0.5);
    return l;
}

SllConvLayer random_conv(size_t h, size_t c, size_t k, Rng& rng) {
    SllConvLayer l;
    l.kernel = testutil::random_tensor({h, c, k, k}, rng);
    l.bias = testutil::random_tensor({h}, rng);
    l.log_q = testutil::random_tensor({h}, rng, -0.5, 0.5);
    return l;
}


} // namespace

TEST_CASE("dense layer: zero weights act as the identity") {
    SllDenseLayer l;
    l.w = Tensor({4, 3});
    l.bias = Tensor::from_data({3}, {0.5, -0.2, 1.0});
    l.log_q = Tensor({3});
    Rng rng(10);
    const Tensor x = testutil::random_tensor({4}, rng);
    const Tensor y = l.forward(x);
    for (size_t i = 0; i < x.size(); ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("dense layer: scalar case evaluates the closed form") {
    SllDenseLayer l;
    l.w = Tensor::from_data({1, 1}, {1.0});
    l.bias = Tensor({1});
    l.log_q = Tensor({1});
    const Tensor y = l.forward(Tensor::from_data({1}, {1.0}));
    CHECK(y[0] == doctest::Approx(-1.0).epsilon(1e-8));
}

TEST_CASE("dense layer is empirically 1-Lipschitz") {
    Rng rng(11);
    SllDenseLayer l = random_dense(12, 8, rng);
    CHECK(lipschitz_fuzz_ratio_dense(l, 10000, 1) <= 1.0 + 1e-9);
}

TEST_CASE("dense layer q-rescaling invariance") {
    Rng rng(12);
    SllDenseLayer a = random_dense(6, 5, rng);
    SllDenseLayer b = a;
    for (double& v : b.log_q.data()) v += std::log(7.3);
    const Tensor x = testutil::random_tensor({6}, rng);
    const Tensor ya = a.forward(x);
    const Tensor yb = b.forward(x);
    for (size_t i = 0; i < ya.size(); ++i) {
        CHECK(ya[i] == doctest::Approx(yb[i]).epsilon(1e-12));
    }
}

TEST_CASE("dense layer rejects non-finite parameters") {
    Rng rng(13);
    SllDenseLayer l = random_dense(4, 3, rng);
    l.w[2] = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(l.forward(testutil::random_tensor({4}, rng)), NumericError);
}

TEST_CASE("conv layer: zero kernel acts as the identity") {
    SllConvLayer l;
    l.kernel = Tensor({2, 2, 3, 3});
    l.bias = Tensor::from_data({2}, {0.3, -0.4});
    l.log_q = Tensor({2});
    Rng rng(14);
    const Tensor x = testutil::random_tensor({2, 6, 6}, rng);
    const Tensor y = l.forward(x);
    for (size_t i = 0; i < x.size(); ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("conv layer: 1x1 kernel reduces to the scalar dense case per pixel") {
    SllConvLayer conv;
    conv.kernel = Tensor::from_data({1, 1, 1, 1}, {0.8});
    conv.bias = Tensor::from_data({1}, {0.1});
    conv.log_q = Tensor::from_data({1}, {0.4});

    SllDenseLayer dense;
    dense.w = Tensor::from_data({1, 1}, {0.8});
    dense.bias = Tensor::from_data({1}, {0.1});
    dense.log_q = Tensor::from_data({1}, {0.4});

    Rng rng(15);
    const Tensor x = testutil::random_tensor({1, 5, 5}, rng);
    const Tensor y = conv.forward(x);
    for (size_t i = 0; i < x.size(); ++i) {
        const Tensor yi = dense.forward(Tensor::from_data({1}, {x[i]}));
        CHECK(y[i] == doctest::Approx(yi[0]).epsilon(1e-12));
    }
}

TEST_CASE("conv layer equals the explicit im2col dense oracle") {
    Rng rng(16);
    const size_t s = 8;
    SllConvLayer conv = random_conv(4, 2, 3, rng);
    SllDenseLayer dense = testutil::im2col_dense(conv, s);
    for (int trial = 0; trial < 5; ++trial) {
        const Tensor x = testutil::random_tensor({2, s, s}, rng);
        const Tensor yc = conv.forward(x);
        const Tensor yd = dense.forward(x.reshaped({2 * s * s}));
        double worst = 0.0;
        for (size_t i = 0; i < yc.size(); ++i) worst = std::max(worst, std::abs(yc[i] - yd[i]));
        CHECK(worst <= 1e-10);
    }
}

TEST_CASE("conv layer is empirically 1-Lipschitz") {
    Rng rng(17);
    SllConvLayer l = random_conv(4, 2, 3, rng);
    CHECK(lipschitz_fuzz_ratio_conv(l, 8, 10000, 2) <= 1.0 + 1e-9);
}

TEST_CASE("conv layer configuration errors") {
    Rng rng(18);
    SllConvLayer even;
    even.kernel = testutil::random_tensor({2, 1, 4, 4}, rng);
    even.bias = testutil::random_tensor({2}, rng);
    even.log_q = testutil::random_tensor({2}, rng);
    CHECK_THROWS_AS(even.forward(testutil::random_tensor({1, 6, 6}, rng)), ConfigError);

    SllConvLayer ok = random_conv(2, 1, 5, rng);
    CHECK_THROWS_AS(ok.forward(testutil::random_tensor({1, 4, 4}, rng)), ConfigError);
}

TEST_CASE("unit ball projection") {
    const Tensor p = project_unit_ball(Tensor::from_data({2}, {3, 4}));
    CHECK(p[0] == doctest::Approx(0.6));
    CHECK(p[1] == doctest::Approx(0.8));
    CHECK(l2_norm(p) == doctest::Approx(1.0).epsilon(1e-15));

    const Tensor inside = Tensor::from_data({2}, {0.3, 0.4});
    const Tensor q = project_unit_ball(inside);
    CHECK(q.data() == inside.data());

    const Tensor zero = project_unit_ball(Tensor({3}));
    for (double v : zero.data()) CHECK(v == 0.0);
}

TEST_CASE("extractor composed of zero-weight layers is flatten") {
    FeatureExtractor f;
    f.input_shape = {2, 4, 4};
    f.embed_dim = 32;
    f.project = false;
    SllConvLayer conv;
    conv.kernel = Tensor({3, 2, 3, 3});
    conv.bias = Tensor({3});
    conv.log_q = Tensor({3});
    f.layers.emplace_back(std::move(conv));
    f.layers.emplace_back(FlattenLayer{});
    SllDenseLayer dense;
    dense.w = Tensor({32, 8});
    dense.bias = Tensor({8});
    dense.log_q = Tensor({8});
    f.layers.emplace_back(std::move(dense));
    f.validate();

    Rng rng(19);
    const Tensor x = testutil::random_tensor({2, 4, 4}, rng);
    const ExtractResult res = f.extract(x);
    CHECK(res.embedding.shape() == std::vector<size_t>{32});
    for (size_t i = 0; i < x.size(); ++i) CHECK(res.embedding[i] == x[i]);
}

TEST_CASE("projection keeps embeddings inside the unit ball") {
    Rng rng(20);
    FeatureExtractor f = make_default_extractor(21, 8, 3, 16, 8, 24, true);
    for (int i = 0; i < 50; ++i) {
        const Tensor x = testutil::random_tensor({3, 8, 8}, rng, 0.0, 1.0);
        CHECK(l2_norm(f.extract(x).embedding) <= 1.0 + 1e-12);
    }
}

TEST_CASE("full extractor is empirically 1-Lipschitz") {
    FeatureExtractor f = make_default_extractor(22, 8, 3, 16, 8, 24, true);
    CHECK(lipschitz_fuzz_ratio(f, 10000, 3) <= 1.0 + 1e-9);
}

TEST_CASE("graph forward agrees with the plain forward") {
    Rng rng(23);
    FeatureExtractor f = make_default_extractor(24, 8, 3, 16, 8, 24, true);
    for (int i = 0; i < 10; ++i) {
        const Tensor x = testutil::random_tensor({3, 8, 8}, rng, 0.0, 1.0);
        const ExtractResult plain = f.extract(x);
        const GraphExtract graph = f.extract_graph(ad::Var::constant(x));
        const TrainGraph tg = f.make_train_graph();
        const GraphExtract train = f.extract_train(tg, ad::Var::constant(x));
        CHECK(plain.pre_projection_norm == doctest::Approx(graph.pre_projection_norm).epsilon(1e-12));
        for (size_t j = 0; j < plain.embedding.size(); ++j) {
            CHECK(plain.embedding[j] == doctest::Approx(graph.embedding.value()[j]).epsilon(1e-12));
            CHECK(plain.embedding[j] == doctest::Approx(train.embedding.value()[j]).epsilon(1e-12));
        }
    }
}

TEST_CASE("layer forwards pass grad_check including the scaling path") {
    Rng rng(25);
    double worst_x = 0.0, worst_param = 0.0;
    for (int i = 0; i < 10; ++i) {
        Rng local = rng.fork(i);
        SllDenseLayer dense = random_dense(6, 4, local);
        const Tensor wsum = testutil::random_tensor({6}, local);
        worst_x = std::max(worst_x, ad::grad_check([&](const ad::Var& x) {
            return ad::dot(dense.forward(x), ad::Var::constant(wsum));
        }, testutil::random_tensor({6}, local), 1e-5));

        // w.r.t. W through the in-graph scaling diagonal
        const Tensor x0 = testutil::random_tensor({6}, local);
        worst_param = std::max(worst_param, ad::grad_check([&](const ad::Var& wflat) {
            std::vector<ad::Var> params = {ad::reshape(wflat, {6, 4}),
                                           ad::Var::constant(dense.bias),
                                           ad::Var::constant(dense.log_q)};
            ad::Var t = dense.derived_train(params);
            return ad::dot(dense.forward_train(params, t, ad::Var::constant(x0)),
                           ad::Var::constant(wsum));
        }, dense.w.reshaped({24}), 1e-6));
        // w.r.t. log_q
        worst_param = std::max(worst_param, ad::grad_check([&](const ad::Var& u) {
            std::vector<ad::Var> params = {ad::Var::constant(dense.w),
                                           ad::Var::constant(dense.bias), u};
            ad::Var t = dense.derived_train(params);
            return ad::dot(dense.forward_train(params, t, ad::Var::constant(x0)),
                           ad::Var::constant(wsum));
        }, dense.log_q, 1e-6));

        SllConvLayer conv = random_conv(3, 2, 3, local);
        const Tensor img = testutil::random_tensor({2, 7, 7}, local);
        const Tensor wsum_img = testutil::random_tensor({2 * 7 * 7}, local);
        worst_x = std::max(worst_x, ad::grad_check([&](const ad::Var& x) {
            ad::Var y = conv.forward(ad::reshape(x, {2, 7, 7}));
            return ad::dot(ad::reshape(y, {2 * 7 * 7}), ad::Var::constant(wsum_img));
        }, img.reshaped({2 * 7 * 7}), 1e-5));
        worst_param = std::max(worst_param, ad::grad_check([&](const ad::Var& kflat) {
            std::vector<ad::Var> params = {ad::reshape(kflat, {3, 2, 3, 3}),
                                           ad::Var::constant(conv.bias),
                                           ad::Var::constant(conv.log_q)};
            ad::Var t = conv.derived_train(params);
            ad::Var y = conv.forward_train(params, t, ad::Var::constant(img));
            return ad::dot(ad::reshape(y, {2 * 7 * 7}), ad::Var::constant(wsum_img));
        }, conv.kernel.reshaped({54}), 1e-6));
    }
    CHECK(worst_x <= 1e-5);
    CHECK(worst_param <= 1e-5);
}

TEST_CASE("top_singular matches a long power-iteration oracle") {
    Rng rng(26);
    for (int i = 0; i < 10; ++i) {
        const size_t m = 2 + rng.index(6), n = 2 + rng.index(6);
        const Tensor w = testutil::random_tensor({m, n}, rng);
        const TopSingular got = top_singular(w);

        std::vector<double> v(n, 0.0);
        Rng vr = rng.fork(i);
        for (auto& x : v) x = vr.uniform(-1, 1);
        for (int it = 0; it < 10000; ++it) {
            std::vector<double> wv(m, 0.0);
            for (size_t r = 0; r < m; ++r) {
                for (size_t c = 0; c < n; ++c) wv[r] += w.at(r, c) * v[c];
            }
            std::vector<double> wtwv(n, 0.0);
            for (size_t r = 0; r < m; ++r) {
                for (size_t c = 0; c < n; ++c) wtwv[c] += w.at(r, c) * wv[r];
            }
            double norm = 0.0;
            for (double x : wtwv) norm += x * x;
            norm = std::sqrt(norm);
            if (norm == 0.0) break;
            for (size_t c = 0; c < n; ++c) v[c] = wtwv[c] / norm;
        }
        std::vector<double> wv(m, 0.0);
        for (size_t r = 0; r < m; ++r) {
            for (size_t c = 0; c < n; ++c) wv[r] += w.at(r, c) * v[c];
        }
        double sigma_oracle = 0.0;
        for (double x : wv) sigma_oracle += x * x;
        sigma_oracle = std::sqrt(sigma_oracle);
        CHECK(got.sigma == doctest::Approx(sigma_oracle).epsilon(1e-9));
    }
}

TEST_CASE("spectral head is exactly norm 1 after normalization") {
    Rng rng(27);
    SpectralLinearLayer head;
    head.w = testutil::random_tensor({8, 32}, rng);
    const TopSingular sv = top_singular(head.normalized());
    CHECK(sv.sigma <= 1.0 + 1e-12);
    CHECK(sv.sigma >= 1.0 - 1e-12);
}

TEST_CASE("checkpoint round trip is bitwise exact") {
    testutil::TempDir dir("ckpt");
    FeatureExtractor f = make_default_extractor(31, 8, 3, 16, 8, 24, true);
    const std::string path = dir.str("model.ckpt");
    save_model(f, path);
    FeatureExtractor g = load_model(path);
    CHECK(g.project == f.project);
    CHECK(g.embed_dim == f.embed_dim);
    CHECK(g.input_shape == f.input_shape);
    const auto pf = f.parameters();
    const auto pg = g.parameters();
    REQUIRE(pf.size() == pg.size());
    for (size_t i = 0; i < pf.size(); ++i) {
        CHECK(pf[i]->data() == pg[i]->data());
        CHECK(pf[i]->shape() == pg[i]->shape());
    }
}

TEST_CASE("checkpoint error paths") {
    testutil::TempDir dir("ckpt-err");
    FeatureExtractor f = make_default_extractor(32, 8, 3, 16, 8, 24, true);
    const std::string path = dir.str("model.ckpt");
    save_model(f, path);

    SUBCASE("corrupted magic names offset 0") {
        std::fstream fs(path, std::ios::in | std::ios::out | std::ios::binary);
        fs.put('X');
        fs.close();
        try {
            load_model(path);
            FAIL("expected FormatError");
        } catch (const FormatError& e) {
            CHECK(std::string(e.what()).find("offset 0") != std::string::npos);
        }
    }
    SUBCASE("missing trailing blob is a format error") {
        std::ifstream in(path, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        in.close();
        // Drop the whole final blob (head: 16x192 f64 payload + LSTN header).
        const size_t blob_size = 4 + 3 + 4 + 2 * 8 + 16 * 192 * 8;
        bytes.resize(bytes.size() - blob_size);
        const std::string cut = dir.str("cut.ckpt");
        std::ofstream out(cut, std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.close();
        CHECK_THROWS_AS(load_model(cut), FormatError);
    }
    SUBCASE("truncated blob payload is an I/O error") {
        std::ifstream in(path, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        in.close();
        bytes.resize(bytes.size() - 13);
        const std::string cut = dir.str("cut2.ckpt");
        std::ofstream out(cut, std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.close();
        CHECK_THROWS_AS(load_model(cut), IoError);
    }
}
