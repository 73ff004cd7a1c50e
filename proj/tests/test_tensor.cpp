#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "certsim/errors.hpp"
#include "certsim/lstn.hpp"
#include "certsim/rng.hpp"
#include "certsim/tensor.hpp"
#include "test_helpers.hpp"

using namespace certsim;

TEST_CASE("tensor invariants") {
    Tensor t({2, 3});
    CHECK(t.size() == 6);
    CHECK(t.ndim() == 2);
    CHECK(t.dtype() == Dtype::f64);

    CHECK_THROWS_AS(Tensor({2, 0}), DimensionError);
    CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1.0, 2.0, 3.0}), DimensionError);

    Tensor s = Tensor::scalar(4.5);
    CHECK(s.ndim() == 0);
    CHECK(s.size() == 1);
    CHECK(s[0] == 4.5);
}

TEST_CASE("matmul identity and projector rows") {
    const Tensor eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    const Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    const Tensor prod = matmul(eye, a);
    CHECK(prod.data() == a.data());

    const Tensor proj = Tensor::from_data({2, 2}, {1, 0, 0, 0});
    const Tensor v = Tensor::from_data({2, 1}, {5, 7});
    const Tensor out = matmul(proj, v);
    CHECK(out[0] == 5.0);
    CHECK(out[1] == 0.0);
}

TEST_CASE("matmul matches the naive triple-loop oracle") {
    Rng rng(123);
    for (int trial = 0; trial < 20; ++trial) {
        const size_t m = 1 + rng.index(32), k = 1 + rng.index(32), n = 1 + rng.index(32);
        const Tensor a = testutil::random_tensor({m, k}, rng);
        const Tensor b = testutil::random_tensor({k, n}, rng);
        const Tensor got = matmul(a, b);
        const Tensor want = testutil::naive_matmul(a, b);
        for (size_t i = 0; i < got.size(); ++i) {
            CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
        }
    }
}

TEST_CASE("matmul rejects mismatched shapes with both shapes in the message") {
    const Tensor a({2, 3});
    const Tensor b({4, 2});
    try {
        matmul(a, b);
        FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2x3]") != std::string::npos);
        CHECK(msg.find("[4x2]") != std::string::npos);
    }
}

TEST_CASE("relu") {
    const Tensor x = Tensor::from_data({3}, {-1, 0, 2});
    const Tensor y = relu(x);
    CHECK(y[0] == 0.0);
    CHECK(y[1] == 0.0);
    CHECK(y[2] == 2.0);

    const Tensor allneg_out = relu(Tensor::from_data({4}, {-5, -1, -0.5, -2}));
    for (double v : allneg_out.data()) CHECK(v == 0.0);
}

TEST_CASE("l2_norm") {
    CHECK(l2_norm(Tensor::from_data({2}, {3, 4})) == doctest::Approx(5.0));
    CHECK(l2_norm(Tensor({7})) == 0.0);

    Rng rng(7);
    const Tensor v = testutil::random_tensor({100}, rng);
    double acc = 0.0;
    for (double x : v.data()) acc += x * x;
    CHECK(l2_norm(v) == doctest::Approx(std::sqrt(acc)).epsilon(1e-12));
}

TEST_CASE("lstn round trip is bit exact") {
    Rng rng(99);
    SUBCASE("f64") {
        const Tensor t = testutil::random_tensor({2, 3, 4}, rng);
        std::stringstream ss;
        write_lstn(ss, t);
        const Tensor back = read_lstn(ss);
        CHECK(back.shape() == t.shape());
        CHECK(back.dtype() == Dtype::f64);
        CHECK(back.data() == t.data());
    }
    SUBCASE("f32") {
        Tensor t = testutil::random_tensor({5}, rng).with_dtype(Dtype::f32);
        std::stringstream ss;
        write_lstn(ss, t);
        const Tensor back = read_lstn(ss);
        CHECK(back.dtype() == Dtype::f32);
        CHECK(back.data() == t.data());
        // Serialized bytes are reproduced exactly on an immediate re-save.
        std::stringstream ss2;
        write_lstn(ss2, back);
        CHECK(ss.str() == ss2.str());
    }
    SUBCASE("scalar") {
        const Tensor t = Tensor::scalar(-2.25);
        std::stringstream ss;
        write_lstn(ss, t);
        const Tensor back = read_lstn(ss);
        CHECK(back.ndim() == 0);
        CHECK(back[0] == -2.25);
    }
}

TEST_CASE("lstn error paths") {
    SUBCASE("bad magic names offset 0") {
        std::stringstream ss("XSTNxxxxxxxxxxxxxxxx");
        try {
            read_lstn(ss);
            FAIL("expected FormatError");
        } catch (const FormatError& e) {
            CHECK(std::string(e.what()).find("offset 0") != std::string::npos);
        }
    }
    SUBCASE("truncated payload is an I/O error") {
        Tensor t = Tensor::from_data({4}, {1, 2, 3, 4});
        std::stringstream ss;
        write_lstn(ss, t);
        std::string bytes = ss.str();
        bytes.resize(bytes.size() - 10);
        std::stringstream truncated(bytes);
        CHECK_THROWS_AS(read_lstn(truncated), IoError);
    }
    SUBCASE("unknown dtype code") {
        Tensor t = Tensor::from_data({1}, {1});
        std::stringstream ss;
        write_lstn(ss, t);
        std::string bytes = ss.str();
        bytes[5] = 9;
        std::stringstream bad(bytes);
        CHECK_THROWS_AS(read_lstn(bad), FormatError);
    }
}

TEST_CASE("rng determinism and forking") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

    Rng base(7);
    Rng f1 = base.fork(1);
    Rng f2 = base.fork(2);
    CHECK(f1.next_u64() != f2.next_u64());

    Rng n(3);
    for (int i = 0; i < 1000; ++i) {
        const double u = n.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
}
