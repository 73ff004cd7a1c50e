#pragma once

#include <filesystem>
#include <string>

#include "certsim/layers.hpp"
#include "certsim/rng.hpp"
#include "certsim/tensor.hpp"

namespace testutil {

inline certsim::Tensor random_tensor(std::vector<size_t> shape, certsim::Rng& rng,
                                     double lo = -1.0, double hi = 1.0) {
    certsim::Tensor t(std::move(shape));
    for (double& v : t.data()) v = rng.uniform(lo, hi);
    return t;
}

inline certsim::Tensor random_tensor_away_from_zero(std::vector<size_t> shape, certsim::Rng& rng,
                                                    double margin = 1e-2) {
    certsim::Tensor t(std::move(shape));
    for (double& v : t.data()) {
        const double mag = rng.uniform(margin, 1.0);
        v = rng.uniform() < 0.5 ? -mag : mag;
    }
    return t;
}

// Independent oracle: naive triple-loop matrix product.
inline certsim::Tensor naive_matmul(const certsim::Tensor& a, const certsim::Tensor& b) {
    const size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    certsim::Tensor out({m, n});
    for (size_t i = 0; i < m; ++i) {
        for (size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (size_t kk = 0; kk < k; ++kk) acc += a.at(i, kk) * b.at(kk, j);
            out.at(i, j) = acc;
        }
    }
    return out;
}

// Oracle: materialize the conv operator as an explicit dense SLL layer via
// im2col with circular indexing. Exact equivalence requires s >= 2k-1 (no
// offset aliasing in the scaling row sums).
inline certsim::SllDenseLayer im2col_dense(const certsim::SllConvLayer& conv, size_t s) {
    const size_t h = conv.inner_channels(), c = conv.channels(), k = conv.kernel_size();
    const size_t pad = (k - 1) / 2;
    const size_t n_in = c * s * s, n_inner = h * s * s;
    certsim::SllDenseLayer dense;
    dense.w = certsim::Tensor({n_in, n_inner});
    dense.bias = certsim::Tensor({n_inner});
    dense.log_q = certsim::Tensor({n_inner});
    for (size_t o = 0; o < h; ++o) {
        for (size_t i = 0; i < s; ++i) {
            for (size_t j = 0; j < s; ++j) {
                const size_t col = (o * s + i) * s + j;
                dense.bias[col] = conv.bias[o];
                dense.log_q[col] = conv.log_q[o];
                for (size_t ch = 0; ch < c; ++ch) {
                    for (size_t u = 0; u < k; ++u) {
                        for (size_t v = 0; v < k; ++v) {
                            const size_t r = (i + u + s - pad) % s;
                            const size_t cc = (j + v + s - pad) % s;
                            const size_t row = (ch * s + r) * s + cc;
                            dense.w.at(row, col) += conv.kernel[((o * c + ch) * k + u) * k + v];
                        }
                    }
                }
            }
        }
    }
    return dense;
}

class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        path_ = std::filesystem::temp_directory_path() / ("certsim-test-" + tag);
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    std::string str(const std::string& name = "") const {
        return name.empty() ? path_.string() : (path_ / name).string();
    }

private:
    std::filesystem::path path_;
};

} // namespace testutil
