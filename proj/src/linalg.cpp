#include "certsim/linalg.hpp"

#include <cmath>

#include "certsim/errors.hpp"

namespace certsim {

namespace {

// Cyclic Jacobi on a symmetric matrix held row-major in a. Accumulates the
// rotations into vecs (n x n, starts as identity). Returns after the
// off-diagonal mass is negligible.
void jacobi_eigen(std::vector<double>& a, std::vector<double>& vecs, size_t n) {
    vecs.assign(n * n, 0.0);
    for (size_t i = 0; i < n; ++i) vecs[i * n + i] = 1.0;
    if (n == 1) return;
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (size_t p = 0; p < n; ++p) {
            for (size_t q = p + 1; q < n; ++q) off += a[p * n + q] * a[p * n + q];
        }
        double diag = 0.0;
        for (size_t p = 0; p < n; ++p) diag += a[p * n + p] * a[p * n + p];
        if (off <= 1e-30 * (diag + 1e-300)) break;
        for (size_t p = 0; p < n; ++p) {
            for (size_t q = p + 1; q < n; ++q) {
                const double apq = a[p * n + q];
                if (apq == 0.0) continue;
                const double app = a[p * n + p];
                const double aqq = a[q * n + q];
                const double tau = (aqq - app) / (2.0 * apq);
                const double t = (tau >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(tau) + std::sqrt(1.0 + tau * tau));
                const double cs = 1.0 / std::sqrt(1.0 + t * t);
                const double sn = t * cs;
                for (size_t k = 0; k < n; ++k) {
                    const double akp = a[k * n + p];
                    const double akq = a[k * n + q];
                    a[k * n + p] = cs * akp - sn * akq;
                    a[k * n + q] = sn * akp + cs * akq;
                }
                for (size_t k = 0; k < n; ++k) {
                    const double apk = a[p * n + k];
                    const double aqk = a[q * n + k];
                    a[p * n + k] = cs * apk - sn * aqk;
                    a[q * n + k] = sn * apk + cs * aqk;
                }
                for (size_t k = 0; k < n; ++k) {
                    const double vkp = vecs[k * n + p];
                    const double vkq = vecs[k * n + q];
                    vecs[k * n + p] = cs * vkp - sn * vkq;
                    vecs[k * n + q] = sn * vkp + cs * vkq;
                }
            }
        }
    }
}

} // namespace

TopSingular top_singular(const Tensor& w) {
    if (w.ndim() != 2) {
        throw DimensionError("top_singular requires a rank-2 tensor, got " + format_shape(w.shape()));
    }
    const size_t rows = w.shape()[0];
    const size_t cols = w.shape()[1];
    const bool gram_on_cols = cols <= rows;
    const size_t n = gram_on_cols ? cols : rows;

    // Gram matrix of the smaller side.
    std::vector<double> a(n * n, 0.0);
    if (gram_on_cols) {
        for (size_t r = 0; r < rows; ++r) {
            const double* row = w.ptr() + r * cols;
            for (size_t i = 0; i < n; ++i) {
                for (size_t j = i; j < n; ++j) a[i * n + j] += row[i] * row[j];
            }
        }
    } else {
        for (size_t i = 0; i < n; ++i) {
            for (size_t j = i; j < n; ++j) {
                double acc = 0.0;
                const double* ri = w.ptr() + i * cols;
                const double* rj = w.ptr() + j * cols;
                for (size_t cidx = 0; cidx < cols; ++cidx) acc += ri[cidx] * rj[cidx];
                a[i * n + j] = acc;
            }
        }
    }
    for (size_t i = 0; i < n; ++i) {
        for (size_t j = 0; j < i; ++j) a[i * n + j] = a[j * n + i];
    }

    std::vector<double> vecs;
    jacobi_eigen(a, vecs, n);

    size_t best = 0;
    double lambda = a[0];
    for (size_t i = 1; i < n; ++i) {
        if (a[i * n + i] > lambda) {
            lambda = a[i * n + i];
            best = i;
        }
    }
    lambda = std::max(lambda, 0.0);

    TopSingular out;
    out.sigma = std::sqrt(lambda);
    out.u.assign(rows, 0.0);
    out.v.assign(cols, 0.0);
    std::vector<double> small(n);
    for (size_t i = 0; i < n; ++i) small[i] = vecs[i * n + best];

    if (gram_on_cols) {
        out.v = small;
        if (out.sigma > 0.0) {
            for (size_t r = 0; r < rows; ++r) {
                double acc = 0.0;
                const double* row = w.ptr() + r * cols;
                for (size_t cidx = 0; cidx < cols; ++cidx) acc += row[cidx] * out.v[cidx];
                out.u[r] = acc / out.sigma;
            }
        }
    } else {
        out.u = small;
        if (out.sigma > 0.0) {
            for (size_t cidx = 0; cidx < cols; ++cidx) {
                double acc = 0.0;
                for (size_t r = 0; r < rows; ++r) acc += w.ptr()[r * cols + cidx] * out.u[r];
                out.v[cidx] = acc / out.sigma;
            }
        }
    }
    return out;
}

} // namespace certsim
