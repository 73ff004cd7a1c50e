#include "certsim/kernels.hpp"

namespace certsim::kernels {

namespace {

// Wrapped source row/col for output index i and tap u: (i + u - pad) mod s.
std::vector<size_t> forward_index(size_t s, size_t ks) {
    const size_t pad = (ks - 1) / 2;
    std::vector<size_t> idx(s * ks);
    for (size_t i = 0; i < s; ++i) {
        for (size_t u = 0; u < ks; ++u) {
            idx[i * ks + u] = (i + u + s - pad) % s;
        }
    }
    return idx;
}

// Wrapped source index for the adjoint: (i - u + pad) mod s.
std::vector<size_t> adjoint_index(size_t s, size_t ks) {
    const size_t pad = (ks - 1) / 2;
    std::vector<size_t> idx(s * ks);
    for (size_t i = 0; i < s; ++i) {
        for (size_t u = 0; u < ks; ++u) {
            idx[i * ks + u] = (i + pad + s - u) % s;
        }
    }
    return idx;
}

} // namespace

void conv2d_circular(const double* x, const double* kern, double* out,
                     size_t c, size_t h, size_t s, size_t ks) {
    const auto idx = forward_index(s, ks);
    for (size_t o = 0; o < h; ++o) {
        for (size_t ch = 0; ch < c; ++ch) {
            const double* kslice = kern + ((o * c + ch) * ks) * ks;
            const double* xc = x + ch * s * s;
            double* oc = out + o * s * s;
            for (size_t i = 0; i < s; ++i) {
                for (size_t u = 0; u < ks; ++u) {
                    const double* xrow = xc + idx[i * ks + u] * s;
                    const double* krow = kslice + u * ks;
                    double* orow = oc + i * s;
                    for (size_t j = 0; j < s; ++j) {
                        double acc = 0.0;
                        for (size_t v = 0; v < ks; ++v) {
                            acc += krow[v] * xrow[idx[j * ks + v]];
                        }
                        orow[j] += acc;
                    }
                }
            }
        }
    }
}

void conv2d_adjoint(const double* z, const double* kern, double* out,
                    size_t c, size_t h, size_t s, size_t ks) {
    const auto idx = adjoint_index(s, ks);
    for (size_t o = 0; o < h; ++o) {
        for (size_t ch = 0; ch < c; ++ch) {
            const double* kslice = kern + ((o * c + ch) * ks) * ks;
            const double* zc = z + o * s * s;
            double* oc = out + ch * s * s;
            for (size_t i = 0; i < s; ++i) {
                for (size_t u = 0; u < ks; ++u) {
                    const double* zrow = zc + idx[i * ks + u] * s;
                    const double* krow = kslice + u * ks;
                    double* orow = oc + i * s;
                    for (size_t j = 0; j < s; ++j) {
                        double acc = 0.0;
                        for (size_t v = 0; v < ks; ++v) {
                            acc += krow[v] * zrow[idx[j * ks + v]];
                        }
                        orow[j] += acc;
                    }
                }
            }
        }
    }
}

void conv2d_kernel_grad(const double* g, const double* x, double* dkern,
                        size_t c, size_t h, size_t s, size_t ks) {
    const auto idx = forward_index(s, ks);
    for (size_t o = 0; o < h; ++o) {
        for (size_t ch = 0; ch < c; ++ch) {
            double* kslice = dkern + ((o * c + ch) * ks) * ks;
            const double* xc = x + ch * s * s;
            const double* gc = g + o * s * s;
            for (size_t u = 0; u < ks; ++u) {
                for (size_t v = 0; v < ks; ++v) {
                    double acc = 0.0;
                    for (size_t i = 0; i < s; ++i) {
                        const double* xrow = xc + idx[i * ks + u] * s;
                        const double* grow = gc + i * s;
                        for (size_t j = 0; j < s; ++j) {
                            acc += grow[j] * xrow[idx[j * ks + v]];
                        }
                    }
                    kslice[u * ks + v] += acc;
                }
            }
        }
    }
}

void adjoint_kernel_grad(const double* g, const double* z, double* dkern,
                         size_t c, size_t h, size_t s, size_t ks) {
    const auto idx = adjoint_index(s, ks);
    for (size_t o = 0; o < h; ++o) {
        for (size_t ch = 0; ch < c; ++ch) {
            double* kslice = dkern + ((o * c + ch) * ks) * ks;
            const double* zc = z + o * s * s;
            const double* gc = g + ch * s * s;
            for (size_t u = 0; u < ks; ++u) {
                for (size_t v = 0; v < ks; ++v) {
                    double acc = 0.0;
                    for (size_t i = 0; i < s; ++i) {
                        const double* zrow = zc + idx[i * ks + u] * s;
                        const double* grow = gc + i * s;
                        for (size_t j = 0; j < s; ++j) {
                            acc += grow[j] * zrow[idx[j * ks + v]];
                        }
                    }
                    kslice[u * ks + v] += acc;
                }
            }
        }
    }
}

void kernel_corr(const double* kern, double* out, size_t h, size_t c, size_t ks) {
    const size_t span = 2 * ks - 1;
    const long off = static_cast<long>(ks) - 1;
    for (size_t i = 0; i < h; ++i) {
        for (size_t j = 0; j < h; ++j) {
            for (size_t a = 0; a < span; ++a) {
                const long dr = static_cast<long>(a) - off;
                for (size_t b = 0; b < span; ++b) {
                    const long dc = static_cast<long>(b) - off;
                    double acc = 0.0;
                    for (size_t ch = 0; ch < c; ++ch) {
                        const double* ki = kern + ((i * c + ch) * ks) * ks;
                        const double* kj = kern + ((j * c + ch) * ks) * ks;
                        for (size_t u = 0; u < ks; ++u) {
                            const long u2 = static_cast<long>(u) + dr;
                            if (u2 < 0 || u2 >= static_cast<long>(ks)) continue;
                            for (size_t v = 0; v < ks; ++v) {
                                const long v2 = static_cast<long>(v) + dc;
                                if (v2 < 0 || v2 >= static_cast<long>(ks)) continue;
                                acc += ki[u * ks + v] * kj[static_cast<size_t>(u2) * ks + static_cast<size_t>(v2)];
                            }
                        }
                    }
                    out[((i * h + j) * span + a) * span + b] = acc;
                }
            }
        }
    }
}

void kernel_corr_grad(const double* g, const double* kern, double* dkern,
                      size_t h, size_t c, size_t ks) {
    const size_t span = 2 * ks - 1;
    const long off = static_cast<long>(ks) - 1;
    for (size_t i = 0; i < h; ++i) {
        for (size_t j = 0; j < h; ++j) {
            for (size_t a = 0; a < span; ++a) {
                const long dr = static_cast<long>(a) - off;
                for (size_t b = 0; b < span; ++b) {
                    const long dc = static_cast<long>(b) - off;
                    const double gv = g[((i * h + j) * span + a) * span + b];
                    if (gv == 0.0) continue;
                    for (size_t ch = 0; ch < c; ++ch) {
                        const double* ki = kern + ((i * c + ch) * ks) * ks;
                        const double* kj = kern + ((j * c + ch) * ks) * ks;
                        double* di = dkern + ((i * c + ch) * ks) * ks;
                        double* dj = dkern + ((j * c + ch) * ks) * ks;
                        for (size_t u = 0; u < ks; ++u) {
                            const long u2 = static_cast<long>(u) + dr;
                            if (u2 < 0 || u2 >= static_cast<long>(ks)) continue;
                            for (size_t v = 0; v < ks; ++v) {
                                const long v2 = static_cast<long>(v) + dc;
                                if (v2 < 0 || v2 >= static_cast<long>(ks)) continue;
                                const size_t p2 = static_cast<size_t>(u2) * ks + static_cast<size_t>(v2);
                                di[u * ks + v] += gv * kj[p2];
                                dj[p2] += gv * ki[u * ks + v];
                            }
                        }
                    }
                }
            }
        }
    }
}

} // namespace certsim::kernels
