#pragma once

#include <cstddef>
#include <vector>

namespace certsim::kernels {

// Dense kernels shared by the plain forward paths and the differentiating
// ops. All convolution kernels use stride 1, odd kernel size and circular
// padding, so spatial shapes are preserved.

// out[h][s][s] += cross-correlation of x[c][s][s] with k[h][c][ks][ks].
void conv2d_circular(const double* x, const double* kern, double* out,
                     size_t c, size_t h, size_t s, size_t ks);

// out[c][s][s] += adjoint of conv2d_circular applied to z[h][s][s].
void conv2d_adjoint(const double* z, const double* kern, double* out,
                    size_t c, size_t h, size_t s, size_t ks);

// dkern[h][c][ks][ks] += gradient of conv2d_circular w.r.t. the kernel,
// given upstream g[h][s][s] and input x[c][s][s].
void conv2d_kernel_grad(const double* g, const double* x, double* dkern,
                        size_t c, size_t h, size_t s, size_t ks);

// dkern += gradient of conv2d_adjoint w.r.t. the kernel, given upstream
// g[c][s][s] and input z[h][s][s].
void adjoint_kernel_grad(const double* g, const double* z, double* dkern,
                         size_t c, size_t h, size_t s, size_t ks);

// Self cross-correlation of kernel slices over all spatial offsets:
// out[i][j][a][b] = sum_{c,u,v} k[i][c][u][v] * k[j][c][u+a-(ks-1)][v+b-(ks-1)]
// with out shaped [h][h][2ks-1][2ks-1] (overwritten, not accumulated).
void kernel_corr(const double* kern, double* out, size_t h, size_t c, size_t ks);

// dkern += gradient of kernel_corr given upstream g[h][h][2ks-1][2ks-1].
void kernel_corr_grad(const double* g, const double* kern, double* dkern,
                      size_t h, size_t c, size_t ks);

} // namespace certsim::kernels
