#pragma once

#include <vector>

#include "certsim/tensor.hpp"

namespace certsim {

struct TopSingular {
    double sigma = 0.0;
    std::vector<double> u; // left singular vector, length rows
    std::vector<double> v; // right singular vector, length cols
};

// Largest singular value and vectors of a rank-2 tensor, computed by cyclic
// Jacobi diagonalization of the Gram matrix on the smaller side. Exact to
// machine precision and fully deterministic.
TopSingular top_singular(const Tensor& w);

} // namespace certsim
