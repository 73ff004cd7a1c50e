#pragma once

#include <cstdint>
#include <iosfwd>

#include "certsim/layers.hpp"

namespace certsim {

// Built-in health suite: operator gradient checks, Lipschitz fuzzing of the
// layers and a small extractor, projection properties, and format round
// trips. Prints one line per suite; returns true iff everything passed.
bool run_selfcheck(std::ostream& out);

// Max over `pairs` random input pairs of ||f(x)-f(y)|| / ||x-y||.
double lipschitz_fuzz_ratio(const FeatureExtractor& f, size_t pairs, uint64_t seed);

// Same ratio for a single dense or conv layer on random inputs.
double lipschitz_fuzz_ratio_dense(const SllDenseLayer& layer, size_t pairs, uint64_t seed);
double lipschitz_fuzz_ratio_conv(const SllConvLayer& layer, size_t image_size, size_t pairs,
                                 uint64_t seed);

} // namespace certsim
