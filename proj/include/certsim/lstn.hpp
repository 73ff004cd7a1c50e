#pragma once

#include <iosfwd>
#include <string>

#include "certsim/tensor.hpp"

namespace certsim {

// "LSTN" binary tensor format, version 1. Layout:
//   magic "LSTN" | version u8 = 1 | dtype u8 (1 = f32, 2 = f64) | ndim u8 |
//   4 zero padding bytes | ndim little-endian u64 dims | row-major
//   little-endian payload.
// Round-trips are bit-exact for both dtypes.

void write_lstn(std::ostream& os, const Tensor& t);
Tensor read_lstn(std::istream& is);

void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

} // namespace certsim
