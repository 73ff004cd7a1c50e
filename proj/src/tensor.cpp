#include "certsim/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "certsim/errors.hpp"

namespace certsim {

size_t dtype_size(Dtype dt) {
    return dt == Dtype::f32 ? 4 : 8;
}

std::string dtype_name(Dtype dt) {
    return dt == Dtype::f32 ? "f32" : "f64";
}

std::string format_shape(const std::vector<size_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

size_t shape_numel(const std::vector<size_t>& shape) {
    size_t n = 1;
    for (size_t d : shape) n *= d;
    return n;
}

Tensor::Tensor() : dtype_(Dtype::f64), data_(1, 0.0) {}

Tensor::Tensor(std::vector<size_t> shape, Dtype dtype)
    : shape_(std::move(shape)), dtype_(dtype) {
    for (size_t d : shape_) {
        if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + format_shape(shape_));
    }
    data_.assign(shape_numel(shape_), 0.0);
}

Tensor Tensor::scalar(double v, Dtype dtype) {
    Tensor t({}, dtype);
    t.data_[0] = v;
    t.quantize();
    return t;
}

Tensor Tensor::full(std::vector<size_t> shape, double v, Dtype dtype) {
    Tensor t(std::move(shape), dtype);
    std::fill(t.data_.begin(), t.data_.end(), v);
    t.quantize();
    return t;
}

Tensor Tensor::from_data(std::vector<size_t> shape, std::vector<double> data, Dtype dtype) {
    Tensor t;
    t.shape_ = std::move(shape);
    t.dtype_ = dtype;
    if (shape_numel(t.shape_) != data.size()) {
        throw DimensionError("payload of " + std::to_string(data.size()) +
                             " values does not fill shape " + format_shape(t.shape_));
    }
    t.data_ = std::move(data);
    t.quantize();
    return t;
}

Tensor Tensor::zeros_like(const Tensor& other) {
    Tensor t;
    t.shape_ = other.shape_;
    t.dtype_ = other.dtype_;
    t.data_.assign(other.size(), 0.0);
    return t;
}

bool Tensor::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

void Tensor::quantize() {
    if (dtype_ == Dtype::f32) {
        for (double& v : data_) v = static_cast<double>(static_cast<float>(v));
    }
}

Tensor Tensor::with_dtype(Dtype dt) const {
    Tensor t = *this;
    t.dtype_ = dt;
    t.quantize();
    return t;
}

Tensor Tensor::reshaped(std::vector<size_t> shape) const {
    if (shape_numel(shape) != size()) {
        throw DimensionError("cannot reshape " + format_shape(shape_) + " to " + format_shape(shape));
    }
    Tensor t = *this;
    t.shape_ = std::move(shape);
    return t;
}

double l2_norm(const Tensor& x) {
    double acc = 0.0;
    for (double v : x.data()) acc += v * v;
    return std::sqrt(acc);
}

double l2_distance(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) {
        throw DimensionError("l2_distance shape mismatch: " + format_shape(a.shape()) +
                             " vs " + format_shape(b.shape()));
    }
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return std::sqrt(acc);
}

double dot(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) {
        throw DimensionError("dot shape mismatch: " + format_shape(a.shape()) +
                             " vs " + format_shape(b.shape()));
    }
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2) {
        throw DimensionError("matmul requires rank-2 operands, got " +
                             format_shape(a.shape()) + " and " + format_shape(b.shape()));
    }
    if (a.shape()[1] != b.shape()[0]) {
        throw DimensionError("matmul inner dimensions disagree: " +
                             format_shape(a.shape()) + " vs " + format_shape(b.shape()));
    }
    if (a.dtype() != b.dtype()) {
        throw DimensionError("matmul dtype mismatch: " + dtype_name(a.dtype()) +
                             " vs " + dtype_name(b.dtype()));
    }
    const size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    Tensor out({m, n}, a.dtype());
    const double* pa = a.ptr();
    const double* pb = b.ptr();
    double* po = out.ptr();
    for (size_t i = 0; i < m; ++i) {
        for (size_t kk = 0; kk < k; ++kk) {
            const double av = pa[i * k + kk];
            if (av == 0.0) continue;
            const double* brow = pb + kk * n;
            double* orow = po + i * n;
            for (size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    out.quantize();
    return out;
}

Tensor relu(const Tensor& x) {
    Tensor out = x;
    for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) {
        throw DimensionError("add shape mismatch: " + format_shape(a.shape()) +
                             " vs " + format_shape(b.shape()));
    }
    Tensor out = a;
    for (size_t i = 0; i < out.size(); ++i) out[i] += b[i];
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) {
        throw DimensionError("sub shape mismatch: " + format_shape(a.shape()) +
                             " vs " + format_shape(b.shape()));
    }
    Tensor out = a;
    for (size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
    return out;
}

Tensor scale(const Tensor& a, double c) {
    Tensor out = a;
    for (double& v : out.data()) v *= c;
    return out;
}

Tensor clamp01(const Tensor& a) {
    Tensor out = a;
    for (double& v : out.data()) v = std::min(1.0, std::max(0.0, v));
    return out;
}

} // namespace certsim
