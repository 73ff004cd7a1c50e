#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace certsim {

enum class Dtype : uint8_t { f32 = 1, f64 = 2 };

size_t dtype_size(Dtype dt);
std::string dtype_name(Dtype dt);

std::string format_shape(const std::vector<size_t>& shape);

// Dense row-major n-dimensional array. The payload is always held as f64;
// the dtype tag selects the on-disk precision. A tensor tagged f32 is kept
// quantized so that in-memory values match their serialized form exactly.
// Scalars are rank 0 (empty shape, one element).
class Tensor {
public:
    Tensor();
    explicit Tensor(std::vector<size_t> shape, Dtype dtype = Dtype::f64);

    static Tensor scalar(double v, Dtype dtype = Dtype::f64);
    static Tensor full(std::vector<size_t> shape, double v, Dtype dtype = Dtype::f64);
    static Tensor from_data(std::vector<size_t> shape, std::vector<double> data,
                            Dtype dtype = Dtype::f64);
    static Tensor zeros_like(const Tensor& other);

    const std::vector<size_t>& shape() const { return shape_; }
    Dtype dtype() const { return dtype_; }
    size_t ndim() const { return shape_.size(); }
    size_t size() const { return data_.size(); }
    size_t dim(size_t i) const { return shape_[i]; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }
    double* ptr() { return data_.data(); }
    const double* ptr() const { return data_.data(); }

    double& operator[](size_t i) { return data_[i]; }
    double operator[](size_t i) const { return data_[i]; }

    // 2-D accessors; caller guarantees rank 2.
    double& at(size_t r, size_t c) { return data_[r * shape_[1] + c]; }
    double at(size_t r, size_t c) const { return data_[r * shape_[1] + c]; }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool all_finite() const;

    // Rounds every value through f32 when tagged f32; no-op for f64.
    void quantize();

    Tensor with_dtype(Dtype dt) const;
    Tensor reshaped(std::vector<size_t> shape) const;

private:
    std::vector<size_t> shape_;
    Dtype dtype_;
    std::vector<double> data_;
};

size_t shape_numel(const std::vector<size_t>& shape);

// --- plain (non-differentiating) numeric helpers -------------------------

// sqrt of the sum of squares, accumulated in f64.
double l2_norm(const Tensor& x);
double l2_distance(const Tensor& a, const Tensor& b);
double dot(const Tensor& a, const Tensor& b);

// Standard matrix product for rank-2 operands. Inner dimensions and dtypes
// must agree; violations raise DimensionError carrying both shapes.
Tensor matmul(const Tensor& a, const Tensor& b);

// Elementwise max(0, x).
Tensor relu(const Tensor& x);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor clamp01(const Tensor& a);

} // namespace certsim
