#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "certsim/tensor.hpp"

namespace certsim::ad {

// Reverse-mode differentiation over a dynamically built operation graph.
// Each op records its parents and a closure that pushes the upstream
// gradient into them; backward() walks the graph once in reverse
// topological order. Gradients accumulate additively, so a value feeding
// several consumers receives the sum of all path gradients.

struct Node {
    Tensor value;
    Tensor grad;
    bool grad_ready = false;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    Tensor& grad_buffer();
};

class Var {
public:
    Var() = default;

    // A parameter or input that should receive a gradient.
    static Var leaf(Tensor value);
    // A value treated as constant; backward never descends into it.
    static Var constant(Tensor value);

    bool defined() const { return node_ != nullptr; }
    const Tensor& value() const;
    const Tensor& grad() const;
    bool requires_grad() const;

    // Runs reverse-mode accumulation from this (scalar) value.
    void backward() const;

    std::shared_ptr<Node> node() const { return node_; }
    static Var wrap(std::shared_ptr<Node> n);

private:
    std::shared_ptr<Node> node_;
};

Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn);

// --- elementwise -----------------------------------------------------------
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var neg(const Var& a);
Var scale(const Var& a, double c);
Var add_scalar(const Var& a, double c);
Var relu(const Var& a);
Var abs(const Var& a);   // subgradient 0 at 0
Var exp(const Var& a);
Var log(const Var& a);
Var sqrt(const Var& a);  // subgradient 0 at 0

// --- reductions and contractions -------------------------------------------
Var sum(const Var& a);
Var mean(const Var& a);
Var dot(const Var& a, const Var& b);
Var l2norm(const Var& a);

// --- linear algebra ---------------------------------------------------------
Var matmul(const Var& a, const Var& b);
Var matvec(const Var& m, const Var& x);
Var transpose(const Var& a);
Var reshape(const Var& a, std::vector<size_t> shape);

// Broadcast a rank-0 graph scalar over a tensor.
Var mul_scalar(const Var& a, const Var& s);
Var div_scalar(const Var& a, const Var& s);

// --- convolution (circular padding, stride 1, odd kernel) -------------------
Var conv2d_circular(const Var& x, const Var& kern);
Var conv2d_adjoint(const Var& z, const Var& kern);
Var kernel_corr(const Var& kern);
Var add_channel_bias(const Var& z, const Var& bias);
Var div_channel(const Var& z, const Var& t);

// W / sigma_max(W). The backward uses the exact singular-value derivative
// u v^T at the (cached) top singular pair.
Var spectral_normalize(const Var& w);

// --- verification ------------------------------------------------------------
// Compares the reverse-mode gradient of fn at `point` against central finite
// differences with the given step. Returns the maximum over coordinates of
// |g_ad - g_fd| / max(1, |g_fd|). Throws NumericError if fn evaluates to a
// non-finite value.
double grad_check(const std::function<Var(const Var&)>& fn, const Tensor& point, double step);

} // namespace certsim::ad
