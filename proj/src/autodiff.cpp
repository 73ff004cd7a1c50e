#include "certsim/autodiff.hpp"

#include <cmath>
#include <unordered_set>

#include "certsim/errors.hpp"
#include "certsim/kernels.hpp"
#include "certsim/linalg.hpp"

namespace certsim::ad {

Tensor& Node::grad_buffer() {
    if (!grad_ready) {
        grad = Tensor::zeros_like(value);
        grad_ready = true;
    }
    return grad;
}

Var Var::leaf(Tensor value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = true;
    Var v;
    v.node_ = std::move(n);
    return v;
}

Var Var::constant(Tensor value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = false;
    Var v;
    v.node_ = std::move(n);
    return v;
}

Var Var::wrap(std::shared_ptr<Node> n) {
    Var v;
    v.node_ = std::move(n);
    return v;
}

const Tensor& Var::value() const {
    if (!node_) throw NumericError("use of undefined Var");
    return node_->value;
}

const Tensor& Var::grad() const {
    if (!node_ || !node_->grad_ready) throw NumericError("gradient not populated; call backward() first");
    return node_->grad;
}

bool Var::requires_grad() const {
    return node_ && node_->requires_grad;
}

void Var::backward() const {
    if (!node_) throw NumericError("backward() on undefined Var");
    if (node_->value.size() != 1) {
        throw DimensionError("backward() requires a scalar value, got " + format_shape(node_->value.shape()));
    }
    // Iterative post-order DFS; children appear after all their parents are
    // queued, so the reversed order visits each node exactly once with its
    // gradient complete.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            Node* p = n->parents[next].get();
            ++next;
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    node_->grad_buffer()[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && n->grad_ready) n->backward_fn(*n);
    }
}

Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->parents.reserve(parents.size());
    for (auto& p : parents) {
        if (!p.defined()) throw NumericError("op built from undefined Var");
        n->requires_grad = n->requires_grad || p.node()->requires_grad;
        n->parents.push_back(p.node());
    }
    if (n->requires_grad) n->backward_fn = std::move(backward_fn);
    return Var::wrap(std::move(n));
}

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b)) {
        throw DimensionError(std::string(op) + " shape mismatch: " + format_shape(a.shape()) +
                             " vs " + format_shape(b.shape()));
    }
}

void require_scalar(const Tensor& t, const char* op) {
    if (t.size() != 1) {
        throw DimensionError(std::string(op) + " expects a scalar, got " + format_shape(t.shape()));
    }
}

// Accumulates into a parent's gradient when it participates in backward.
bool wants_grad(Node& self, size_t i) {
    return self.parents[i]->requires_grad;
}

} // namespace

Var add(const Var& a, const Var& b) {
    require_same_shape(a.value(), b.value(), "add");
    Tensor out = a.value();
    for (size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
    return make_op(std::move(out), {a, b}, [](Node& self) {
        for (size_t p = 0; p < 2; ++p) {
            if (!wants_grad(self, p)) continue;
            Tensor& g = self.parents[p]->grad_buffer();
            for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    });
}

Var sub(const Var& a, const Var& b) {
    require_same_shape(a.value(), b.value(), "sub");
    Tensor out = a.value();
    for (size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
    return make_op(std::move(out), {a, b}, [](Node& self) {
        if (wants_grad(self, 0)) {
            Tensor& g = self.parents[0]->grad_buffer();
            for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (wants_grad(self, 1)) {
            Tensor& g = self.parents[1]->grad_buffer();
            for (size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
        }
    });
}

Var mul(const Var& a, const Var& b) {
    require_same_shape(a.value(), b.value(), "mul");
    Tensor out = a.value();
    for (size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
    return make_op(std::move(out), {a, b}, [](Node& self) {
        const Tensor& av = self.parents[0]->value;
        const Tensor& bv = self.parents[1]->value;
        if (wants_grad(self, 0)) {
            Tensor& g = self.parents[0]->grad_buffer();
            for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv[i];
        }
        if (wants_grad(self, 1)) {
            Tensor& g = self.parents[1]->grad_buffer();
            for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * av[i];
        }
    });
}

Var div(const Var& a, const Var& b) {
    require_same_shape(a.value(), b.value(), "div");
    Tensor out = a.value();
    for (size_t i = 0; i < out.size(); ++i) out[i] /= b.value()[i];
    return make_op(std::move(out), {a, b}, [](Node& self) {
        const Tensor& av = self.parents[0]->value;
        const Tensor& bv = self.parents[1]->value;
        if (wants_grad(self, 0)) {
            Tensor& g = self.parents[0]->grad_buffer();
            for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / bv[i];
        }
        if (wants_grad(self, 1)) {
            Tensor& g = self.parents[1]->grad_buffer();
            for (size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i] * av[i] / (bv[i] * bv[i]);
        }
    });
}

Var neg(const Var& a) {
    return scale(a, -1.0);
}

Var scale(const Var& a, double c) {
    Tensor out = a.value();
    for (double& v : out.data()) v *= c;
    return make_op(std::move(out), {a}, [c](Node& self) {
        if (!wants_grad(self, 0)) return;
        Tensor& g = self.parents[0]->grad_buffer();
        for (size_t i = 0; i < g.size(); ++i) g[i] += c * self.grad[i];
    });
}

Var add_scalar(const Var& a, double c) {
    Tensor out = a.value();
    for (double& v : out.data()) v += c;
    return make_op(std::move(out), {a}, [](Node& self) {
        if (!wants_grad(self, 0)) return;
        Tensor& g = self.parents[0]->grad_buffer();
        for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

Var relu(const Var& a) {
    Tensor out = a.value();
    for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
    return make_op(std::move(out), {a}, [](Node& self) {
        if (!wants_grad(self, 0)) return;
        const Tensor& av = self.parents[0]->value;
        Tensor& g = self.parents[0]->grad_buffer();
        for (size_t i = 0; i < g.size(); ++i) {
            if (av[i] > 0.0) g[i] += self.grad[i];
        }
    });
}

Var abs(const Var& a) {
    Tensor out = a.value();
    for (double& v : out.data()) v = std::abs(v);
    return make_op(std::move(out), {a}, [](Node& self) {
        if (!wants_grad(self, 0)) return;
        const Tensor& av = self.parents[0]->value;
        Tensor& g = self.parents[0]->grad_buffer();
        for (size_t i = 0; i < g.size(); ++i) {
            if (av[i] > 0.0) g[i] += self.grad[i];
            else if (av[i] < 0.0) g[i] -= self.grad[i];
        }
    });
}

Var exp(const Var& a) {
    Tensor out = a.value();
    for (double& v : out.data()) v = std::exp(v);
    return make_op(std::move(out), {a}, [](Node& self) {
        if (!wants_grad(self, 0)) return;
        Tensor& g = self.parents[0]->grad_buffer();
        for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * self.value[i];
    });
}

Var log(const Var& a) {
    Tensor out = a.value();
    for (double& v : out.data()) v = std::log(v);
    return make_op(std::move(out), {a}, [](Node& self) {
        if (!wants_grad(self, 0)) return;
        const Tensor& av = self.parents[0]->value;
        Tensor& g = self.parents[0]->grad_buffer();
        for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / av[i];
    });
}

Var sqrt(const Var& a) {
    Tensor out = a.value();
    for (double& v : out.data()) v = std::sqrt(v);
    return make_op(std::move(out), {a}, [](Node& self) {
        if (!wants_grad(self, 0)) return;
        Tensor& g = self.parents[0]->grad_buffer();
        for (size_t i = 0; i < g.size(); ++i) {
            if (self.value[i] > 0.0) g[i] += self.grad[i] / (2.0 * self.value[i]);
        }
    });
}

Var sum(const Var& a) {
    double acc = 0.0;
    for (double v : a.value().data()) acc += v;
    return make_op(Tensor::scalar(acc), {a}, [](Node& self) {
        if (!wants_grad(self, 0)) return;
        Tensor& g = self.parents[0]->grad_buffer();
        const double gv = self.grad[0];
        for (size_t i = 0; i < g.size(); ++i) g[i] += gv;
    });
}

Var mean(const Var& a) {
    const double n = static_cast<double>(a.value().size());
    double acc = 0.0;
    for (double v : a.value().data()) acc += v;
    return make_op(Tensor::scalar(acc / n), {a}, [n](Node& self) {
        if (!wants_grad(self, 0)) return;
        Tensor& g = self.parents[0]->grad_buffer();
        const double gv = self.grad[0] / n;
        for (size_t i = 0; i < g.size(); ++i) g[i] += gv;
    });
}

Var dot(const Var& a, const Var& b) {
    require_same_shape(a.value(), b.value(), "dot");
    double acc = 0.0;
    for (size_t i = 0; i < a.value().size(); ++i) acc += a.value()[i] * b.value()[i];
    return make_op(Tensor::scalar(acc), {a, b}, [](Node& self) {
        const Tensor& av = self.parents[0]->value;
        const Tensor& bv = self.parents[1]->value;
        const double gv = self.grad[0];
        if (wants_grad(self, 0)) {
            Tensor& g = self.parents[0]->grad_buffer();
            for (size_t i = 0; i < g.size(); ++i) g[i] += gv * bv[i];
        }
        if (wants_grad(self, 1)) {
            Tensor& g = self.parents[1]->grad_buffer();
            for (size_t i = 0; i < g.size(); ++i) g[i] += gv * av[i];
        }
    });
}

Var l2norm(const Var& a) {
    return sqrt(dot(a, a));
}

Var matmul(const Var& a, const Var& b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.ndim() != 2 || bv.ndim() != 2) {
        throw DimensionError("matmul requires rank-2 operands, got " +
                             format_shape(av.shape()) + " and " + format_shape(bv.shape()));
    }
    if (av.shape()[1] != bv.shape()[0]) {
        throw DimensionError("matmul inner dimensions disagree: " +
                             format_shape(av.shape()) + " vs " + format_shape(bv.shape()));
    }
    if (av.dtype() != bv.dtype()) {
        throw DimensionError("matmul dtype mismatch: " + dtype_name(av.dtype()) +
                             " vs " + dtype_name(bv.dtype()));
    }
    const size_t m = av.shape()[0], k = av.shape()[1], n = bv.shape()[1];
    Tensor out({m, n}, av.dtype());
    for (size_t i = 0; i < m; ++i) {
        for (size_t kk = 0; kk < k; ++kk) {
            const double s = av[i * k + kk];
            if (s == 0.0) continue;
            for (size_t j = 0; j < n; ++j) out[i * n + j] += s * bv[kk * n + j];
        }
    }
    return make_op(std::move(out), {a, b}, [m, k, n](Node& self) {
        const Tensor& av2 = self.parents[0]->value;
        const Tensor& bv2 = self.parents[1]->value;
        const Tensor& g = self.grad;
        if (wants_grad(self, 0)) {
            // dA = G B^T
            Tensor& da = self.parents[0]->grad_buffer();
            for (size_t i = 0; i < m; ++i) {
                for (size_t kk = 0; kk < k; ++kk) {
                    double acc = 0.0;
                    for (size_t j = 0; j < n; ++j) acc += g[i * n + j] * bv2[kk * n + j];
                    da[i * k + kk] += acc;
                }
            }
        }
        if (wants_grad(self, 1)) {
            // dB = A^T G
            Tensor& db = self.parents[1]->grad_buffer();
            for (size_t kk = 0; kk < k; ++kk) {
                for (size_t i = 0; i < m; ++i) {
                    const double s = av2[i * k + kk];
                    if (s == 0.0) continue;
                    for (size_t j = 0; j < n; ++j) db[kk * n + j] += s * g[i * n + j];
                }
            }
        }
    });
}

Var matvec(const Var& mvar, const Var& x) {
    const Tensor& mv = mvar.value();
    const Tensor& xv = x.value();
    if (mv.ndim() != 2 || xv.ndim() != 1) {
        throw DimensionError("matvec requires matrix and vector, got " +
                             format_shape(mv.shape()) + " and " + format_shape(xv.shape()));
    }
    if (mv.shape()[1] != xv.shape()[0]) {
        throw DimensionError("matvec inner dimensions disagree: " +
                             format_shape(mv.shape()) + " vs " + format_shape(xv.shape()));
    }
    const size_t m = mv.shape()[0], n = mv.shape()[1];
    Tensor out({m});
    for (size_t i = 0; i < m; ++i) {
        double acc = 0.0;
        const double* row = mv.ptr() + i * n;
        for (size_t j = 0; j < n; ++j) acc += row[j] * xv[j];
        out[i] = acc;
    }
    return make_op(std::move(out), {mvar, x}, [m, n](Node& self) {
        const Tensor& mv2 = self.parents[0]->value;
        const Tensor& xv2 = self.parents[1]->value;
        const Tensor& g = self.grad;
        if (wants_grad(self, 0)) {
            Tensor& dm = self.parents[0]->grad_buffer();
            for (size_t i = 0; i < m; ++i) {
                const double gi = g[i];
                if (gi == 0.0) continue;
                double* row = dm.ptr() + i * n;
                for (size_t j = 0; j < n; ++j) row[j] += gi * xv2[j];
            }
        }
        if (wants_grad(self, 1)) {
            Tensor& dx = self.parents[1]->grad_buffer();
            for (size_t i = 0; i < m; ++i) {
                const double gi = g[i];
                if (gi == 0.0) continue;
                const double* row = mv2.ptr() + i * n;
                for (size_t j = 0; j < n; ++j) dx[j] += gi * row[j];
            }
        }
    });
}

Var transpose(const Var& a) {
    const Tensor& av = a.value();
    if (av.ndim() != 2) {
        throw DimensionError("transpose requires a rank-2 tensor, got " + format_shape(av.shape()));
    }
    const size_t m = av.shape()[0], n = av.shape()[1];
    Tensor out({n, m}, av.dtype());
    for (size_t i = 0; i < m; ++i) {
        for (size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
    }
    return make_op(std::move(out), {a}, [m, n](Node& self) {
        if (!wants_grad(self, 0)) return;
        Tensor& g = self.parents[0]->grad_buffer();
        for (size_t i = 0; i < m; ++i) {
            for (size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[j * m + i];
        }
    });
}

Var reshape(const Var& a, std::vector<size_t> shape) {
    Tensor out = a.value().reshaped(std::move(shape));
    return make_op(std::move(out), {a}, [](Node& self) {
        if (!wants_grad(self, 0)) return;
        Tensor& g = self.parents[0]->grad_buffer();
        for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

Var mul_scalar(const Var& a, const Var& s) {
    require_scalar(s.value(), "mul_scalar");
    const double sv = s.value()[0];
    Tensor out = a.value();
    for (double& v : out.data()) v *= sv;
    return make_op(std::move(out), {a, s}, [](Node& self) {
        const Tensor& av = self.parents[0]->value;
        const double sv2 = self.parents[1]->value[0];
        if (wants_grad(self, 0)) {
            Tensor& g = self.parents[0]->grad_buffer();
            for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * sv2;
        }
        if (wants_grad(self, 1)) {
            double acc = 0.0;
            for (size_t i = 0; i < av.size(); ++i) acc += self.grad[i] * av[i];
            self.parents[1]->grad_buffer()[0] += acc;
        }
    });
}

Var div_scalar(const Var& a, const Var& s) {
    require_scalar(s.value(), "div_scalar");
    const double sv = s.value()[0];
    Tensor out = a.value();
    for (double& v : out.data()) v /= sv;
    return make_op(std::move(out), {a, s}, [](Node& self) {
        const Tensor& av = self.parents[0]->value;
        const double sv2 = self.parents[1]->value[0];
        if (wants_grad(self, 0)) {
            Tensor& g = self.parents[0]->grad_buffer();
            for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / sv2;
        }
        if (wants_grad(self, 1)) {
            double acc = 0.0;
            for (size_t i = 0; i < av.size(); ++i) acc += self.grad[i] * av[i];
            self.parents[1]->grad_buffer()[0] -= acc / (sv2 * sv2);
        }
    });
}

namespace {

struct ConvDims {
    size_t c, h, s, ks;
};

ConvDims check_conv(const Tensor& x, const Tensor& kern, bool x_is_inner) {
    if (kern.ndim() != 4) {
        throw DimensionError("conv kernel must be rank 4, got " + format_shape(kern.shape()));
    }
    const size_t h = kern.shape()[0], c = kern.shape()[1], ks = kern.shape()[2];
    if (kern.shape()[3] != ks) {
        throw DimensionError("conv kernel must be square, got " + format_shape(kern.shape()));
    }
    if (ks % 2 == 0) throw ConfigError("conv kernel size must be odd, got " + std::to_string(ks));
    if (x.ndim() != 3) {
        throw DimensionError("conv input must be rank 3, got " + format_shape(x.shape()));
    }
    const size_t want = x_is_inner ? h : c;
    if (x.shape()[0] != want || x.shape()[1] != x.shape()[2]) {
        throw DimensionError("conv input " + format_shape(x.shape()) + " incompatible with kernel " +
                             format_shape(kern.shape()));
    }
    const size_t s = x.shape()[1];
    if (s < ks) throw ConfigError("conv image size " + std::to_string(s) +
                                  " smaller than kernel " + std::to_string(ks));
    return {c, h, s, ks};
}

} // namespace

Var conv2d_circular(const Var& x, const Var& kern) {
    const ConvDims d = check_conv(x.value(), kern.value(), false);
    Tensor out({d.h, d.s, d.s});
    kernels::conv2d_circular(x.value().ptr(), kern.value().ptr(), out.ptr(), d.c, d.h, d.s, d.ks);
    return make_op(std::move(out), {x, kern}, [d](Node& self) {
        const Tensor& xv = self.parents[0]->value;
        const Tensor& kv = self.parents[1]->value;
        if (wants_grad(self, 0)) {
            kernels::conv2d_adjoint(self.grad.ptr(), kv.ptr(),
                                    self.parents[0]->grad_buffer().ptr(), d.c, d.h, d.s, d.ks);
        }
        if (wants_grad(self, 1)) {
            kernels::conv2d_kernel_grad(self.grad.ptr(), xv.ptr(),
                                        self.parents[1]->grad_buffer().ptr(), d.c, d.h, d.s, d.ks);
        }
    });
}

Var conv2d_adjoint(const Var& z, const Var& kern) {
    const ConvDims d = check_conv(z.value(), kern.value(), true);
    Tensor out({d.c, d.s, d.s});
    kernels::conv2d_adjoint(z.value().ptr(), kern.value().ptr(), out.ptr(), d.c, d.h, d.s, d.ks);
    return make_op(std::move(out), {z, kern}, [d](Node& self) {
        const Tensor& zv = self.parents[0]->value;
        const Tensor& kv = self.parents[1]->value;
        if (wants_grad(self, 0)) {
            kernels::conv2d_circular(self.grad.ptr(), kv.ptr(),
                                     self.parents[0]->grad_buffer().ptr(), d.c, d.h, d.s, d.ks);
        }
        if (wants_grad(self, 1)) {
            kernels::adjoint_kernel_grad(self.grad.ptr(), zv.ptr(),
                                         self.parents[1]->grad_buffer().ptr(), d.c, d.h, d.s, d.ks);
        }
    });
}

Var kernel_corr(const Var& kern) {
    const Tensor& kv = kern.value();
    if (kv.ndim() != 4 || kv.shape()[2] != kv.shape()[3]) {
        throw DimensionError("kernel_corr expects an [h x c x k x k] kernel, got " + format_shape(kv.shape()));
    }
    const size_t h = kv.shape()[0], c = kv.shape()[1], ks = kv.shape()[2];
    const size_t span = 2 * ks - 1;
    Tensor out({h, h, span, span});
    kernels::kernel_corr(kv.ptr(), out.ptr(), h, c, ks);
    return make_op(std::move(out), {kern}, [h, c, ks](Node& self) {
        if (!wants_grad(self, 0)) return;
        kernels::kernel_corr_grad(self.grad.ptr(), self.parents[0]->value.ptr(),
                                  self.parents[0]->grad_buffer().ptr(), h, c, ks);
    });
}

Var add_channel_bias(const Var& z, const Var& bias) {
    const Tensor& zv = z.value();
    const Tensor& bv = bias.value();
    if (zv.ndim() != 3 || bv.ndim() != 1 || bv.shape()[0] != zv.shape()[0]) {
        throw DimensionError("add_channel_bias shapes " + format_shape(zv.shape()) +
                             " and " + format_shape(bv.shape()) + " incompatible");
    }
    const size_t ch = zv.shape()[0], plane = zv.shape()[1] * zv.shape()[2];
    Tensor out = zv;
    for (size_t o = 0; o < ch; ++o) {
        const double b = bv[o];
        for (size_t i = 0; i < plane; ++i) out[o * plane + i] += b;
    }
    return make_op(std::move(out), {z, bias}, [ch, plane](Node& self) {
        if (wants_grad(self, 0)) {
            Tensor& g = self.parents[0]->grad_buffer();
            for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (wants_grad(self, 1)) {
            Tensor& g = self.parents[1]->grad_buffer();
            for (size_t o = 0; o < ch; ++o) {
                double acc = 0.0;
                for (size_t i = 0; i < plane; ++i) acc += self.grad[o * plane + i];
                g[o] += acc;
            }
        }
    });
}

Var div_channel(const Var& z, const Var& t) {
    const Tensor& zv = z.value();
    const Tensor& tv = t.value();
    if (zv.ndim() != 3 || tv.ndim() != 1 || tv.shape()[0] != zv.shape()[0]) {
        throw DimensionError("div_channel shapes " + format_shape(zv.shape()) +
                             " and " + format_shape(tv.shape()) + " incompatible");
    }
    const size_t ch = zv.shape()[0], plane = zv.shape()[1] * zv.shape()[2];
    Tensor out = zv;
    for (size_t o = 0; o < ch; ++o) {
        const double s = tv[o];
        for (size_t i = 0; i < plane; ++i) out[o * plane + i] /= s;
    }
    return make_op(std::move(out), {z, t}, [ch, plane](Node& self) {
        const Tensor& zv2 = self.parents[0]->value;
        const Tensor& tv2 = self.parents[1]->value;
        if (wants_grad(self, 0)) {
            Tensor& g = self.parents[0]->grad_buffer();
            for (size_t o = 0; o < ch; ++o) {
                const double s = tv2[o];
                for (size_t i = 0; i < plane; ++i) g[o * plane + i] += self.grad[o * plane + i] / s;
            }
        }
        if (wants_grad(self, 1)) {
            Tensor& g = self.parents[1]->grad_buffer();
            for (size_t o = 0; o < ch; ++o) {
                const double s = tv2[o];
                double acc = 0.0;
                for (size_t i = 0; i < plane; ++i) acc += self.grad[o * plane + i] * zv2[o * plane + i];
                g[o] -= acc / (s * s);
            }
        }
    });
}

Var spectral_normalize(const Var& w) {
    const Tensor& wv = w.value();
    if (wv.ndim() != 2) {
        throw DimensionError("spectral_normalize requires rank 2, got " + format_shape(wv.shape()));
    }
    const TopSingular sv = top_singular(wv);
    if (sv.sigma < 1e-30) {
        // Zero map is already non-expansive; pass through unchanged.
        Tensor out = wv;
        return make_op(std::move(out), {w}, [](Node& self) {
            if (!wants_grad(self, 0)) return;
            Tensor& g = self.parents[0]->grad_buffer();
            for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        });
    }
    const double sigma = sv.sigma;
    Tensor out = wv;
    for (double& v : out.data()) v /= sigma;
    return make_op(std::move(out), {w}, [sv, sigma](Node& self) {
        if (!wants_grad(self, 0)) return;
        const Tensor& wv2 = self.parents[0]->value;
        const size_t rows = wv2.shape()[0], cols = wv2.shape()[1];
        // d(W/sigma) with dsigma = u v^T at the top singular pair.
        double gw = 0.0;
        for (size_t i = 0; i < wv2.size(); ++i) gw += self.grad[i] * wv2[i];
        const double coef = gw / (sigma * sigma);
        Tensor& g = self.parents[0]->grad_buffer();
        for (size_t r = 0; r < rows; ++r) {
            for (size_t cidx = 0; cidx < cols; ++cidx) {
                g[r * cols + cidx] += self.grad[r * cols + cidx] / sigma - coef * sv.u[r] * sv.v[cidx];
            }
        }
    });
}

double grad_check(const std::function<Var(const Var&)>& fn, const Tensor& point, double step) {
    if (!(step > 0.0)) throw ConfigError("grad_check step must be positive");
    Var x = Var::leaf(point);
    Var y = fn(x);
    if (y.value().size() != 1) {
        throw DimensionError("grad_check target must produce a scalar");
    }
    if (!std::isfinite(y.value()[0])) {
        throw NumericError("grad_check: function value is not finite");
    }
    y.backward();
    const Tensor g_ad = x.grad();

    double worst = 0.0;
    Tensor probe = point;
    for (size_t i = 0; i < point.size(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + step;
        const double fp = fn(Var::constant(probe)).value()[0];
        probe[i] = orig - step;
        const double fm = fn(Var::constant(probe)).value()[0];
        probe[i] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm)) {
            throw NumericError("grad_check: function value is not finite near probe point");
        }
        const double g_fd = (fp - fm) / (2.0 * step);
        const double err = std::abs(g_ad[i] - g_fd) / std::max(1.0, std::abs(g_fd));
        if (err > worst) worst = err;
    }
    return worst;
}

} // namespace certsim::ad
