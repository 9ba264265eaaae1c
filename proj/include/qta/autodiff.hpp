#pragma once

#include <algorithm>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "tensor.hpp"

namespace qta::ad {

/// One node of the recorded computation. The graph is built eagerly by the
/// op functions below; backward() replays it in reverse topological order.
struct Node {
    Tensor value;
    Tensor grad;  // allocated lazily, same shape as value
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backfn;

    Tensor& grad_ref() {
        if (grad.numel() == 0) grad = Tensor::zeros(value.shape());
        return grad;
    }

    void accumulate(const Tensor& g) {
        Tensor& gr = grad_ref();
        for (std::size_t i = 0; i < gr.numel(); ++i) gr[i] += g[i];
    }

    void zero_grad() { grad = Tensor(); }
};

using Var = std::shared_ptr<Node>;

inline Var constant(Tensor v) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    return n;
}

inline Var make_param(Tensor v) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->requires_grad = true;
    return n;
}

/// Graph edges from nodes with no grad requirement are dropped, so frozen
/// tables never accumulate gradient and dead subgraphs are freed early.
inline Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backfn) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    for (const auto& p : parents) n->requires_grad = n->requires_grad || p->requires_grad;
    if (n->requires_grad) {
        n->parents = std::move(parents);
        n->backfn = std::move(backfn);
    }
    return n;
}

/// Reverse pass from a scalar root. Gradients accumulate into each node's
/// grad tensor; parameters keep theirs until zero_grad.
inline void backward(const Var& root) {
    if (root->value.numel() != 1) throw std::invalid_argument("backward: root must be scalar");
    if (!root->requires_grad) return;

    // postorder DFS, then walk in reverse
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [n, idx] = stack.back();
        if (idx < n->parents.size()) {
            Node* p = n->parents[idx++].get();
            if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    root->grad_ref()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backfn && n->grad.numel() != 0) n->backfn(*n);
    }
}

// ---- primitive ops ----

inline Var add(const Var& a, const Var& b) {
    Tensor v = qta::add(a->value, b->value);
    return make_op(std::move(v), {a, b}, [](Node& self) {
        self.parents[0]->accumulate(self.grad);
        self.parents[1]->accumulate(self.grad);
    });
}

inline Var sub(const Var& a, const Var& b) {
    Tensor v = qta::sub(a->value, b->value);
    return make_op(std::move(v), {a, b}, [](Node& self) {
        self.parents[0]->accumulate(self.grad);
        Node& pb = *self.parents[1];
        Tensor& g = pb.grad_ref();
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] -= self.grad[i];
    });
}

inline Var mul(const Var& a, const Var& b) {
    Tensor v = qta::mul(a->value, b->value);
    return make_op(std::move(v), {a, b}, [](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        if (pa.requires_grad) {
            Tensor& g = pa.grad_ref();
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * pb.value[i];
        }
        if (pb.requires_grad) {
            Tensor& g = pb.grad_ref();
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * pa.value[i];
        }
    });
}

inline Var scale(const Var& a, double k) {
    Tensor v = qta::scale(a->value, k);
    return make_op(std::move(v), {a}, [k](Node& self) {
        Tensor& g = self.parents[0]->grad_ref();
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * k;
    });
}

/// matmul for (2-D, 2-D) and matrix-vector (2-D, 1-D).
inline Var matmul(const Var& a, const Var& b) {
    const Tensor& A = a->value;
    const Tensor& B = b->value;
    if (A.ndim() == 2 && B.ndim() == 1) {
        if (A.extent(1) != B.extent(0)) throw std::invalid_argument("matmul: inner extents mismatch");
        const std::size_t m = A.extent(0), k = A.extent(1);
        Tensor y({m});
        for (std::size_t i = 0; i < m; ++i) {
            double s = 0.0;
            const double* row = A.data() + i * k;
            for (std::size_t p = 0; p < k; ++p) s += row[p] * B[p];
            y[i] = s;
        }
        y.check_finite("matmul");
        return make_op(std::move(y), {a, b}, [](Node& self) {
            Node& pa = *self.parents[0];
            Node& pb = *self.parents[1];
            const Tensor& A = pa.value;
            const Tensor& x = pb.value;
            const std::size_t m = A.extent(0), k = A.extent(1);
            if (pa.requires_grad) {
                Tensor& gA = pa.grad_ref();
                for (std::size_t i = 0; i < m; ++i) {
                    const double gi = self.grad[i];
                    if (gi == 0.0) continue;
                    double* row = gA.data() + i * k;
                    for (std::size_t p = 0; p < k; ++p) row[p] += gi * x[p];
                }
            }
            if (pb.requires_grad) {
                Tensor& gx = pb.grad_ref();
                for (std::size_t i = 0; i < m; ++i) {
                    const double gi = self.grad[i];
                    if (gi == 0.0) continue;
                    const double* row = A.data() + i * k;
                    for (std::size_t p = 0; p < k; ++p) gx[p] += gi * row[p];
                }
            }
        });
    }
    Tensor y = qta::matmul(A, B);
    return make_op(std::move(y), {a, b}, [](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        const Tensor& A = pa.value;
        const Tensor& B = pb.value;
        const std::size_t m = A.extent(0), k = A.extent(1), n = B.extent(1);
        if (pa.requires_grad) {
            Tensor& gA = pa.grad_ref();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    double s = 0.0;
                    for (std::size_t j = 0; j < n; ++j) s += self.grad[i * n + j] * B[p * n + j];
                    gA[i * k + p] += s;
                }
        }
        if (pb.requires_grad) {
            Tensor& gB = pb.grad_ref();
            for (std::size_t p = 0; p < k; ++p)
                for (std::size_t j = 0; j < n; ++j) {
                    double s = 0.0;
                    for (std::size_t i = 0; i < m; ++i) s += A[i * k + p] * self.grad[i * n + j];
                    gB[p * n + j] += s;
                }
        }
    });
}

inline Var concat(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat: empty");
    std::size_t total = 0;
    for (const auto& p : parts) total += p->value.numel();
    Tensor v({total});
    std::size_t off = 0;
    for (const auto& p : parts) {
        for (std::size_t i = 0; i < p->value.numel(); ++i) v[off + i] = p->value[i];
        off += p->value.numel();
    }
    return make_op(std::move(v), parts, [](Node& self) {
        std::size_t off = 0;
        for (auto& p : self.parents) {
            const std::size_t n = p->value.numel();
            if (p->requires_grad) {
                Tensor& g = p->grad_ref();
                for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[off + i];
            }
            off += n;
        }
    });
}

inline Var slice(const Var& a, std::size_t start, std::size_t len) {
    if (start + len > a->value.numel()) throw std::invalid_argument("slice: out of range");
    Tensor v({len});
    for (std::size_t i = 0; i < len; ++i) v[i] = a->value[start + i];
    return make_op(std::move(v), {a}, [start, len](Node& self) {
        Tensor& g = self.parents[0]->grad_ref();
        for (std::size_t i = 0; i < len; ++i) g[start + i] += self.grad[i];
    });
}

/// Row i of a 2-D matrix as a 1-D vector (embedding lookup).
inline Var row(const Var& m, std::size_t i) {
    if (m->value.ndim() != 2) throw std::invalid_argument("row: need 2-D");
    if (i >= m->value.extent(0)) throw std::out_of_range("row: index out of range");
    const std::size_t c = m->value.extent(1);
    Tensor v({c});
    for (std::size_t j = 0; j < c; ++j) v[j] = m->value[i * c + j];
    return make_op(std::move(v), {m}, [i, c](Node& self) {
        Tensor& g = self.parents[0]->grad_ref();
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j];
    });
}

/// Column j of a 2-D matrix as a 1-D vector (gating column lookup).
inline Var col(const Var& m, std::size_t j) {
    if (m->value.ndim() != 2) throw std::invalid_argument("col: need 2-D");
    const std::size_t r = m->value.extent(0), c = m->value.extent(1);
    if (j >= c) throw std::out_of_range("col: index out of range");
    Tensor v({r});
    for (std::size_t i = 0; i < r; ++i) v[i] = m->value[i * c + j];
    return make_op(std::move(v), {m}, [j, r, c](Node& self) {
        Tensor& g = self.parents[0]->grad_ref();
        for (std::size_t i = 0; i < r; ++i) g[i * c + j] += self.grad[i];
    });
}

inline Var relu(const Var& a) {
    Tensor v = qta::relu(a->value);
    return make_op(std::move(v), {a}, [](Node& self) {
        Tensor& g = self.parents[0]->grad_ref();
        for (std::size_t i = 0; i < g.numel(); ++i)
            if (self.parents[0]->value[i] > 0.0) g[i] += self.grad[i];
    });
}

inline Var sigmoid(const Var& a) {
    Tensor v = qta::sigmoid(a->value);
    return make_op(std::move(v), {a}, [](Node& self) {
        Tensor& g = self.parents[0]->grad_ref();
        for (std::size_t i = 0; i < g.numel(); ++i) {
            const double y = self.value[i];
            g[i] += self.grad[i] * y * (1.0 - y);
        }
    });
}

inline Var vtanh(const Var& a) {
    Tensor v = qta::tanh_t(a->value);
    return make_op(std::move(v), {a}, [](Node& self) {
        Tensor& g = self.parents[0]->grad_ref();
        for (std::size_t i = 0; i < g.numel(); ++i) {
            const double y = self.value[i];
            g[i] += self.grad[i] * (1.0 - y * y);
        }
    });
}

inline Var softmax(const Var& a) {
    Tensor v = qta::softmax(a->value);
    return make_op(std::move(v), {a}, [](Node& self) {
        Tensor& g = self.parents[0]->grad_ref();
        double gy = 0.0;
        for (std::size_t i = 0; i < g.numel(); ++i) gy += self.grad[i] * self.value[i];
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.value[i] * (self.grad[i] - gy);
    });
}

inline Var sum(const Var& a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a->value.numel(); ++i) s += a->value[i];
    return make_op(Tensor({1}, {s}), {a}, [](Node& self) {
        Tensor& g = self.parents[0]->grad_ref();
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[0];
    });
}

/// Cross entropy against a class index, fused with log-softmax.
inline Var cross_entropy_logits(const Var& logits, std::size_t target) {
    const Tensor& x = logits->value;
    if (target >= x.numel()) throw std::out_of_range("cross_entropy_logits: target out of range");
    double mx = x[0];
    for (std::size_t i = 1; i < x.numel(); ++i) mx = std::max(mx, x[i]);
    double z = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) z += std::exp(x[i] - mx);
    const double loss = mx + std::log(z) - x[target];
    return make_op(Tensor({1}, {loss}), {logits}, [target](Node& self) {
        const Tensor p = qta::softmax(self.parents[0]->value);
        Tensor& g = self.parents[0]->grad_ref();
        for (std::size_t i = 0; i < g.numel(); ++i)
            g[i] += self.grad[0] * (p[i] - (i == target ? 1.0 : 0.0));
    });
}

// ---- verification ----

/// Max over parameter elements of |analytic - central difference| /
/// max(1, |analytic|). fn must rebuild the loss graph from current values.
inline double grad_check(const std::function<Var()>& fn, const std::vector<Var>& params, double eps = 1e-5) {
    for (const auto& p : params) p->zero_grad();
    Var loss = fn();
    if (!loss->value.all_finite()) throw std::runtime_error("grad_check: non-finite loss");
    backward(loss);

    std::vector<Tensor> analytic;
    analytic.reserve(params.size());
    for (const auto& p : params) analytic.push_back(p->grad.numel() ? p->grad : Tensor::zeros(p->value.shape()));

    double max_err = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor& v = params[pi]->value;
        for (std::size_t i = 0; i < v.numel(); ++i) {
            const double orig = v[i];
            v[i] = orig + eps;
            const double fp = fn()->value[0];
            v[i] = orig - eps;
            const double fm = fn()->value[0];
            v[i] = orig;
            const double fd = (fp - fm) / (2.0 * eps);
            const double an = analytic[pi][i];
            max_err = std::max(max_err, std::abs(an - fd) / std::max(1.0, std::abs(an)));
        }
    }
    for (const auto& p : params) p->zero_grad();
    return max_err;
}

}  // namespace qta::ad
