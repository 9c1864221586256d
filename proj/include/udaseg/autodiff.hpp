#pragma once

// Reverse-mode automatic differentiation on a dynamic tape. Each forward
// op returns a node holding its value and a closure that routes the
// node's gradient to its parents. backward() walks the graph once in
// reverse topological order, so every op's gradient is accumulated
// exactly once.

#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "udaseg/errors.hpp"
#include "udaseg/kernels.hpp"
#include "udaseg/tensor.hpp"

namespace udaseg::ad {

struct Node;
using Val = std::shared_ptr<Node>;

struct Node {
    Tensor val;
    Tensor grad;
    bool requires_grad = false;
    bool grad_ready = false;
    std::vector<Val> parents;
    std::function<void(Node&)> backward_fn;

    Tensor& ensure_grad() {
        if (!grad_ready) {
            grad = Tensor(val.shape());
            grad_ready = true;
        }
        return grad;
    }
};

inline Val leaf(Tensor v, bool requires_grad = false) {
    auto n = std::make_shared<Node>();
    n->val = std::move(v);
    n->requires_grad = requires_grad;
    return n;
}

inline Val constant(Tensor v) { return leaf(std::move(v), false); }

namespace detail {

inline Val make_op(Tensor value, std::vector<Val> parents, std::function<void(Node&)> bwd) {
    auto n = std::make_shared<Node>();
    n->val = std::move(value);
    for (const auto& p : parents)
        if (p->requires_grad) n->requires_grad = true;
    if (n->requires_grad) {
        n->parents = std::move(parents);
        n->backward_fn = std::move(bwd);
    }
    return n;
}

inline void check_same_shape(const Val& a, const Val& b, const char* op) {
    if (!a->val.same_shape(b->val))
        throw InvalidInputError(std::string(op) + ": shape mismatch " + a->val.shape_str() + " vs " +
                                b->val.shape_str());
}

}  // namespace detail

inline Val add(Val a, Val b) {
    detail::check_same_shape(a, b, "add");
    Tensor out = a->val;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b->val[i];
    return detail::make_op(std::move(out), {a, b}, [a, b](Node& n) {
        if (a->requires_grad) {
            Tensor& ga = a->ensure_grad();
            for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += n.grad[i];
        }
        if (b->requires_grad) {
            Tensor& gb = b->ensure_grad();
            for (std::size_t i = 0; i < gb.numel(); ++i) gb[i] += n.grad[i];
        }
    });
}

inline Val sub(Val a, Val b) {
    detail::check_same_shape(a, b, "sub");
    Tensor out = a->val;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= b->val[i];
    return detail::make_op(std::move(out), {a, b}, [a, b](Node& n) {
        if (a->requires_grad) {
            Tensor& ga = a->ensure_grad();
            for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += n.grad[i];
        }
        if (b->requires_grad) {
            Tensor& gb = b->ensure_grad();
            for (std::size_t i = 0; i < gb.numel(); ++i) gb[i] -= n.grad[i];
        }
    });
}

inline Val mul(Val a, Val b) {
    detail::check_same_shape(a, b, "mul");
    Tensor out = a->val;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b->val[i];
    return detail::make_op(std::move(out), {a, b}, [a, b](Node& n) {
        if (a->requires_grad) {
            Tensor& ga = a->ensure_grad();
            for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += n.grad[i] * b->val[i];
        }
        if (b->requires_grad) {
            Tensor& gb = b->ensure_grad();
            for (std::size_t i = 0; i < gb.numel(); ++i) gb[i] += n.grad[i] * a->val[i];
        }
    });
}

inline Val div(Val a, Val b) {
    detail::check_same_shape(a, b, "div");
    Tensor out = a->val;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] /= b->val[i];
    return detail::make_op(std::move(out), {a, b}, [a, b](Node& n) {
        if (a->requires_grad) {
            Tensor& ga = a->ensure_grad();
            for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += n.grad[i] / b->val[i];
        }
        if (b->requires_grad) {
            Tensor& gb = b->ensure_grad();
            for (std::size_t i = 0; i < gb.numel(); ++i)
                gb[i] -= n.grad[i] * a->val[i] / (b->val[i] * b->val[i]);
        }
    });
}

inline Val scale(Val x, double c) {
    Tensor out = x->val;
    for (auto& v : out.vec()) v *= c;
    return detail::make_op(std::move(out), {x}, [x, c](Node& n) {
        Tensor& g = x->ensure_grad();
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] += c * n.grad[i];
    });
}

inline Val add_scalar(Val x, double c) {
    Tensor out = x->val;
    for (auto& v : out.vec()) v += c;
    return detail::make_op(std::move(out), {x}, [x](Node& n) {
        Tensor& g = x->ensure_grad();
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
    });
}

// c - x, used for inverse maps (J - P with c = 1).
inline Val rsub_scalar(double c, Val x) {
    Tensor out = x->val;
    for (auto& v : out.vec()) v = c - v;
    return detail::make_op(std::move(out), {x}, [x](Node& n) {
        Tensor& g = x->ensure_grad();
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] -= n.grad[i];
    });
}

inline Val abs(Val x) {
    Tensor out = x->val;
    for (auto& v : out.vec()) v = std::abs(v);
    return detail::make_op(std::move(out), {x}, [x](Node& n) {
        Tensor& g = x->ensure_grad();
        for (std::size_t i = 0; i < g.numel(); ++i) {
            const double v = x->val[i];
            g[i] += (v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0)) * n.grad[i];
        }
    });
}

inline Val log(Val x) {
    Tensor out = x->val;
    for (auto& v : out.vec()) v = std::log(v);
    return detail::make_op(std::move(out), {x}, [x](Node& n) {
        Tensor& g = x->ensure_grad();
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] / x->val[i];
    });
}

// Gradient passes only strictly inside (lo, hi).
inline Val clamp(Val x, double lo, double hi) {
    Tensor out = x->val;
    for (auto& v : out.vec()) v = std::min(hi, std::max(lo, v));
    return detail::make_op(std::move(out), {x}, [x, lo, hi](Node& n) {
        Tensor& g = x->ensure_grad();
        for (std::size_t i = 0; i < g.numel(); ++i) {
            const double v = x->val[i];
            if (v > lo && v < hi) g[i] += n.grad[i];
        }
    });
}

inline Val leaky_relu(Val x, double slope) {
    Tensor out = x->val;
    for (auto& v : out.vec())
        if (v < 0.0) v *= slope;
    return detail::make_op(std::move(out), {x}, [x, slope](Node& n) {
        Tensor& g = x->ensure_grad();
        for (std::size_t i = 0; i < g.numel(); ++i)
            g[i] += (x->val[i] >= 0.0 ? 1.0 : slope) * n.grad[i];
    });
}

inline Val sigmoid(Val x) {
    Tensor out = x->val;
    for (auto& v : out.vec()) v = 1.0 / (1.0 + std::exp(-v));
    return detail::make_op(std::move(out), {x}, [x](Node& n) {
        Tensor& g = x->ensure_grad();
        for (std::size_t i = 0; i < g.numel(); ++i) {
            const double s = n.val[i];
            g[i] += s * (1.0 - s) * n.grad[i];
        }
    });
}

inline Val sum(Val x) {
    Tensor out = Tensor::scalar(udaseg::sum(x->val));
    return detail::make_op(std::move(out), {x}, [x](Node& n) {
        Tensor& g = x->ensure_grad();
        const double gy = n.grad[0];
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] += gy;
    });
}

inline Val mean(Val x) {
    const double inv_n = 1.0 / static_cast<double>(x->val.numel());
    Tensor out = Tensor::scalar(udaseg::sum(x->val) * inv_n);
    return detail::make_op(std::move(out), {x}, [x, inv_n](Node& n) {
        Tensor& g = x->ensure_grad();
        const double gy = n.grad[0] * inv_n;
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] += gy;
    });
}

inline Val conv2d(Val x, Val w, Val b, std::size_t stride, std::size_t pad) {
    Tensor out;
    conv2d_forward(out, x->val, w->val, b ? b->val : Tensor{}, stride, pad);
    std::vector<Val> parents = b ? std::vector<Val>{x, w, b} : std::vector<Val>{x, w};
    return detail::make_op(std::move(out), std::move(parents), [x, w, b, stride, pad](Node& n) {
        Tensor dx_dummy;
        const bool want_dx = x->requires_grad;
        Tensor& dx = want_dx ? x->ensure_grad() : dx_dummy;
        Tensor dw_local;
        Tensor& dw = w->requires_grad ? w->ensure_grad() : dw_local;
        if (!w->requires_grad) dw = Tensor(w->val.shape());
        Tensor db_local;
        Tensor& db = (b && b->requires_grad) ? b->ensure_grad() : db_local;
        if (b && !b->requires_grad) db = Tensor(b->val.shape());
        conv2d_backward(dx, dw, db, n.grad, x->val, w->val, stride, pad, want_dx);
    });
}

inline Val maxpool2(Val x) {
    Tensor out;
    auto argmax = std::make_shared<std::vector<std::uint32_t>>();
    maxpool2_forward(out, *argmax, x->val);
    return detail::make_op(std::move(out), {x}, [x, argmax](Node& n) {
        maxpool2_backward(x->ensure_grad(), n.grad, *argmax);
    });
}

inline Val upsample2(Val x) {
    Tensor out;
    upsample2_forward(out, x->val);
    return detail::make_op(std::move(out), {x}, [x](Node& n) {
        upsample2_backward(x->ensure_grad(), n.grad);
    });
}

// Concatenate along the channel axis of (B, C, H, W) tensors.
inline Val concat_channels(const std::vector<Val>& xs) {
    if (xs.empty()) throw InvalidInputError("concat_channels: empty input list");
    const std::size_t B = xs[0]->val.dim(0), H = xs[0]->val.dim(2), W = xs[0]->val.dim(3);
    std::size_t C = 0;
    for (const auto& x : xs) {
        if (x->val.rank() != 4 || x->val.dim(0) != B || x->val.dim(2) != H || x->val.dim(3) != W)
            throw InvalidInputError("concat_channels: incompatible shapes");
        C += x->val.dim(1);
    }
    Tensor out({B, C, H, W});
    const std::size_t plane = H * W;
    for (std::size_t b = 0; b < B; ++b) {
        std::size_t c_off = 0;
        for (const auto& x : xs) {
            const std::size_t ci = x->val.dim(1);
            const double* src = x->val.data() + b * ci * plane;
            double* dst = out.data() + (b * C + c_off) * plane;
            std::copy(src, src + ci * plane, dst);
            c_off += ci;
        }
    }
    return detail::make_op(std::move(out), xs, [xs, B, C, plane](Node& n) {
        for (std::size_t b = 0; b < B; ++b) {
            std::size_t c_off = 0;
            for (const auto& x : xs) {
                const std::size_t ci = x->val.dim(1);
                if (x->requires_grad) {
                    Tensor& g = x->ensure_grad();
                    const double* src = n.grad.data() + (b * C + c_off) * plane;
                    double* dst = g.data() + b * ci * plane;
                    for (std::size_t i = 0; i < ci * plane; ++i) dst[i] += src[i];
                }
                c_off += ci;
            }
        }
    });
}

// Reverse pass from a scalar root. Gradients accumulate into every
// requires_grad leaf reachable from the root.
inline void backward(const Val& root) {
    if (!root) throw UsageError("backward: null root");
    if (root->val.numel() != 1) throw UsageError("backward: root must be a scalar");
    if (!root->requires_grad)
        throw UsageError("backward: no recorded forward pass reaches a differentiable leaf");

    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Val, std::size_t>> stack;
    stack.emplace_back(root, 0);
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Val next = node->parents[idx++];
            if (next->requires_grad && seen.insert(next.get()).second) stack.emplace_back(next, 0);
        } else {
            order.push_back(node.get());
            stack.pop_back();
        }
    }

    root->ensure_grad();
    root->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && n->grad_ready) n->backward_fn(*n);
    }
}

inline Val operator+(Val a, Val b) { return add(std::move(a), std::move(b)); }
inline Val operator-(Val a, Val b) { return sub(std::move(a), std::move(b)); }
inline Val operator*(Val a, Val b) { return mul(std::move(a), std::move(b)); }

}  // namespace udaseg::ad
