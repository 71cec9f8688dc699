#pragma once

#include <Eigen/Core>
#include <functional>
#include <memory>
#include <stdexcept>
#include <utility>
#include <vector>

#include "genpt/parallel.hpp"
#include "genpt/tensor.hpp"

namespace genpt::ag {

// Reverse-mode tape. Nodes are appended in forward order and visited in
// reverse by backward(). A Var is a cheap handle (tape pointer + index).
//
// Convention: gradients accumulate (+=) into parent nodes, so shared
// subexpressions work without extra bookkeeping.

template <class T>
class Tape;

template <class T>
struct Var {
    Tape<T>* tape = nullptr;
    int i = -1;

    bool valid() const { return tape != nullptr && i >= 0; }
    const Tensor<T>& val() const;
    const std::vector<int>& shape() const { return val().shape; }
};

template <class T>
struct Node {
    Tensor<T> val;
    Tensor<T> grad;  // allocated on first touch
    bool requires_grad = false;
    std::function<void(Tape<T>&, int)> back;  // nullptr for leaves/constants
};

template <class T>
class Tape {
public:
    std::vector<Node<T>> nodes;

    Var<T> leaf(Tensor<T> value, bool requires_grad) {
        Node<T> n;
        n.val = std::move(value);
        n.requires_grad = requires_grad;
        nodes.push_back(std::move(n));
        return {this, int(nodes.size()) - 1};
    }

    Var<T> constant(Tensor<T> value) { return leaf(std::move(value), false); }

    Var<T> make(Tensor<T> value, bool requires_grad, std::function<void(Tape<T>&, int)> back) {
        Node<T> n;
        n.val = std::move(value);
        n.requires_grad = requires_grad;
        if (requires_grad) n.back = std::move(back);
        nodes.push_back(std::move(n));
        return {this, int(nodes.size()) - 1};
    }

    Node<T>& node(Var<T> v) { return nodes[size_t(v.i)]; }
    const Tensor<T>& val(Var<T> v) const { return nodes[size_t(v.i)].val; }

    Tensor<T>& grad_buf(int i) {
        Node<T>& n = nodes[size_t(i)];
        if (n.grad.numel() == 0) n.grad = Tensor<T>(n.val.shape);
        return n.grad;
    }

    void accum(int i, const Tensor<T>& g) {
        Tensor<T>& dst = grad_buf(i);
        for (int64_t k = 0; k < g.numel(); ++k) dst.v[size_t(k)] += g.v[size_t(k)];
    }

    // Seeds d(root)/d(root) = 1 and sweeps the tape. Root must be scalar.
    void backward(Var<T> root) {
        if (root.tape != this) throw std::logic_error("backward: foreign var");
        if (val(root).numel() != 1) throw std::logic_error("backward: root must be scalar");
        grad_buf(root.i).v[0] = T(1);
        for (int i = root.i; i >= 0; --i) {
            Node<T>& n = nodes[size_t(i)];
            if (n.requires_grad && n.back && n.grad.numel() != 0) n.back(*this, i);
        }
    }

    const Tensor<T>& grad(Var<T> v) {
        return grad_buf(v.i);
    }

    size_t size() const { return nodes.size(); }
    void clear() { nodes.clear(); }

    // Inference tapes reuse a long-lived prefix (parameters, feature maps) and
    // drop everything built after it once results are copied out.
    size_t mark() const { return nodes.size(); }
    void truncate(size_t m) { nodes.resize(m); }
};

template <class T>
const Tensor<T>& Var<T>::val() const {
    return tape->nodes[size_t(i)].val;
}

namespace detail {
template <class T>
bool rg(std::initializer_list<Var<T>> parents) {
    for (const Var<T>& p : parents)
        if (p.tape->node(p).requires_grad) return true;
    return false;
}
template <class T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using EMap = Eigen::Map<EMat<T>>;
template <class T>
using ECMap = Eigen::Map<const EMat<T>>;
}  // namespace detail

// ----------------------------------------------------------------------------
// Elementwise and shape ops
// ----------------------------------------------------------------------------

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
    Tape<T>& tp = *a.tape;
    if (a.val().shape != b.val().shape) throw std::invalid_argument("add: shape mismatch");
    Tensor<T> out(a.val().shape);
    const Tensor<T>&A = a.val(), &B = b.val();
    for (int64_t k = 0; k < out.numel(); ++k) out.v[size_t(k)] = A.v[size_t(k)] + B.v[size_t(k)];
    return tp.make(std::move(out), detail::rg<T>({a, b}), [a, b](Tape<T>& t, int self) {
        const Tensor<T>& g = t.nodes[size_t(self)].grad;
        if (t.node(a).requires_grad) t.accum(a.i, g);
        if (t.node(b).requires_grad) t.accum(b.i, g);
    });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
    Tape<T>& tp = *a.tape;
    if (a.val().shape != b.val().shape) throw std::invalid_argument("sub: shape mismatch");
    Tensor<T> out(a.val().shape);
    const Tensor<T>&A = a.val(), &B = b.val();
    for (int64_t k = 0; k < out.numel(); ++k) out.v[size_t(k)] = A.v[size_t(k)] - B.v[size_t(k)];
    return tp.make(std::move(out), detail::rg<T>({a, b}), [a, b](Tape<T>& t, int self) {
        const Tensor<T>& g = t.nodes[size_t(self)].grad;
        if (t.node(a).requires_grad) t.accum(a.i, g);
        if (t.node(b).requires_grad) {
            Tensor<T>& dst = t.grad_buf(b.i);
            for (int64_t k = 0; k < g.numel(); ++k) dst.v[size_t(k)] -= g.v[size_t(k)];
        }
    });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
    Tape<T>& tp = *a.tape;
    if (a.val().shape != b.val().shape) throw std::invalid_argument("mul: shape mismatch");
    Tensor<T> out(a.val().shape);
    const Tensor<T>&A = a.val(), &B = b.val();
    for (int64_t k = 0; k < out.numel(); ++k) out.v[size_t(k)] = A.v[size_t(k)] * B.v[size_t(k)];
    return tp.make(std::move(out), detail::rg<T>({a, b}), [a, b](Tape<T>& t, int self) {
        const Tensor<T>& g = t.nodes[size_t(self)].grad;
        const Tensor<T>&A = t.val(a), &B = t.val(b);
        if (t.node(a).requires_grad) {
            Tensor<T>& dst = t.grad_buf(a.i);
            for (int64_t k = 0; k < g.numel(); ++k)
                dst.v[size_t(k)] += g.v[size_t(k)] * B.v[size_t(k)];
        }
        if (t.node(b).requires_grad) {
            Tensor<T>& dst = t.grad_buf(b.i);
            for (int64_t k = 0; k < g.numel(); ++k)
                dst.v[size_t(k)] += g.v[size_t(k)] * A.v[size_t(k)];
        }
    });
}

template <class T>
Var<T> scale(Var<T> a, double s) {
    Tape<T>& tp = *a.tape;
    Tensor<T> out(a.val().shape);
    const Tensor<T>& A = a.val();
    for (int64_t k = 0; k < out.numel(); ++k) out.v[size_t(k)] = A.v[size_t(k)] * T(s);
    return tp.make(std::move(out), detail::rg<T>({a}), [a, s](Tape<T>& t, int self) {
        const Tensor<T>& g = t.nodes[size_t(self)].grad;
        Tensor<T>& dst = t.grad_buf(a.i);
        for (int64_t k = 0; k < g.numel(); ++k) dst.v[size_t(k)] += g.v[size_t(k)] * T(s);
    });
}

template <class T>
Var<T> add_scalar(Var<T> a, double s) {
    Tape<T>& tp = *a.tape;
    Tensor<T> out(a.val().shape);
    const Tensor<T>& A = a.val();
    for (int64_t k = 0; k < out.numel(); ++k) out.v[size_t(k)] = A.v[size_t(k)] + T(s);
    return tp.make(std::move(out), detail::rg<T>({a}), [a](Tape<T>& t, int self) {
        t.accum(a.i, t.nodes[size_t(self)].grad);
    });
}

template <class T>
Var<T> reshape(Var<T> a, std::vector<int> shape) {
    Tape<T>& tp = *a.tape;
    Tensor<T> out = a.val();
    if (Tensor<T>::count(shape) != out.numel()) throw std::invalid_argument("reshape: numel mismatch");
    out.shape = std::move(shape);
    return tp.make(std::move(out), detail::rg<T>({a}), [a](Tape<T>& t, int self) {
        t.accum(a.i, t.nodes[size_t(self)].grad);  // flat layouts agree
    });
}

// [A,B,C] -> [B,A,C]
template <class T>
Var<T> transpose01(Var<T> x) {
    Tape<T>& tp = *x.tape;
    const Tensor<T>& X = x.val();
    if (X.rank() != 3) throw std::invalid_argument("transpose01: rank-3 only");
    const int A = X.shape[0], B = X.shape[1], C = X.shape[2];
    Tensor<T> out({B, A, C});
    parallel_for(A, [&](int64_t a) {
        for (int b = 0; b < B; ++b)
            std::copy_n(&X.v[(size_t(a) * B + b) * C], C, &out.v[(size_t(b) * A + a) * C]);
    });
    return tp.make(std::move(out), detail::rg<T>({x}), [x, A, B, C](Tape<T>& t, int self) {
        const Tensor<T>& g = t.nodes[size_t(self)].grad;
        Tensor<T>& dst = t.grad_buf(x.i);
        parallel_for(A, [&](int64_t a) {
            for (int b = 0; b < B; ++b) {
                const T* src = &g.v[(size_t(b) * A + a) * C];
                T* d = &dst.v[(size_t(a) * B + b) * C];
                for (int c = 0; c < C; ++c) d[c] += src[c];
            }
        });
    });
}

template <class T>
Var<T> slice_axis(Var<T> a, int axis, int start, int len) {
    Tape<T>& tp = *a.tape;
    const Tensor<T>& A = a.val();
    if (axis < 0) axis += A.rank();
    if (axis < 0 || axis >= A.rank() || start < 0 || start + len > A.shape[size_t(axis)])
        throw std::invalid_argument("slice_axis: out of range");
    int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= A.shape[size_t(d)];
    for (int d = axis + 1; d < A.rank(); ++d) inner *= A.shape[size_t(d)];
    const int full = A.shape[size_t(axis)];
    std::vector<int> oshape = A.shape;
    oshape[size_t(axis)] = len;
    Tensor<T> out(oshape);
    for (int64_t o = 0; o < outer; ++o)
        std::copy_n(&A.v[size_t((o * full + start) * inner)], size_t(len) * inner,
                    &out.v[size_t(o * len * inner)]);
    return tp.make(std::move(out), detail::rg<T>({a}),
                   [a, outer, inner, full, start, len](Tape<T>& t, int self) {
                       const Tensor<T>& g = t.nodes[size_t(self)].grad;
                       Tensor<T>& dst = t.grad_buf(a.i);
                       for (int64_t o = 0; o < outer; ++o) {
                           const T* src = &g.v[size_t(o * len * inner)];
                           T* d = &dst.v[size_t((o * full + start) * inner)];
                           for (int64_t k = 0; k < len * inner; ++k) d[k] += src[k];
                       }
                   });
}

template <class T>
Var<T> concat(int axis, std::vector<Var<T>> parts) {
    if (parts.empty()) throw std::invalid_argument("concat: no parts");
    Tape<T>& tp = *parts[0].tape;
    const int rank = parts[0].val().rank();
    if (axis < 0) axis += rank;
    int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= parts[0].val().shape[size_t(d)];
    for (int d = axis + 1; d < rank; ++d) inner *= parts[0].val().shape[size_t(d)];
    int total = 0;
    for (const auto& p : parts) total += p.val().shape[size_t(axis)];
    std::vector<int> oshape = parts[0].val().shape;
    oshape[size_t(axis)] = total;
    Tensor<T> out(oshape);
    int off = 0;
    bool rg = false;
    std::vector<int> lens;
    for (const auto& p : parts) {
        const Tensor<T>& P = p.val();
        const int len = P.shape[size_t(axis)];
        for (int64_t o = 0; o < outer; ++o)
            std::copy_n(&P.v[size_t(o * len * inner)], size_t(len) * inner,
                        &out.v[size_t((o * total + off) * inner)]);
        off += len;
        lens.push_back(len);
        rg = rg || tp.node(p).requires_grad;
    }
    return tp.make(std::move(out), rg, [parts, lens, outer, inner, total](Tape<T>& t, int self) {
        const Tensor<T>& g = t.nodes[size_t(self)].grad;
        int off = 0;
        for (size_t pi = 0; pi < parts.size(); ++pi) {
            const int len = lens[pi];
            if (t.node(parts[pi]).requires_grad) {
                Tensor<T>& dst = t.grad_buf(parts[pi].i);
                for (int64_t o = 0; o < outer; ++o) {
                    const T* src = &g.v[size_t((o * total + off) * inner)];
                    T* d = &dst.v[size_t(o * len * inner)];
                    for (int64_t k = 0; k < len * inner; ++k) d[k] += src[k];
                }
            }
            off += len;
        }
    });
}

template <class T, class... Rest>
Var<T> concat(int axis, Var<T> first, Var<T> second, Rest... rest) {
    return concat(axis, std::vector<Var<T>>{first, second, rest...});
}

template <class T>
Var<T> stopgrad(Var<T> a) {
    return a.tape->constant(a.val());
}

// ----------------------------------------------------------------------------
// Nonlinearities
// ----------------------------------------------------------------------------

template <class T>
Var<T> sigmoid(Var<T> a) {
    Tape<T>& tp = *a.tape;
    Tensor<T> out(a.val().shape);
    const Tensor<T>& A = a.val();
    for (int64_t k = 0; k < out.numel(); ++k) out.v[size_t(k)] = T(1) / (T(1) + std::exp(-A.v[size_t(k)]));
    Tensor<T> saved = out;
    return tp.make(std::move(out), detail::rg<T>({a}), [a, saved](Tape<T>& t, int self) {
        const Tensor<T>& g = t.nodes[size_t(self)].grad;
        Tensor<T>& dst = t.grad_buf(a.i);
        for (int64_t k = 0; k < g.numel(); ++k) {
            const T s = saved.v[size_t(k)];
            dst.v[size_t(k)] += g.v[size_t(k)] * s * (T(1) - s);
        }
    });
}

// tanh-form GELU
template <class T>
Var<T> gelu(Var<T> a) {
    Tape<T>& tp = *a.tape;
    const Tensor<T>& A = a.val();
    Tensor<T> out(A.shape);
    constexpr double c0 = 0.7978845608028654;  // sqrt(2/pi)
    constexpr double c1 = 0.044715;
    for (int64_t k = 0; k < out.numel(); ++k) {
        const double x = double(A.v[size_t(k)]);
        out.v[size_t(k)] = T(0.5 * x * (1.0 + std::tanh(c0 * (x + c1 * x * x * x))));
    }
    return tp.make(std::move(out), detail::rg<T>({a}), [a](Tape<T>& t, int self) {
        const Tensor<T>& g = t.nodes[size_t(self)].grad;
        const Tensor<T>& A = t.val(a);
        Tensor<T>& dst = t.grad_buf(a.i);
        for (int64_t k = 0; k < g.numel(); ++k) {
            const double x = double(A.v[size_t(k)]);
            const double u = c0 * (x + c1 * x * x * x);
            const double th = std::tanh(u);
            const double du = c0 * (1.0 + 3.0 * c1 * x * x);
            const double d = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du;
            dst.v[size_t(k)] += g.v[size_t(k)] * T(d);
        }
    });
}

template <class T>
Var<T> relu(Var<T> a) {
    Tape<T>& tp = *a.tape;
    const Tensor<T>& A = a.val();
    Tensor<T> out(A.shape);
    for (int64_t k = 0; k < out.numel(); ++k) out.v[size_t(k)] = A.v[size_t(k)] > T(0) ? A.v[size_t(k)] : T(0);
    return tp.make(std::move(out), detail::rg<T>({a}), [a](Tape<T>& t, int self) {
        const Tensor<T>& g = t.nodes[size_t(self)].grad;
        const Tensor<T>& A = t.val(a);
        Tensor<T>& dst = t.grad_buf(a.i);
        for (int64_t k = 0; k < g.numel(); ++k)
            if (A.v[size_t(k)] > T(0)) dst.v[size_t(k)] += g.v[size_t(k)];
    });
}

template <class T>
Var<T> abs_val(Var<T> a) {
    Tape<T>& tp = *a.tape;
    const Tensor<T>& A = a.val();
    Tensor<T> out(A.shape);
    for (int64_t k = 0; k < out.numel(); ++k) out.v[size_t(k)] = std::abs(A.v[size_t(k)]);
    return tp.make(std::move(out), detail::rg<T>({a}), [a](Tape<T>& t, int self) {
        const Tensor<T>& g = t.nodes[size_t(self)].grad;
        const Tensor<T>& A = t.val(a);
        Tensor<T>& dst = t.grad_buf(a.i);
        for (int64_t k = 0; k < g.numel(); ++k) {
            const T x = A.v[size_t(k)];
            dst.v[size_t(k)] += g.v[size_t(k)] * (x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)));
        }
    });
}

// min(x, cap); subgradient 0 where saturated
template <class T>
Var<T> clamp_max(Var<T> a, double cap) {
    Tape<T>& tp = *a.tape;
    const Tensor<T>& A = a.val();
    Tensor<T> out(A.shape);
    for (int64_t k = 0; k < out.numel(); ++k) out.v[size_t(k)] = std::min(A.v[size_t(k)], T(cap));
    return tp.make(std::move(out), detail::rg<T>({a}), [a, cap](Tape<T>& t, int self) {
        const Tensor<T>& g = t.nodes[size_t(self)].grad;
        const Tensor<T>& A = t.val(a);
        Tensor<T>& dst = t.grad_buf(a.i);
        for (int64_t k = 0; k < g.numel(); ++k)
            if (A.v[size_t(k)] < T(cap)) dst.v[size_t(k)] += g.v[size_t(k)];
    });
}

// ----------------------------------------------------------------------------
// Reductions
// ----------------------------------------------------------------------------

template <class T>
Var<T> sum_all(Var<T> a) {
    Tape<T>& tp = *a.tape;
    T s = T(0);
    for (const T& x : a.val().v) s += x;
    Tensor<T> out({1});
    out.v[0] = s;
    return tp.make(std::move(out), detail::rg<T>({a}), [a](Tape<T>& t, int self) {
        const T g = t.nodes[size_t(self)].grad.v[0];
        Tensor<T>& dst = t.grad_buf(a.i);
        for (T& x : dst.v) x += g;
    });
}

template <class T>
Var<T> mean_all(Var<T> a) {
    return scale(sum_all(a), 1.0 / double(a.val().numel()));
}

// Mean over the last axis, keeping it with size 1.
template <class T>
Var<T> mean_lastdim(Var<T> a) {
    Tape<T>& tp = *a.tape;
    const Tensor<T>& A = a.val();
    const int C = A.shape.back();
    const int64_t rows = A.numel() / C;
    std::vector<int> oshape = A.shape;
    oshape.back() = 1;
    Tensor<T> out(oshape);
    for (int64_t r = 0; r < rows; ++r) {
        T s = T(0);
        for (int c = 0; c < C; ++c) s += A.v[size_t(r * C + c)];
        out.v[size_t(r)] = s / T(C);
    }
    return tp.make(std::move(out), detail::rg<T>({a}), [a, rows, C](Tape<T>& t, int self) {
        const Tensor<T>& g = t.nodes[size_t(self)].grad;
        Tensor<T>& dst = t.grad_buf(a.i);
        for (int64_t r = 0; r < rows; ++r) {
            const T gr = g.v[size_t(r)] / T(C);
            for (int c = 0; c < C; ++c) dst.v[size_t(r * C + c)] += gr;
        }
    });
}

// ----------------------------------------------------------------------------
// Matrix multiply (Eigen GEMM, row-partitioned across workers)
// ----------------------------------------------------------------------------

namespace detail {
// Output rows are partitioned across workers, so accumulation stays exclusive
// and results do not depend on scheduling.

// C[M,N] (+)= A[M,K] * B[K,N]
template <class T>
void gemm_nn(const T* a, const T* b, T* c, int M, int K, int N, bool acc) {
    auto run = [&](int r0, int r1) {
        if (r1 <= r0) return;
        EMap<T> C(c + int64_t(r0) * N, r1 - r0, N);
        ECMap<T> A(a + int64_t(r0) * K, r1 - r0, K);
        ECMap<T> B(b, K, N);
        if (acc) C.noalias() += A * B; else C.noalias() = A * B;
    };
    const int workers = worker_count();
    if (int64_t(M) * K * N < (1 << 16) || workers <= 1) { run(0, M); return; }
    const int chunk = (M + workers - 1) / workers;
    parallel_for(workers, [&](int64_t w) {
        run(int(w) * chunk, std::min(M, (int(w) + 1) * chunk));
    });
}

// C[M,N] (+)= A[M,K] * B[N,K]^T
template <class T>
void gemm_nt(const T* a, const T* b, T* c, int M, int K, int N, bool acc) {
    auto run = [&](int r0, int r1) {
        if (r1 <= r0) return;
        EMap<T> C(c + int64_t(r0) * N, r1 - r0, N);
        ECMap<T> A(a + int64_t(r0) * K, r1 - r0, K);
        ECMap<T> B(b, N, K);
        if (acc) C.noalias() += A * B.transpose(); else C.noalias() = A * B.transpose();
    };
    const int workers = worker_count();
    if (int64_t(M) * K * N < (1 << 16) || workers <= 1) { run(0, M); return; }
    const int chunk = (M + workers - 1) / workers;
    parallel_for(workers, [&](int64_t w) {
        run(int(w) * chunk, std::min(M, (int(w) + 1) * chunk));
    });
}

// C[M,N] (+)= A[K,M]^T * B[K,N]
template <class T>
void gemm_tn(const T* a, const T* b, T* c, int M, int K, int N, bool acc) {
    auto run = [&](int r0, int r1) {
        if (r1 <= r0) return;
        EMap<T> C(c + int64_t(r0) * N, r1 - r0, N);
        ECMap<T> A(a, K, M);
        ECMap<T> B(b, K, N);
        if (acc) C.noalias() += A.middleCols(r0, r1 - r0).transpose() * B;
        else C.noalias() = A.middleCols(r0, r1 - r0).transpose() * B;
    };
    const int workers = worker_count();
    if (int64_t(M) * K * N < (1 << 16) || workers <= 1) { run(0, M); return; }
    const int chunk = (M + workers - 1) / workers;
    parallel_for(workers, [&](int64_t w) {
        run(int(w) * chunk, std::min(M, (int(w) + 1) * chunk));
    });
}
}  // namespace detail

// a: [M,K] (rank can be higher; trailing dim is K), b: [K,N] -> [.., N]
template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
    Tape<T>& tp = *a.tape;
    const Tensor<T>&A = a.val(), &B = b.val();
    if (B.rank() != 2) throw std::invalid_argument("matmul: rhs must be rank-2");
    const int K = B.shape[0], N = B.shape[1];
    if (A.shape.back() != K) throw std::invalid_argument("matmul: inner dim mismatch");
    const int M = int(A.numel() / K);
    std::vector<int> oshape = A.shape;
    oshape.back() = N;
    Tensor<T> out(oshape);
    detail::gemm_nn(A.data(), B.data(), out.data(), M, K, N, false);
    return tp.make(std::move(out), detail::rg<T>({a, b}), [a, b, M, K, N](Tape<T>& t, int self) {
        const Tensor<T>& g = t.nodes[size_t(self)].grad;
        if (t.node(a).requires_grad)
            detail::gemm_nt(g.data(), t.val(b).data(), t.grad_buf(a.i).data(), M, N, K, true);
        if (t.node(b).requires_grad)
            detail::gemm_tn(t.val(a).data(), g.data(), t.grad_buf(b.i).data(), K, M, N, true);
    });
}

}  // namespace genpt::ag
