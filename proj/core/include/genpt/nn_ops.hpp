#pragma once

#include "genpt/autograd.hpp"

namespace genpt::ag {

// ----------------------------------------------------------------------------
// Stable binary cross entropy on logits, mean over all elements.
// targets are plain data (no gradient).
// ----------------------------------------------------------------------------
template <class T>
Var<T> bce_with_logits_mean(Var<T> logits, Tensor<T> targets) {
    Tape<T>& tp = *logits.tape;
    const Tensor<T>& X = logits.val();
    if (X.shape != targets.shape) throw std::invalid_argument("bce: shape mismatch");
    const int64_t n = X.numel();
    double acc = 0.0;
    for (int64_t k = 0; k < n; ++k) {
        const double x = double(X.v[size_t(k)]);
        const double t = double(targets.v[size_t(k)]);
        acc += std::max(x, 0.0) - x * t + std::log1p(std::exp(-std::abs(x)));
    }
    Tensor<T> out({1});
    out.v[0] = T(acc / double(n));
    return tp.make(std::move(out), detail::rg<T>({logits}),
                   [logits, targets, n](Tape<T>& t, int self) {
                       const T g = t.nodes[size_t(self)].grad.v[0];
                       const Tensor<T>& X = t.val(logits);
                       Tensor<T>& dst = t.grad_buf(logits.i);
                       for (int64_t k = 0; k < n; ++k) {
                           const T s = T(1) / (T(1) + std::exp(-X.v[size_t(k)]));
                           dst.v[size_t(k)] += g * (s - targets.v[size_t(k)]) / T(n);
                       }
                   });
}

// ----------------------------------------------------------------------------
// RMS norm over the last axis. Optional learnable gain (pass invalid Var for none).
// ----------------------------------------------------------------------------
template <class T>
Var<T> rms_norm(Var<T> x, Var<T> gain, double eps = 1e-6) {
    Tape<T>& tp = *x.tape;
    const Tensor<T>& X = x.val();
    const int C = X.shape.back();
    const int64_t rows = X.numel() / C;
    const bool has_gain = gain.valid();
    if (has_gain && gain.val().numel() != C) throw std::invalid_argument("rms_norm: gain size");
    Tensor<T> out(X.shape);
    Tensor<T> inv_rms({int(rows)});
    const T* w = has_gain ? gain.val().data() : nullptr;
    parallel_for(rows, [&](int64_t r) {
        const T* xr = &X.v[size_t(r * C)];
        double ss = 0.0;
        for (int c = 0; c < C; ++c) ss += double(xr[c]) * double(xr[c]);
        const T ir = T(1.0 / std::sqrt(ss / double(C) + eps));
        inv_rms.v[size_t(r)] = ir;
        T* o = &out.v[size_t(r * C)];
        if (w)
            for (int c = 0; c < C; ++c) o[c] = xr[c] * ir * w[c];
        else
            for (int c = 0; c < C; ++c) o[c] = xr[c] * ir;
    });
    bool rg = tp.node(x).requires_grad || (has_gain && tp.node(gain).requires_grad);
    return tp.make(std::move(out), rg,
                   [x, gain, has_gain, inv_rms, rows, C](Tape<T>& t, int self) {
                       const Tensor<T>& g = t.nodes[size_t(self)].grad;
                       const Tensor<T>& X = t.val(x);
                       const T* w = has_gain ? t.val(gain).data() : nullptr;
                       if (t.node(x).requires_grad) {
                           Tensor<T>& dx = t.grad_buf(x.i);
                           parallel_for(rows, [&](int64_t r) {
                               const T* xr = &X.v[size_t(r * C)];
                               const T* gr = &g.v[size_t(r * C)];
                               T* d = &dx.v[size_t(r * C)];
                               const T ir = inv_rms.v[size_t(r)];
                               double dot = 0.0;  // sum_c g_c * w_c * x_c
                               for (int c = 0; c < C; ++c)
                                   dot += double(gr[c]) * double(w ? w[c] : T(1)) * double(xr[c]);
                               const T k = T(dot) * ir * ir * ir / T(C);
                               for (int c = 0; c < C; ++c)
                                   d[c] += gr[c] * (w ? w[c] : T(1)) * ir - k * xr[c];
                           });
                       }
                       if (has_gain && t.node(gain).requires_grad) {
                           Tensor<T>& dw = t.grad_buf(gain.i);
                           for (int64_t r = 0; r < rows; ++r) {
                               const T* xr = &X.v[size_t(r * C)];
                               const T* gr = &g.v[size_t(r * C)];
                               const T ir = inv_rms.v[size_t(r)];
                               for (int c = 0; c < C; ++c) dw.v[size_t(c)] += gr[c] * xr[c] * ir;
                           }
                       }
                   });
}

// ----------------------------------------------------------------------------
// Multi-head attention core. q, k, v: [B, S, C] after projections.
// Softmax probabilities are saved for the backward pass.
// ----------------------------------------------------------------------------
template <class T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, int heads) {
    Tape<T>& tp = *q.tape;
    const Tensor<T>&Q = q.val(), &K = k.val(), &V = v.val();
    if (Q.shape != K.shape || Q.shape != V.shape || Q.rank() != 3)
        throw std::invalid_argument("attention: q/k/v must share [B,S,C]");
    const int B = Q.shape[0], S = Q.shape[1], C = Q.shape[2];
    if (C % heads != 0) throw std::invalid_argument("attention: C % heads");
    const int D = C / heads;
    const T inv_sqrt_d = T(1.0 / std::sqrt(double(D)));

    Tensor<T> out(Q.shape);
    auto probs = std::make_shared<Tensor<T>>(std::vector<int>{B, heads, S, S});
    parallel_for(int64_t(B) * heads, [&](int64_t bh) {
        const int b = int(bh / heads), h = int(bh % heads);
        // strided head views: row stride C, offset h*D
        auto idx = [&](int s) { return (size_t(b) * S + s) * C + size_t(h) * D; };
        T* P = &probs->v[size_t(((size_t(b) * heads + h) * S) * S)];
        for (int i = 0; i < S; ++i) {
            const T* qi = &Q.v[idx(i)];
            T mx = -std::numeric_limits<T>::infinity();
            for (int j = 0; j < S; ++j) {
                const T* kj = &K.v[idx(j)];
                T s = T(0);
                for (int d = 0; d < D; ++d) s += qi[d] * kj[d];
                s *= inv_sqrt_d;
                P[i * S + j] = s;
                mx = std::max(mx, s);
            }
            T denom = T(0);
            for (int j = 0; j < S; ++j) {
                const T e = std::exp(P[i * S + j] - mx);
                P[i * S + j] = e;
                denom += e;
            }
            const T inv = T(1) / denom;
            T* oi = &out.v[idx(i)];
            for (int d = 0; d < D; ++d) oi[d] = T(0);
            for (int j = 0; j < S; ++j) {
                const T p = P[i * S + j] * inv;
                P[i * S + j] = p;
                const T* vj = &V.v[idx(j)];
                for (int d = 0; d < D; ++d) oi[d] += p * vj[d];
            }
        }
    });
    return tp.make(std::move(out), detail::rg<T>({q, k, v}),
                   [q, k, v, probs, B, S, C, D, heads, inv_sqrt_d](Tape<T>& t, int self) {
                       const Tensor<T>& g = t.nodes[size_t(self)].grad;
                       const Tensor<T>&Q = t.val(q), &K = t.val(k), &V = t.val(v);
                       Tensor<T>&dQ = t.grad_buf(q.i), &dK = t.grad_buf(k.i), &dV = t.grad_buf(v.i);
                       parallel_for(int64_t(B) * heads, [&](int64_t bh) {
                           const int b = int(bh / heads), h = int(bh % heads);
                           auto idx = [&](int s) { return (size_t(b) * S + s) * C + size_t(h) * D; };
                           const T* P = &probs->v[size_t(((size_t(b) * heads + h) * S) * S)];
                           std::vector<T> dP(size_t(S) * S);
                           for (int i = 0; i < S; ++i) {
                               const T* gi = &g.v[idx(i)];
                               // dV and dP
                               T rowdot = T(0);
                               for (int j = 0; j < S; ++j) {
                                   const T* vj = &V.v[idx(j)];
                                   T dp = T(0);
                                   for (int d = 0; d < D; ++d) dp += gi[d] * vj[d];
                                   dP[size_t(i) * S + j] = dp;
                                   rowdot += dp * P[i * S + j];
                               }
                               for (int j = 0; j < S; ++j) {
                                   const T ds =
                                       P[i * S + j] * (dP[size_t(i) * S + j] - rowdot) * inv_sqrt_d;
                                   dP[size_t(i) * S + j] = ds;  // reuse as dScores
                               }
                           }
                           // dV[j] += sum_i P[i,j] * g[i]; dQ[i] += sum_j dS[i,j]*K[j]; dK[j] += sum_i dS[i,j]*Q[i]
                           for (int j = 0; j < S; ++j) {
                               T* dvj = &dV.v[idx(j)];
                               T* dkj = &dK.v[idx(j)];
                               for (int i = 0; i < S; ++i) {
                                   const T p = P[i * S + j];
                                   const T ds = dP[size_t(i) * S + j];
                                   const T* gi = &g.v[idx(i)];
                                   const T* qi = &Q.v[idx(i)];
                                   for (int d = 0; d < D; ++d) {
                                       dvj[d] += p * gi[d];
                                       dkj[d] += ds * qi[d];
                                   }
                               }
                           }
                           for (int i = 0; i < S; ++i) {
                               T* dqi = &dQ.v[idx(i)];
                               for (int j = 0; j < S; ++j) {
                                   const T ds = dP[size_t(i) * S + j];
                                   const T* kj = &K.v[idx(j)];
                                   for (int d = 0; d < D; ++d) dqi[d] += ds * kj[d];
                               }
                           }
                       });
                   });
}

// ----------------------------------------------------------------------------
// Conv2d, stride s, symmetric zero padding. x: [N,C,H,W], w: [Co,Ci,kh,kw],
// optional bias [Co]. im2col + one GEMM over all frames.
// ----------------------------------------------------------------------------
namespace detail {
template <class T>
void im2col(const T* x, T* col, int C, int H, int W, int kh, int kw, int stride, int pad, int OH,
            int OW) {
    // col layout: [OH*OW, C*kh*kw]
    for (int oy = 0; oy < OH; ++oy)
        for (int ox = 0; ox < OW; ++ox) {
            T* dst = col + (size_t(oy) * OW + ox) * (size_t(C) * kh * kw);
            for (int c = 0; c < C; ++c)
                for (int dy = 0; dy < kh; ++dy) {
                    const int iy = oy * stride - pad + dy;
                    for (int dx = 0; dx < kw; ++dx) {
                        const int ix = ox * stride - pad + dx;
                        *dst++ = (iy >= 0 && iy < H && ix >= 0 && ix < W)
                                     ? x[(size_t(c) * H + iy) * W + ix]
                                     : T(0);
                    }
                }
        }
}

template <class T>
void col2im_acc(const T* col, T* x, int C, int H, int W, int kh, int kw, int stride, int pad,
                int OH, int OW) {
    for (int oy = 0; oy < OH; ++oy)
        for (int ox = 0; ox < OW; ++ox) {
            const T* src = col + (size_t(oy) * OW + ox) * (size_t(C) * kh * kw);
            for (int c = 0; c < C; ++c)
                for (int dy = 0; dy < kh; ++dy) {
                    const int iy = oy * stride - pad + dy;
                    for (int dx = 0; dx < kw; ++dx) {
                        const int ix = ox * stride - pad + dx;
                        if (iy >= 0 && iy < H && ix >= 0 && ix < W)
                            x[(size_t(c) * H + iy) * W + ix] += *src;
                        ++src;
                    }
                }
        }
}
}  // namespace detail

template <class T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> bias, int stride, int pad) {
    Tape<T>& tp = *x.tape;
    const Tensor<T>&X = x.val(), &W_ = w.val();
    if (X.rank() != 4 || W_.rank() != 4) throw std::invalid_argument("conv2d: rank");
    const int N = X.shape[0], C = X.shape[1], H = X.shape[2], Wd = X.shape[3];
    const int Co = W_.shape[0], Ci = W_.shape[1], kh = W_.shape[2], kw = W_.shape[3];
    if (Ci != C) throw std::invalid_argument("conv2d: channel mismatch");
    const int OH = (H + 2 * pad - kh) / stride + 1;
    const int OW = (Wd + 2 * pad - kw) / stride + 1;
    const int KK = C * kh * kw;
    const bool has_bias = bias.valid();

    // weight as [KK, Co]
    Tensor<T> wmat({KK, Co});
    for (int co = 0; co < Co; ++co)
        for (int k = 0; k < KK; ++k) wmat.v[size_t(k) * Co + co] = W_.v[size_t(co) * KK + k];

    auto cols = std::make_shared<Tensor<T>>(std::vector<int>{N * OH * OW, KK});
    parallel_for(N, [&](int64_t n) {
        detail::im2col(&X.v[size_t(n) * C * H * Wd], &cols->v[size_t(n) * OH * OW * KK], C, H, Wd,
                       kh, kw, stride, pad, OH, OW);
    });
    Tensor<T> omat({N * OH * OW, Co});
    detail::gemm_nn(cols->data(), wmat.data(), omat.data(), N * OH * OW, KK, Co, false);

    Tensor<T> out({N, Co, OH, OW});
    const T* bptr = has_bias ? bias.val().data() : nullptr;
    parallel_for(N, [&](int64_t n) {
        for (int p = 0; p < OH * OW; ++p) {
            const T* src = &omat.v[(size_t(n) * OH * OW + p) * Co];
            for (int co = 0; co < Co; ++co)
                out.v[((size_t(n) * Co + co) * OH * OW) + p] = src[co] + (bptr ? bptr[co] : T(0));
        }
    });

    bool rg = detail::rg<T>({x, w}) || (has_bias && tp.node(bias).requires_grad);
    return tp.make(
        std::move(out), rg,
        [x, w, bias, has_bias, cols, wmat, N, C, H, Wd, Co, kh, kw, stride, pad, OH, OW,
         KK](Tape<T>& t, int self) {
            const Tensor<T>& g = t.nodes[size_t(self)].grad;
            // g as [N*OH*OW, Co]
            Tensor<T> gmat({N * OH * OW, Co});
            parallel_for(N, [&](int64_t n) {
                for (int co = 0; co < Co; ++co) {
                    const T* src = &g.v[(size_t(n) * Co + co) * OH * OW];
                    for (int p = 0; p < OH * OW; ++p)
                        gmat.v[(size_t(n) * OH * OW + p) * Co + co] = src[p];
                }
            });
            if (t.node(w).requires_grad) {
                Tensor<T> dwmat({KK, Co});
                detail::gemm_tn(cols->data(), gmat.data(), dwmat.data(), KK, N * OH * OW, Co, false);
                Tensor<T>& dw = t.grad_buf(w.i);
                for (int co = 0; co < Co; ++co)
                    for (int k = 0; k < KK; ++k)
                        dw.v[size_t(co) * KK + k] += dwmat.v[size_t(k) * Co + co];
            }
            if (has_bias && t.node(bias).requires_grad) {
                Tensor<T>& db = t.grad_buf(bias.i);
                for (int64_t r = 0; r < int64_t(N) * OH * OW; ++r)
                    for (int co = 0; co < Co; ++co) db.v[size_t(co)] += gmat.v[size_t(r) * Co + co];
            }
            if (t.node(x).requires_grad) {
                Tensor<T> dcols({N * OH * OW, KK});
                detail::gemm_nt(gmat.data(), wmat.data(), dcols.data(), N * OH * OW, Co, KK, false);
                Tensor<T>& dx = t.grad_buf(x.i);
                parallel_for(N, [&](int64_t n) {
                    detail::col2im_acc(&dcols.v[size_t(n) * OH * OW * KK],
                                       &dx.v[size_t(n) * C * H * Wd], C, H, Wd, kh, kw, stride, pad,
                                       OH, OW);
                });
            }
        });
}

// 2x2 average pooling, stride 2. x: [N,C,H,W] with even H, W.
template <class T>
Var<T> avg_pool2(Var<T> x) {
    Tape<T>& tp = *x.tape;
    const Tensor<T>& X = x.val();
    const int N = X.shape[0], C = X.shape[1], H = X.shape[2], W = X.shape[3];
    if (H % 2 || W % 2) throw std::invalid_argument("avg_pool2: odd extent");
    const int OH = H / 2, OW = W / 2;
    Tensor<T> out({N, C, OH, OW});
    parallel_for(int64_t(N) * C, [&](int64_t nc) {
        const T* src = &X.v[size_t(nc) * H * W];
        T* dst = &out.v[size_t(nc) * OH * OW];
        for (int y = 0; y < OH; ++y)
            for (int xo = 0; xo < OW; ++xo)
                dst[y * OW + xo] = (src[(2 * y) * W + 2 * xo] + src[(2 * y) * W + 2 * xo + 1] +
                                    src[(2 * y + 1) * W + 2 * xo] + src[(2 * y + 1) * W + 2 * xo + 1]) *
                                   T(0.25);
    });
    return tp.make(std::move(out), detail::rg<T>({x}), [x, N, C, H, W, OH, OW](Tape<T>& t, int self) {
        const Tensor<T>& g = t.nodes[size_t(self)].grad;
        Tensor<T>& dx = t.grad_buf(x.i);
        parallel_for(int64_t(N) * C, [&](int64_t nc) {
            const T* src = &g.v[size_t(nc) * OH * OW];
            T* dst = &dx.v[size_t(nc) * H * W];
            for (int y = 0; y < OH; ++y)
                for (int xo = 0; xo < OW; ++xo) {
                    const T v = src[y * OW + xo] * T(0.25);
                    dst[(2 * y) * W + 2 * xo] += v;
                    dst[(2 * y) * W + 2 * xo + 1] += v;
                    dst[(2 * y + 1) * W + 2 * xo] += v;
                    dst[(2 * y + 1) * W + 2 * xo + 1] += v;
                }
        });
    });
}

// Instance norm over spatial extent per (n, c), with affine weight/bias [C].
template <class T>
Var<T> instance_norm(Var<T> x, Var<T> weight, Var<T> bias, double eps = 1e-5) {
    Tape<T>& tp = *x.tape;
    const Tensor<T>& X = x.val();
    const int N = X.shape[0], C = X.shape[1], HW = X.shape[2] * X.shape[3];
    Tensor<T> out(X.shape);
    auto stats = std::make_shared<Tensor<T>>(std::vector<int>{N, C, 2});  // mean, inv_std
    const T* w = weight.val().data();
    const T* b = bias.val().data();
    parallel_for(int64_t(N) * C, [&](int64_t nc) {
        const T* src = &X.v[size_t(nc) * HW];
        double mu = 0.0;
        for (int p = 0; p < HW; ++p) mu += double(src[p]);
        mu /= HW;
        double var = 0.0;
        for (int p = 0; p < HW; ++p) {
            const double d = double(src[p]) - mu;
            var += d * d;
        }
        var /= HW;
        const T istd = T(1.0 / std::sqrt(var + eps));
        stats->v[size_t(nc) * 2] = T(mu);
        stats->v[size_t(nc) * 2 + 1] = istd;
        const int c = int(nc % C);
        T* dst = &out.v[size_t(nc) * HW];
        for (int p = 0; p < HW; ++p) dst[p] = (src[p] - T(mu)) * istd * w[c] + b[c];
    });
    bool rg = detail::rg<T>({x, weight, bias});
    return tp.make(std::move(out), rg, [x, weight, bias, stats, N, C, HW](Tape<T>& t, int self) {
        const Tensor<T>& g = t.nodes[size_t(self)].grad;
        const Tensor<T>& X = t.val(x);
        const T* w = t.val(weight).data();
        const bool need_dx = t.node(x).requires_grad;
        const bool need_dw = t.node(weight).requires_grad;
        const bool need_db = t.node(bias).requires_grad;
        Tensor<T>* dx = need_dx ? &t.grad_buf(x.i) : nullptr;
        if (need_dx)
            parallel_for(int64_t(N) * C, [&](int64_t nc) {
                const int c = int(nc % C);
                const T mu = stats->v[size_t(nc) * 2];
                const T istd = stats->v[size_t(nc) * 2 + 1];
                const T* src = &X.v[size_t(nc) * HW];
                const T* gr = &g.v[size_t(nc) * HW];
                double sg = 0.0, sgx = 0.0;
                for (int p = 0; p < HW; ++p) {
                    const double xn = double((src[p] - mu) * istd);
                    sg += double(gr[p]);
                    sgx += double(gr[p]) * xn;
                }
                T* d = &dx->v[size_t(nc) * HW];
                for (int p = 0; p < HW; ++p) {
                    const double xn = double((src[p] - mu) * istd);
                    d[p] += w[c] * istd *
                            T(double(gr[p]) - sg / HW - xn * sgx / HW);
                }
            });
        if (need_dw || need_db) {
            Tensor<T>&dw = t.grad_buf(weight.i), &db = t.grad_buf(bias.i);
            for (int64_t nc = 0; nc < int64_t(N) * C; ++nc) {
                const int c = int(nc % C);
                const T mu = stats->v[size_t(nc) * 2];
                const T istd = stats->v[size_t(nc) * 2 + 1];
                const T* src = &X.v[size_t(nc) * HW];
                const T* gr = &g.v[size_t(nc) * HW];
                double sdw = 0.0, sdb = 0.0;
                for (int p = 0; p < HW; ++p) {
                    sdw += double(gr[p]) * double((src[p] - mu) * istd);
                    sdb += double(gr[p]);
                }
                if (need_dw) dw.v[size_t(c)] += T(sdw);
                if (need_db) db.v[size_t(c)] += T(sdb);
            }
        }
    });
}

// ----------------------------------------------------------------------------
// Bilinear 7x7 neighbourhood gather. fmap: [F,C,Hs,Ws], centers: [F,N,2] in
// feature-grid coordinates (x, y). Output: [F,N,C,49]. Out-of-bounds taps
// clamp to the edge; clamped taps contribute zero position gradient.
// ----------------------------------------------------------------------------
template <class T>
Var<T> neighborhood_sample(Var<T> fmap, Var<T> centers, int radius = 3) {
    Tape<T>& tp = *fmap.tape;
    const Tensor<T>&M = fmap.val(), &P = centers.val();
    if (M.rank() != 4 || P.rank() != 3 || P.shape[2] != 2)
        throw std::invalid_argument("neighborhood_sample: bad shapes");
    const int F = M.shape[0], C = M.shape[1], Hs = M.shape[2], Ws = M.shape[3];
    if (P.shape[0] != F) throw std::invalid_argument("neighborhood_sample: frame mismatch");
    const int N = P.shape[1];
    const int side = 2 * radius + 1, taps = side * side;
    if (!P.all_finite()) throw std::invalid_argument("neighborhood_sample: non-finite points");

    Tensor<T> out({F, N, C, taps});
    parallel_for(int64_t(F) * N, [&](int64_t fn) {
        const int f = int(fn / N), n = int(fn % N);
        const T cx = P.v[size_t(fn) * 2], cy = P.v[size_t(fn) * 2 + 1];
        const T* fr = &M.v[size_t(f) * C * Hs * Ws];
        T* o = &out.v[size_t(fn) * C * taps];
        for (int ti = 0; ti < taps; ++ti) {
            const int dy = ti / side - radius, dx = ti % side - radius;
            T gx = cx + T(dx), gy = cy + T(dy);
            gx = std::min(std::max(gx, T(0)), T(Ws - 1));
            gy = std::min(std::max(gy, T(0)), T(Hs - 1));
            const int x0 = std::min(int(std::floor(gx)), Ws - 2 >= 0 ? Ws - 2 : 0);
            const int y0 = std::min(int(std::floor(gy)), Hs - 2 >= 0 ? Hs - 2 : 0);
            const T ax = gx - T(x0), ay = gy - T(y0);
            const size_t base = size_t(y0) * Ws + x0;
            for (int c = 0; c < C; ++c) {
                const T* pc = fr + size_t(c) * Hs * Ws + base;
                const T v00 = pc[0];
                const T v01 = (Ws > 1) ? pc[1] : pc[0];
                const T v10 = (Hs > 1) ? pc[Ws] : pc[0];
                const T v11 = (Hs > 1 && Ws > 1) ? pc[Ws + 1] : v00;
                o[size_t(c) * taps + ti] = (T(1) - ay) * ((T(1) - ax) * v00 + ax * v01) +
                                           ay * ((T(1) - ax) * v10 + ax * v11);
            }
        }
    });
    return tp.make(
        std::move(out), detail::rg<T>({fmap, centers}),
        [fmap, centers, F, C, Hs, Ws, N, radius, side, taps](Tape<T>& t, int self) {
            const Tensor<T>& g = t.nodes[size_t(self)].grad;
            const Tensor<T>&M = t.val(fmap), &P = t.val(centers);
            const bool need_dmap = t.node(fmap).requires_grad;
            const bool need_dpts = t.node(centers).requires_grad;
            Tensor<T>* dmap = need_dmap ? &t.grad_buf(fmap.i) : nullptr;
            Tensor<T>* dpts = need_dpts ? &t.grad_buf(centers.i) : nullptr;
            // Frames own disjoint slices of dmap; points within a frame run serially.
            parallel_for(F, [&](int64_t f) {
                for (int n = 0; n < N; ++n) {
                    const size_t fn = size_t(f) * N + n;
                    const T cx = P.v[fn * 2], cy = P.v[fn * 2 + 1];
                    const T* fr = &M.v[size_t(f) * C * Hs * Ws];
                    T* dfr = need_dmap ? &dmap->v[size_t(f) * C * Hs * Ws] : nullptr;
                    const T* go = &g.v[fn * C * taps];
                    T dcx = T(0), dcy = T(0);
                    for (int ti = 0; ti < taps; ++ti) {
                        const int dy = ti / side - radius, dx = ti % side - radius;
                        T gx = cx + T(dx), gy = cy + T(dy);
                        const bool inx = gx > T(0) && gx < T(Ws - 1);
                        const bool iny = gy > T(0) && gy < T(Hs - 1);
                        gx = std::min(std::max(gx, T(0)), T(Ws - 1));
                        gy = std::min(std::max(gy, T(0)), T(Hs - 1));
                        const int x0 = std::min(int(std::floor(gx)), Ws - 2 >= 0 ? Ws - 2 : 0);
                        const int y0 = std::min(int(std::floor(gy)), Hs - 2 >= 0 ? Hs - 2 : 0);
                        const T ax = gx - T(x0), ay = gy - T(y0);
                        const size_t base = size_t(y0) * Ws + x0;
                        for (int c = 0; c < C; ++c) {
                            const T gv = go[size_t(c) * taps + ti];
                            if (gv == T(0)) continue;
                            const T* pc = fr + size_t(c) * Hs * Ws + base;
                            const T v00 = pc[0];
                            const T v01 = (Ws > 1) ? pc[1] : pc[0];
                            const T v10 = (Hs > 1) ? pc[Ws] : pc[0];
                            const T v11 = (Hs > 1 && Ws > 1) ? pc[Ws + 1] : v00;
                            if (need_dmap) {
                                T* dc = dfr + size_t(c) * Hs * Ws + base;
                                dc[0] += gv * (T(1) - ay) * (T(1) - ax);
                                if (Ws > 1) dc[1] += gv * (T(1) - ay) * ax;
                                if (Hs > 1) dc[Ws] += gv * ay * (T(1) - ax);
                                if (Hs > 1 && Ws > 1) dc[Ws + 1] += gv * ay * ax;
                            }
                            if (need_dpts) {
                                if (inx)
                                    dcx += gv * ((T(1) - ay) * (v01 - v00) + ay * (v11 - v10));
                                if (iny)
                                    dcy += gv * ((T(1) - ax) * (v10 - v00) + ax * (v11 - v01));
                            }
                        }
                    }
                    if (need_dpts) {
                        dpts->v[fn * 2] += dcx;
                        dpts->v[fn * 2 + 1] += dcy;
                    }
                }
            });
        });
}

// ----------------------------------------------------------------------------
// Neighbourhood gather with one frame index per point: fmap [F,C,H,W],
// pts [N,2] grid coords, frames[n] selects the source frame. -> [N,C,taps].
// ----------------------------------------------------------------------------
namespace detail {
template <class T>
inline void bilinear_locate(T cx, T cy, int dx, int dy, int Hs, int Ws, int& x0, int& y0, T& ax,
                            T& ay) {
    T gx = std::min(std::max(cx + T(dx), T(0)), T(Ws - 1));
    T gy = std::min(std::max(cy + T(dy), T(0)), T(Hs - 1));
    x0 = std::min(int(std::floor(gx)), std::max(Ws - 2, 0));
    y0 = std::min(int(std::floor(gy)), std::max(Hs - 2, 0));
    ax = gx - T(x0);
    ay = gy - T(y0);
}
}  // namespace detail

template <class T>
Var<T> neighborhood_sample_frames(Var<T> fmap, Var<T> pts, std::vector<int> frames,
                                  int radius = 3) {
    Tape<T>& tp = *fmap.tape;
    const Tensor<T>&M = fmap.val(), &P = pts.val();
    if (M.rank() != 4 || P.rank() != 2 || P.shape[1] != 2)
        throw std::invalid_argument("neighborhood_sample_frames: bad shapes");
    const int N = P.shape[0], C = M.shape[1], Hs = M.shape[2], Ws = M.shape[3];
    if (int(frames.size()) != N)
        throw std::invalid_argument("neighborhood_sample_frames: frame count");
    for (int f : frames)
        if (f < 0 || f >= M.shape[0])
            throw std::invalid_argument("neighborhood_sample_frames: frame index out of range");
    const int side = 2 * radius + 1, taps = side * side;

    Tensor<T> out({N, C, taps});
    parallel_for(N, [&](int64_t n) {
        const T cx = P.v[size_t(n) * 2], cy = P.v[size_t(n) * 2 + 1];
        const T* fr = &M.v[size_t(frames[size_t(n)]) * C * Hs * Ws];
        for (int ti = 0; ti < taps; ++ti) {
            int x0, y0;
            T ax, ay;
            detail::bilinear_locate(cx, cy, ti % side - radius, ti / side - radius, Hs, Ws, x0, y0,
                                    ax, ay);
            const size_t base = size_t(y0) * Ws + x0;
            for (int c = 0; c < C; ++c) {
                const T* pc = fr + size_t(c) * Hs * Ws + base;
                const T v00 = pc[0], v01 = (Ws > 1) ? pc[1] : pc[0];
                const T v10 = (Hs > 1) ? pc[Ws] : pc[0];
                const T v11 = (Hs > 1 && Ws > 1) ? pc[Ws + 1] : v00;
                out.v[(size_t(n) * C + c) * taps + ti] =
                    (T(1) - ay) * ((T(1) - ax) * v00 + ax * v01) +
                    ay * ((T(1) - ax) * v10 + ax * v11);
            }
        }
    });
    return tp.make(std::move(out), detail::rg<T>({fmap, pts}),
                   [fmap, pts, frames, N, C, Hs, Ws, radius, side, taps](Tape<T>& t, int self) {
                       const Tensor<T>& g = t.nodes[size_t(self)].grad;
                       const Tensor<T>&M = t.val(fmap), &P = t.val(pts);
                       const bool need_dmap = t.node(fmap).requires_grad;
                       const bool need_dpts = t.node(pts).requires_grad;
                       Tensor<T>* dmap = need_dmap ? &t.grad_buf(fmap.i) : nullptr;
                       Tensor<T>* dpts = need_dpts ? &t.grad_buf(pts.i) : nullptr;
                       for (int n = 0; n < N; ++n) {  // frames may repeat: run serial
                           const T cx = P.v[size_t(n) * 2], cy = P.v[size_t(n) * 2 + 1];
                           const T* fr = &M.v[size_t(frames[size_t(n)]) * C * Hs * Ws];
                           T* dfr = need_dmap ? &dmap->v[size_t(frames[size_t(n)]) * C * Hs * Ws]
                                              : nullptr;
                           T dcx = T(0), dcy = T(0);
                           for (int ti = 0; ti < taps; ++ti) {
                               int x0, y0;
                               T ax, ay;
                               const int dy = ti / side - radius, dx = ti % side - radius;
                               detail::bilinear_locate(cx, cy, dx, dy, Hs, Ws, x0, y0, ax, ay);
                               const bool inx = cx + T(dx) > T(0) && cx + T(dx) < T(Ws - 1);
                               const bool iny = cy + T(dy) > T(0) && cy + T(dy) < T(Hs - 1);
                               const size_t base = size_t(y0) * Ws + x0;
                               for (int c = 0; c < C; ++c) {
                                   const T gv = g.v[(size_t(n) * C + c) * taps + ti];
                                   if (gv == T(0)) continue;
                                   const T* pc = fr + size_t(c) * Hs * Ws + base;
                                   const T v00 = pc[0], v01 = (Ws > 1) ? pc[1] : pc[0];
                                   const T v10 = (Hs > 1) ? pc[Ws] : pc[0];
                                   const T v11 = (Hs > 1 && Ws > 1) ? pc[Ws + 1] : v00;
                                   if (need_dmap) {
                                       T* dc = dfr + size_t(c) * Hs * Ws + base;
                                       dc[0] += gv * (T(1) - ay) * (T(1) - ax);
                                       if (Ws > 1) dc[1] += gv * (T(1) - ay) * ax;
                                       if (Hs > 1) dc[Ws] += gv * ay * (T(1) - ax);
                                       if (Hs > 1 && Ws > 1) dc[Ws + 1] += gv * ay * ax;
                                   }
                                   if (need_dpts) {
                                       if (inx) dcx += gv * ((T(1) - ay) * (v01 - v00) +
                                                             ay * (v11 - v10));
                                       if (iny) dcy += gv * ((T(1) - ax) * (v10 - v00) +
                                                             ax * (v11 - v01));
                                   }
                               }
                           }
                           if (need_dpts) {
                               dpts->v[size_t(n) * 2] += dcx;
                               dpts->v[size_t(n) * 2 + 1] += dcy;
                           }
                       }
                   });
}

// Prepend an axis of length `times` by repetition: [..] -> [times, ..].
// Backward sums over the new axis.
template <class T>
Var<T> broadcast0(Var<T> a, int times) {
    Tape<T>& tp = *a.tape;
    const Tensor<T>& A = a.val();
    std::vector<int> oshape{times};
    for (int d : A.shape) oshape.push_back(d);
    Tensor<T> out(oshape);
    const int64_t n = A.numel();
    for (int r = 0; r < times; ++r) std::copy_n(A.data(), n, out.data() + int64_t(r) * n);
    return tp.make(std::move(out), detail::rg<T>({a}), [a, times, n](Tape<T>& t, int self) {
        const Tensor<T>& g = t.nodes[size_t(self)].grad;
        Tensor<T>& dst = t.grad_buf(a.i);
        for (int r = 0; r < times; ++r) {
            const T* src = g.data() + int64_t(r) * n;
            for (int64_t k = 0; k < n; ++k) dst.v[size_t(k)] += src[k];
        }
    });
}

// Repeat along existing axis 0: [A, ..] with A==1 -> [times, ..].
template <class T>
Var<T> repeat_axis0(Var<T> a, int times) {
    const Tensor<T>& A = a.val();
    if (A.shape.empty() || A.shape[0] != 1) throw std::invalid_argument("repeat_axis0: dim0 != 1");
    std::vector<int> inner(A.shape.begin() + 1, A.shape.end());
    auto dropped = reshape(a, inner);
    std::vector<int> oshape = A.shape;
    oshape[0] = times;
    return reshape(broadcast0(dropped, times), oshape);
}

// ----------------------------------------------------------------------------
// Channelwise affine for [..,2] coordinate tensors: (x,y) -> (ax*x+bx, ay*y+by).
// ----------------------------------------------------------------------------
template <class T>
Var<T> affine2(Var<T> a, double ax, double bx, double ay, double by) {
    Tape<T>& tp = *a.tape;
    const Tensor<T>& A = a.val();
    if (A.shape.empty() || A.shape.back() != 2) throw std::invalid_argument("affine2: last dim != 2");
    Tensor<T> out(A.shape);
    for (int64_t i = 0; i < A.numel(); i += 2) {
        out.v[size_t(i)] = A.v[size_t(i)] * T(ax) + T(bx);
        out.v[size_t(i) + 1] = A.v[size_t(i) + 1] * T(ay) + T(by);
    }
    return tp.make(std::move(out), detail::rg<T>({a}), [a, ax, ay](Tape<T>& t, int self) {
        const Tensor<T>& g = t.nodes[size_t(self)].grad;
        Tensor<T>& dst = t.grad_buf(a.i);
        for (int64_t i = 0; i < g.numel(); i += 2) {
            dst.v[size_t(i)] += g.v[size_t(i)] * T(ax);
            dst.v[size_t(i) + 1] += g.v[size_t(i) + 1] * T(ay);
        }
    });
}

// ----------------------------------------------------------------------------
// Per-(frame, point) Gram matrix between two neighbourhood feature sets.
// fq, ft: [F,N,C,taps] -> out [F,N,taps*taps], out[i*taps+j] = sum_c fq[..c,i]*ft[..c,j].
// ----------------------------------------------------------------------------
template <class T>
Var<T> corr_gram(Var<T> fq, Var<T> ft) {
    Tape<T>& tp = *fq.tape;
    const Tensor<T>&A = fq.val(), &B = ft.val();
    if (A.shape != B.shape || A.rank() != 4) throw std::invalid_argument("corr_gram: shapes");
    const int F = A.shape[0], N = A.shape[1], C = A.shape[2], taps = A.shape[3];
    Tensor<T> out({F, N, taps * taps});
    parallel_for(int64_t(F) * N, [&](int64_t fn) {
        detail::gemm_tn(&A.v[size_t(fn) * C * taps], &B.v[size_t(fn) * C * taps],
                        &out.v[size_t(fn) * taps * taps], taps, C, taps, false);
    });
    return tp.make(std::move(out), detail::rg<T>({fq, ft}),
                   [fq, ft, F, N, C, taps](Tape<T>& t, int self) {
                       const Tensor<T>& g = t.nodes[size_t(self)].grad;
                       const Tensor<T>&A = t.val(fq), &B = t.val(ft);
                       const bool need_da = t.node(fq).requires_grad;
                       const bool need_db = t.node(ft).requires_grad;
                       Tensor<T>* da = need_da ? &t.grad_buf(fq.i) : nullptr;
                       Tensor<T>* db = need_db ? &t.grad_buf(ft.i) : nullptr;
                       parallel_for(int64_t(F) * N, [&](int64_t fn) {
                           const T* G = &g.v[size_t(fn) * taps * taps];
                           // dA[c,i] += sum_j G[i,j] * B[c,j]  => dA += B * G^T
                           if (need_da)
                               detail::gemm_nt(&B.v[size_t(fn) * C * taps], G,
                                               &da->v[size_t(fn) * C * taps], C, taps, taps, true);
                           // dB[c,j] += sum_i G[i,j] * A[c,i]  => dB += A * G
                           if (need_db)
                               detail::gemm_nn(&A.v[size_t(fn) * C * taps], G,
                                               &db->v[size_t(fn) * C * taps], C, taps, taps, true);
                       });
                   });
}

}  // namespace genpt::ag
