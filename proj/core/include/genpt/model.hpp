#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "genpt/nn_ops.hpp"
#include "genpt/rng.hpp"

namespace genpt {

// Sizes of the learned components. Defaults are the desk-scale configuration;
// feat_channels can be raised to 128 to match the full-size setup.
struct ModelConfig {
    int scales = 3;          // pyramid levels S
    int feat_channels = 64;  // encoder output channels per level
    int enc_base = 24;       // encoder stem width (doubled after downsampling)
    int corr_dim = 64;       // correlation embedding per scale
    int corr_hidden = 64;    // hidden width of the correlation MLP
    int neighborhood_radius = 3;  // 7x7 crops

    int width = 128;  // refiner token width
    int heads = 4;
    int temporal_blocks = 3;
    int spatial_block_at = 2;  // insert the spatial block after this many temporal blocks
    int mlp_mult = 2;

    double init_std_scale = 1.0;       // multiplies the 1/sqrt(fan_in) linear init
    double nearzero_init_std = 1e-4;   // attention out-proj, MLP out, adaptive-norm modulation
    double head_init_std = 1e-6;       // output head; keeps the first update below 1e-4

    int taps() const {
        const int side = 2 * neighborhood_radius + 1;
        return side * side;
    }
    int cond_dim() const { return scales * corr_dim; }
    int input_dim() const { return 9; }
};

// Ordered named-tensor container for all learnable arrays. Order is fixed at
// construction so flattened views (optimizer state, finite differences) are
// reproducible.
template <class T>
struct Params {
    std::vector<std::string> names;
    std::unordered_map<std::string, Tensor<T>> values;

    Tensor<T>& add(const std::string& name, std::vector<int> shape) {
        if (values.count(name)) throw std::logic_error("Params: duplicate " + name);
        names.push_back(name);
        return values.emplace(name, Tensor<T>(std::move(shape))).first->second;
    }
    Tensor<T>& at(const std::string& name) {
        auto it = values.find(name);
        if (it == values.end()) throw std::out_of_range("Params: missing " + name);
        return it->second;
    }
    const Tensor<T>& at(const std::string& name) const {
        auto it = values.find(name);
        if (it == values.end()) throw std::out_of_range("Params: missing " + name);
        return it->second;
    }
    int64_t total() const {
        int64_t n = 0;
        for (const auto& name : names) n += values.at(name).numel();
        return n;
    }
    template <class U>
    Params<U> cast() const {
        Params<U> out;
        out.names = names;
        for (const auto& name : names) out.values.emplace(name, values.at(name).template cast<U>());
        return out;
    }
};

// Parameters bound to a tape as leaves for one forward/backward pass.
template <class T>
struct BoundParams {
    std::unordered_map<std::string, ag::Var<T>> vars;

    ag::Var<T> operator[](const std::string& name) const {
        auto it = vars.find(name);
        if (it == vars.end()) throw std::out_of_range("BoundParams: missing " + name);
        return it->second;
    }
};

template <class T>
BoundParams<T> bind_params(ag::Tape<T>& tape, const Params<T>& params, bool requires_grad = true) {
    BoundParams<T> out;
    for (const auto& name : params.names)
        out.vars.emplace(name, tape.leaf(params.values.at(name), requires_grad));
    return out;
}

namespace detail_model {
inline void add_res_block(Params<float>& p, const std::string& prefix, int ch) {
    p.add(prefix + "_conv1.w", {ch, ch, 3, 3});
    p.add(prefix + "_conv1.b", {ch});
    p.add(prefix + "_in1.w", {ch});
    p.add(prefix + "_in1.b", {ch});
    p.add(prefix + "_conv2.w", {ch, ch, 3, 3});
    p.add(prefix + "_conv2.b", {ch});
    p.add(prefix + "_in2.w", {ch});
    p.add(prefix + "_in2.b", {ch});
}
}  // namespace detail_model

inline Params<float> build_params(const ModelConfig& cfg) {
    Params<float> p;
    const int B = cfg.enc_base;
    p.add("encoder/stem.w", {B, 3, 7, 7});
    p.add("encoder/stem.b", {B});
    p.add("encoder/stem_in.w", {B});
    p.add("encoder/stem_in.b", {B});
    detail_model::add_res_block(p, "encoder/res1", B);
    p.add("encoder/down.w", {2 * B, B, 3, 3});
    p.add("encoder/down.b", {2 * B});
    p.add("encoder/down_in.w", {2 * B});
    p.add("encoder/down_in.b", {2 * B});
    detail_model::add_res_block(p, "encoder/res2", 2 * B);
    p.add("encoder/proj.w", {cfg.feat_channels, 2 * B, 1, 1});
    p.add("encoder/proj.b", {cfg.feat_channels});

    const int taps2 = cfg.taps() * cfg.taps();
    p.add("corr_mlp/w1", {taps2, cfg.corr_hidden});
    p.add("corr_mlp/w2", {cfg.corr_hidden, cfg.corr_dim});

    const int w = cfg.width, cd = cfg.cond_dim(), hid = cfg.mlp_mult * cfg.width;
    p.add("refiner/embed.w", {cfg.input_dim(), w});
    for (int b = 0; b < cfg.temporal_blocks; ++b) {
        const std::string pre = "refiner/t" + std::to_string(b);
        p.add(pre + "_ada1.w", {cd, w});
        p.add(pre + "_wq.w", {w, w});
        p.add(pre + "_wk.w", {w, w});
        p.add(pre + "_wv.w", {w, w});
        p.add(pre + "_wo.w", {w, w});
        p.add(pre + "_ada2.w", {cd, w});
        p.add(pre + "_mlp_in.w", {w, 2 * hid});
        p.add(pre + "_mlp_out.w", {hid, w});
    }
    p.add("refiner/s_norm1.g", {w});
    p.add("refiner/s_wq.w", {w, w});
    p.add("refiner/s_wk.w", {w, w});
    p.add("refiner/s_wv.w", {w, w});
    p.add("refiner/s_wo.w", {w, w});
    p.add("refiner/s_norm2.g", {w});
    p.add("refiner/s_mlp_in.w", {w, 2 * hid});
    p.add("refiner/s_mlp_out.w", {hid, w});
    p.add("refiner/out_norm.g", {w});
    p.add("refiner/head.w", {w, 4});
    return p;
}

inline void init_params(Params<float>& p, const ModelConfig& cfg, uint64_t seed) {
    Rng rng(Rng::mix(seed ^ 0x6d6f64656cull));
    auto fill_normal = [&](Tensorf& t, double std) {
        for (float& x : t.v) x = float(rng.gaussian() * std);
    };
    for (const auto& name : p.names) {
        Tensorf& t = p.at(name);
        if (name.ends_with(".b")) {
            for (float& x : t.v) x = 0.f;
        } else if (t.rank() == 1) {  // norm gains
            for (float& x : t.v) x = 1.f;
        } else if (name == "refiner/head.w") {
            fill_normal(t, cfg.head_init_std);
        } else if (name.ends_with("_wo.w") || name.ends_with("_mlp_out.w") ||
                   name.ends_with("_ada1.w") || name.ends_with("_ada2.w")) {
            fill_normal(t, cfg.nearzero_init_std);
        } else if (t.rank() == 4) {
            const int fan_in = t.shape[1] * t.shape[2] * t.shape[3];
            fill_normal(t, std::sqrt(2.0 / fan_in));  // He, for the relu stack
        } else if (t.rank() == 2) {
            fill_normal(t, cfg.init_std_scale / std::sqrt(double(t.shape[0])));
        } else {
            fill_normal(t, 0.02);
        }
    }
}

// ----------------------------------------------------------------------------
// Encoder: stride-4 residual conv stack, then 2x average pools for the pyramid.
// ----------------------------------------------------------------------------

template <class T>
ag::Var<T> encoder_res_block(ag::Tape<T>& tp, const BoundParams<T>& P, const std::string& pre,
                             ag::Var<T> x) {
    auto y = ag::conv2d(x, P[pre + "_conv1.w"], P[pre + "_conv1.b"], 1, 1);
    y = ag::relu(ag::instance_norm(y, P[pre + "_in1.w"], P[pre + "_in1.b"]));
    y = ag::conv2d(y, P[pre + "_conv2.w"], P[pre + "_conv2.b"], 1, 1);
    y = ag::instance_norm(y, P[pre + "_in2.w"], P[pre + "_in2.b"]);
    return ag::relu(ag::add(x, y));
}

// frames: [F,3,H,W] -> pyramid level vars, level s has stride 2^(s+1).
template <class T>
std::vector<ag::Var<T>> encoder_forward(ag::Tape<T>& tp, const BoundParams<T>& P,
                                        const ModelConfig& cfg, ag::Var<T> frames) {
    auto x = ag::conv2d(frames, P["encoder/stem.w"], P["encoder/stem.b"], 2, 3);
    x = ag::relu(ag::instance_norm(x, P["encoder/stem_in.w"], P["encoder/stem_in.b"]));
    x = encoder_res_block(tp, P, "encoder/res1", x);
    x = ag::conv2d(x, P["encoder/down.w"], P["encoder/down.b"], 2, 1);
    x = ag::relu(ag::instance_norm(x, P["encoder/down_in.w"], P["encoder/down_in.b"]));
    x = encoder_res_block(tp, P, "encoder/res2", x);
    x = ag::conv2d(x, P["encoder/proj.w"], P["encoder/proj.b"], 1, 0);
    std::vector<ag::Var<T>> levels{x};
    for (int s = 1; s < cfg.scales; ++s) levels.push_back(ag::avg_pool2(levels.back()));
    return levels;
}

// Grid placement of pyramid cells: level s (0-based) cell j sits at pixel
// stride_s * j + offset_s along each axis. The conv stack centers output cells
// on even input pixels, and each 2x pool shifts centers by half the previous
// stride, giving offsets 0, 2, 6 for strides 4, 8, 16.
inline int level_stride(int s) { return 4 << s; }
inline int level_offset(int s) { return 2 * ((1 << s) - 1); }

// ----------------------------------------------------------------------------
// Correlation MLP: flattened 49x49 Gram -> hidden -> corr_dim, shared across
// scales, no biases.
// ----------------------------------------------------------------------------
template <class T>
ag::Var<T> corr_mlp_forward(ag::Tape<T>& tp, const BoundParams<T>& P, ag::Var<T> gram_flat) {
    auto h = ag::gelu(ag::matmul(gram_flat, P["corr_mlp/w1"]));
    return ag::matmul(h, P["corr_mlp/w2"]);
}

// ----------------------------------------------------------------------------
// Refiner transformer. Tokens are (frame, point) pairs; temporal self-attention
// blocks carry adaptive RMS-norm modulation from the correlation features, one
// spatial block attends across points per frame. All linear maps bias-free.
// ----------------------------------------------------------------------------

template <class T>
Tensor<T> sinusoidal_encoding(int frames, int dim) {
    Tensor<T> pe({frames, dim});
    for (int t = 0; t < frames; ++t)
        for (int i = 0; i < dim / 2; ++i) {
            const double f = std::pow(10000.0, -2.0 * i / double(dim));
            pe.at(t, 2 * i) = T(std::sin(t * f));
            pe.at(t, 2 * i + 1) = T(std::cos(t * f));
        }
    return pe;
}

template <class T>
ag::Var<T> ada_rms(ag::Tape<T>& tp, ag::Var<T> x, ag::Var<T> cond_flat, ag::Var<T> w_mod) {
    ag::Var<T> none;
    auto normed = ag::rms_norm(x, none);
    auto s = ag::add_scalar(ag::matmul(cond_flat, w_mod), 1.0);
    return ag::mul(normed, s);
}

template <class T>
ag::Var<T> geglu_mlp(ag::Var<T> h, ag::Var<T> w_in, ag::Var<T> w_out, int hidden) {
    auto u = ag::matmul(h, w_in);
    auto a = ag::slice_axis(u, -1, 0, hidden);
    auto b = ag::slice_axis(u, -1, hidden, hidden);
    return ag::matmul(ag::mul(a, ag::gelu(b)), w_out);
}

// input: [T,N,9], cond: [T,N,S*corr_dim] -> deltas [T,N,4].
template <class T>
ag::Var<T> refiner_forward(ag::Tape<T>& tp, const BoundParams<T>& P, const ModelConfig& cfg,
                           ag::Var<T> input, ag::Var<T> cond) {
    const int Tw = input.val().shape[0], N = input.val().shape[1];
    const int w = cfg.width, hid = cfg.mlp_mult * cfg.width;
    auto flat_in = ag::reshape(input, {Tw * N, cfg.input_dim()});
    auto cond_flat = ag::reshape(cond, {Tw * N, cfg.cond_dim()});
    auto x = ag::matmul(flat_in, P["refiner/embed.w"]);

    // temporal positional encoding, identical across points of one frame
    Tensor<T> pe = sinusoidal_encoding<T>(Tw, w);
    Tensor<T> pe_full({Tw * N, w});
    for (int t = 0; t < Tw; ++t)
        for (int n = 0; n < N; ++n)
            std::copy_n(&pe.v[size_t(t) * w], w, &pe_full.v[(size_t(t) * N + n) * w]);
    x = ag::add(x, tp.constant(std::move(pe_full)));

    auto temporal_attend = [&](ag::Var<T> h) {
        // [T*N,w] -> [N,T,w] so the sequence axis is frames
        auto seq = ag::transpose01(ag::reshape(h, {Tw, N, w}));
        return seq;
    };
    auto temporal_restore = [&](ag::Var<T> h) {
        return ag::reshape(ag::transpose01(h), {Tw * N, w});
    };

    auto run_spatial = [&](ag::Var<T> xin) {
        auto h = ag::rms_norm(xin, P["refiner/s_norm1.g"]);
        auto q = ag::reshape(ag::matmul(h, P["refiner/s_wq.w"]), {Tw, N, w});
        auto k = ag::reshape(ag::matmul(h, P["refiner/s_wk.w"]), {Tw, N, w});
        auto v = ag::reshape(ag::matmul(h, P["refiner/s_wv.w"]), {Tw, N, w});
        auto att = ag::reshape(ag::attention(q, k, v, cfg.heads), {Tw * N, w});
        auto x2 = ag::add(xin, ag::matmul(att, P["refiner/s_wo.w"]));
        auto h2 = ag::rms_norm(x2, P["refiner/s_norm2.g"]);
        return ag::add(x2, geglu_mlp(h2, P["refiner/s_mlp_in.w"], P["refiner/s_mlp_out.w"], hid));
    };

    auto check = [&](ag::Var<T> h, int block) {
        if (!h.val().all_finite())
            throw std::runtime_error("refiner_forward: non-finite activations after block " +
                                     std::to_string(block));
        return h;
    };
    for (int b = 0; b < cfg.temporal_blocks; ++b) {
        if (b == cfg.spatial_block_at) x = check(run_spatial(x), b);
        const std::string pre = "refiner/t" + std::to_string(b);
        auto h = ada_rms(tp, x, cond_flat, P[pre + "_ada1.w"]);
        auto q = temporal_attend(ag::matmul(h, P[pre + "_wq.w"]));
        auto k = temporal_attend(ag::matmul(h, P[pre + "_wk.w"]));
        auto v = temporal_attend(ag::matmul(h, P[pre + "_wv.w"]));
        auto att = temporal_restore(ag::attention(q, k, v, cfg.heads));
        x = ag::add(x, ag::matmul(att, P[pre + "_wo.w"]));
        auto h2 = ada_rms(tp, x, cond_flat, P[pre + "_ada2.w"]);
        x = check(ag::add(x, geglu_mlp(h2, P[pre + "_mlp_in.w"], P[pre + "_mlp_out.w"], hid)), b);
    }
    if (cfg.spatial_block_at >= cfg.temporal_blocks)
        x = check(run_spatial(x), cfg.temporal_blocks);

    auto y = ag::rms_norm(x, P["refiner/out_norm.g"]);
    return ag::reshape(ag::matmul(y, P["refiner/head.w"]), {Tw, N, 4});
}

}  // namespace genpt
