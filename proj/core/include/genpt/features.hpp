#pragma once

#include "genpt/model.hpp"
#include "genpt/types.hpp"

namespace genpt {

// Multi-scale feature pyramid over the whole video. Level s (0-based) has
// shape [F, C, H/2^(s+1), W/2^(s+1)].
template <class T>
struct FeaturePyramid {
    std::vector<ag::Var<T>> levels;
    int video_h = 0, video_w = 0;

    int scales() const { return int(levels.size()); }
};

template <class T>
FeaturePyramid<T> encode_features(ag::Tape<T>& tape, const BoundParams<T>& params,
                                  const ModelConfig& cfg, ag::Var<T> frames) {
    const auto& sh = frames.val().shape;
    if (sh.size() != 4 || sh[1] != 3) throw std::invalid_argument("encode_features: [F,3,H,W]");
    const int div = 1 << (cfg.scales + 1);
    if (sh[2] % div || sh[3] % div)
        throw std::invalid_argument("encode_features: H,W must be divisible by " +
                                    std::to_string(div));
    FeaturePyramid<T> pyr;
    pyr.levels = encoder_forward(tape, params, cfg, frames);
    pyr.video_h = sh[2];
    pyr.video_w = sh[3];
    for (auto& lvl : pyr.levels)
        if (!lvl.val().all_finite()) throw std::runtime_error("encode_features: non-finite output");
    return pyr;
}

// Normalized [-1,1] coordinates -> level-s feature grid coordinates.
template <class T>
ag::Var<T> norm_to_grid(ag::Var<T> pts_norm, int video_h, int video_w, int level) {
    const double stride = level_stride(level), off = level_offset(level);
    const double sx = (video_w - 1) * 0.5, sy = (video_h - 1) * 0.5;
    // px = (x+1)*s; grid = (px - off) / stride
    return ag::affine2(pts_norm, sx / stride, (sx - off) / stride, sy / stride,
                       (sy - off) / stride);
}

// Bilinear 7x7 neighbourhood features at every scale for per-window points.
// pts_norm: [T,N,2]; frame_start selects the window's frames inside the
// pyramid. Out-of-bounds taps clamp to the edge.
template <class T>
std::vector<ag::Var<T>> sample_neighborhood(ag::Tape<T>& tape, const FeaturePyramid<T>& pyr,
                                            ag::Var<T> pts_norm, int frame_start,
                                            const ModelConfig& cfg) {
    const int Tw = pts_norm.val().shape[0];
    std::vector<ag::Var<T>> out;
    out.reserve(pyr.levels.size());
    for (int s = 0; s < pyr.scales(); ++s) {
        auto window = ag::slice_axis(pyr.levels[size_t(s)], 0, frame_start, Tw);
        auto grid = norm_to_grid(pts_norm, pyr.video_h, pyr.video_w, s);
        out.push_back(ag::neighborhood_sample(window, grid, cfg.neighborhood_radius));
    }
    return out;
}

// 4D correlation features: per scale the 49x49 Gram between query and track
// neighbourhoods, mapped by the shared two-layer MLP and concatenated over
// scales. [T,N,S*corr_dim].
template <class T>
ag::Var<T> correlation_features(ag::Tape<T>& tape, const BoundParams<T>& params,
                                const std::vector<ag::Var<T>>& f_query,
                                const std::vector<ag::Var<T>>& f_track) {
    if (f_query.size() != f_track.size() || f_query.empty())
        throw std::invalid_argument("correlation_features: scale mismatch");
    std::vector<ag::Var<T>> per_scale;
    for (size_t s = 0; s < f_query.size(); ++s) {
        auto gram = ag::corr_gram(f_query[s], f_track[s]);
        per_scale.push_back(corr_mlp_forward(tape, params, gram));
    }
    return ag::concat(-1, per_scale);
}

}  // namespace genpt
