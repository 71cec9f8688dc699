#pragma once

#include "genpt/features.hpp"

namespace genpt {

// Per-token refiner input, width 9: forward displacement (2), backward
// displacement (2), sigmoid(vis) (1), sigmoid(conf) (1), l' (1), prior flag
// (1), frame index (1). Displacement rows at the sequence ends are zero.
template <class T>
ag::Var<T> assemble_input(ag::Tape<T>& tape, ag::Var<T> coords, ag::Var<T> vis, ag::Var<T> conf,
                          double lprime, double prior_flag) {
    const int Tw = coords.val().shape[0], N = coords.val().shape[1];
    if (coords.val().shape[2] != 2) throw std::invalid_argument("assemble_input: coords [T,N,2]");

    auto zeros_row = tape.constant(Tensor<T>({1, N, 2}));
    auto head = ag::slice_axis(coords, 0, 0, Tw - 1);
    auto tail = ag::slice_axis(coords, 0, 1, Tw - 1);
    auto fwd = ag::concat(0, zeros_row, ag::sub(tail, head));
    auto bwd = ag::concat(0, ag::sub(head, tail), zeros_row);

    Tensor<T> consts({Tw, N, 3});
    for (int t = 0; t < Tw; ++t)
        for (int n = 0; n < N; ++n) {
            consts.at(t, n, 0) = T(lprime);
            consts.at(t, n, 1) = T(prior_flag);
            consts.at(t, n, 2) = T(t);
        }
    return ag::concat(-1, fwd, bwd, ag::sigmoid(vis), ag::sigmoid(conf),
                      tape.constant(std::move(consts)));
}

template <class T>
struct RefineDelta {
    ag::Var<T> coords, vis, conf;
};

// One residual update from the transformer: input tokens plus correlation
// conditioning -> (dP, dV, dC).
template <class T>
RefineDelta<T> refine_step(ag::Tape<T>& tape, const BoundParams<T>& params, const ModelConfig& cfg,
                           ag::Var<T> input, ag::Var<T> conditioning) {
    auto out = refiner_forward(tape, params, cfg, input, conditioning);
    RefineDelta<T> d;
    d.coords = ag::slice_axis(out, -1, 0, 2);
    d.vis = ag::slice_axis(out, -1, 2, 1);
    d.conf = ag::slice_axis(out, -1, 3, 1);
    return d;
}

template <class T>
struct TrackVars {
    std::vector<ag::Var<T>> coords, vis, conf;                    // K rows
    std::vector<ag::Var<T>> coord_deltas, vis_deltas, conf_deltas;  // K-1 each
};

template <class T>
struct RefineContext {
    const BoundParams<T>* params = nullptr;
    const ModelConfig* cfg = nullptr;
    const FeaturePyramid<T>* pyramid = nullptr;
    const std::vector<ag::Var<T>>* query_feats = nullptr;  // per-scale [T,N,C,taps]
    int frame_start = 0;
    double lprime = 0.0;
    double prior_flag = 1.0;
    double divergence_guard = 10.0;  // normalized units
};

// Row 1 is the initial estimate (the sample at step l); rows 2..K come from
// K-1 residual updates, with correlation features recomputed at the current
// coordinate estimate each time. K=1 runs no updates at all.
template <class T>
TrackVars<T> run_refinement(ag::Tape<T>& tape, const RefineContext<T>& ctx, ag::Var<T> coords0,
                            ag::Var<T> vis0, ag::Var<T> conf0, int refine_steps) {
    if (refine_steps < 1) throw std::invalid_argument("run_refinement: K must be >= 1");
    TrackVars<T> tv;
    tv.coords.push_back(coords0);
    tv.vis.push_back(vis0);
    tv.conf.push_back(conf0);
    for (int k = 0; k + 1 < refine_steps; ++k) {
        const Tensor<T>& cur = tv.coords.back().val();
        for (const T& x : cur.v)
            if (!(std::abs(double(x)) <= ctx.divergence_guard))
                throw std::runtime_error(
                    "run_refinement: coordinate estimate diverged beyond |x| = " +
                    std::to_string(ctx.divergence_guard) + " at update " + std::to_string(k + 1));
        auto f_track = sample_neighborhood(tape, *ctx.pyramid, tv.coords.back(), ctx.frame_start,
                                           *ctx.cfg);
        auto cond = correlation_features(tape, *ctx.params, *ctx.query_feats, f_track);
        auto input = assemble_input(tape, tv.coords.back(), tv.vis.back(), tv.conf.back(),
                                    ctx.lprime, ctx.prior_flag);
        RefineDelta<T> d = refine_step(tape, *ctx.params, *ctx.cfg, input, cond);
        tv.coord_deltas.push_back(d.coords);
        tv.vis_deltas.push_back(d.vis);
        tv.conf_deltas.push_back(d.conf);
        tv.coords.push_back(ag::add(tv.coords.back(), d.coords));
        tv.vis.push_back(ag::add(tv.vis.back(), d.vis));
        tv.conf.push_back(ag::add(tv.conf.back(), d.conf));
    }
    return tv;
}

// Copy a Var-level refinement history into the plain value type.
template <class T>
TrackState to_track_state(const TrackVars<T>& tv) {
    TrackState ts;
    auto cp = [](const ag::Var<T>& v) { return v.val().template cast<float>(); };
    for (const auto& r : tv.coords) ts.coords.push_back(cp(r));
    for (const auto& r : tv.vis) ts.vis.push_back(cp(r));
    for (const auto& r : tv.conf) ts.conf.push_back(cp(r));
    for (const auto& r : tv.coord_deltas) ts.coord_deltas.push_back(cp(r));
    for (const auto& r : tv.vis_deltas) ts.vis_deltas.push_back(cp(r));
    for (const auto& r : tv.conf_deltas) ts.conf_deltas.push_back(cp(r));
    return ts;
}

}  // namespace genpt
