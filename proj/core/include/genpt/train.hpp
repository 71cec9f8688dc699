#pragma once

#include <functional>
#include <optional>
#include <span>

#include "genpt/flowmatch.hpp"
#include "genpt/refiner.hpp"
#include "genpt/runconfig.hpp"

namespace genpt {

enum class ConfLossKind { Regression, Classification };

struct TrainConfig {
    int steps = 2000;
    int batch = 2;
    int window = 16;      // T
    int video_len = 24;   // T'
    int points = 16;      // queries per clip
    int refine_steps = 4;    // K: ground-truth estimates per path step (K-1 updates)
    int path_steps = 1000;   // L: training path grid
    NoiseConfig noise;
    double peak_lr = 5e-4;
    double weight_decay = 1e-3;
    double grad_clip = 1.0;
    double warmup_frac = 0.3;
    double initial_div = 25.0;
    double final_div = 1e4;
    double coord_loss_weight = 0.05;
    double conf_clamp_px = 16.0;
    // ablation toggles
    bool iterative_refinement = true;
    bool window_dependent_prior = true;
    bool noise_in_second_prior_first_half = false;
    bool discriminative_mode = false;
    ConfLossKind conf_loss = ConfLossKind::Regression;
    double class_conf_threshold_px = 16.0;

    ModelConfig model;

    // Discriminative mode follows the regression-tracker recipe: six residual
    // updates straight from a deterministic prior. With iterative refinement
    // off, a single update replaces the K-1 loop.
    int effective_refine_steps() const {
        if (discriminative_mode) return 7;
        return iterative_refinement ? refine_steps : 2;
    }

    static TrainConfig from_run(const RunConfig& rc);
    void apply_to_run(RunConfig& rc) const;
};

struct LossReport {
    double total = 0, coord = 0, vis = 0, conf = 0;
    double grad_norm = 0, lr = 0;
    int step = -1;
};

struct TrainBatchItem {
    const VideoClip* clip = nullptr;
    const GroundTruth* gt = nullptr;
    const QuerySet* queries = nullptr;
};

// Test/verification hooks. conf_targets_override freezes the confidence
// regression targets (which carry a stop-gradient in the live path) so a
// finite-difference sweep differentiates the same function the tape does.
template <class T>
struct StepDebug {
    std::optional<int> force_l;
    const std::vector<Tensor<T>>* conf_targets_override = nullptr;
    mutable size_t override_cursor = 0;
    std::vector<Tensor<T>>* conf_targets_out = nullptr;
};

// One training-step forward pass (all windows, all batch items); returns the
// scalar loss Var plus the component report. Callers own backward/update.
template <class T>
ag::Var<T> training_forward(ag::Tape<T>& tape, const BoundParams<T>& params,
                            const TrainConfig& cfg, std::span<const TrainBatchItem> batch,
                            const Rng& rng, LossReport& report,
                            const StepDebug<T>* debug = nullptr);

// Spec-facing loss computation on a finished refinement history (one window).
// Returns the (coord, vis, conf) contributions with the 1/(N_T*K) scaling.
struct WindowLosses {
    double coord = 0, vis = 0, conf = 0;
};
WindowLosses compute_losses(const Tensorf& gt_coords_window, const Tensorf& gt_vis_window,
                            const TrackState& track, const TrainConfig& cfg, int num_windows,
                            int height, int width);

// 1cycle with linear warmup and linear anneal; lr(0) = peak/initial_div,
// lr at warmup end = peak, lr(total-1) = peak/final_div.
double schedule_lr(int step, int total, double peak, double warmup_frac = 0.3,
                   double initial_div = 25.0, double final_div = 1e4);

class AdamW {
public:
    AdamW(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : beta1_(beta1), beta2_(beta2), eps_(eps) {}

    // Clips the global grad norm to `clip` in place; returns the pre-clip norm.
    static double clip_grad_norm(std::vector<Tensorf>& grads, double clip);

    void step(Params<float>& params, const std::vector<Tensorf>& grads, double lr,
              double weight_decay);

private:
    double beta1_, beta2_, eps_;
    int64_t t_ = 0;
    std::vector<Tensorf> m_, v_;
};

// Full float training step: forward, backward, clip, AdamW update.
LossReport training_step(Params<float>& params, const TrainConfig& cfg,
                         std::span<const TrainBatchItem> batch, const Rng& rng, AdamW& opt,
                         double lr);

// Forward-only loss evaluation (no update), used by tests.
LossReport training_loss(const Params<float>& params, const TrainConfig& cfg,
                         std::span<const TrainBatchItem> batch, const Rng& rng);

struct TrainResult {
    LossReport last;
    std::vector<LossReport> history;
};

// Training driver over a pool of synthetic clips. Checkpoints are written by
// the caller via the callback (step, params) -> void; pass {} for none.
TrainResult train_loop(Params<float>& params, const TrainConfig& cfg,
                       const std::vector<WorldConfig>& pool_worlds, uint64_t seed,
                       const std::function<void(int, const Params<float>&, const LossReport&)>&
                           checkpoint_cb = {});

// ----------------------------------------------------------------------------
// Template implementation
// ----------------------------------------------------------------------------

namespace detail_train {

template <class T>
Tensor<T> noise_const(std::vector<int> shape, double sigma, Rng& rng) {
    Tensor<T> t(std::move(shape));
    if (sigma != 0.0)
        for (auto& x : t.v) x = T(rng.gaussian() * sigma);
    return t;
}

// pixels from normalized coords, both as plain tensors
template <class T>
Tensor<T> denorm_px(const Tensor<T>& norm, int H, int W) {
    Tensor<T> out(norm.shape);
    const T sx = T((W - 1) * 0.5), sy = T((H - 1) * 0.5);
    for (int64_t i = 0; i < norm.numel(); i += 2) {
        out.v[size_t(i)] = (norm.v[size_t(i)] + T(1)) * sx;
        out.v[size_t(i) + 1] = (norm.v[size_t(i) + 1] + T(1)) * sy;
    }
    return out;
}

template <class T>
Tensor<T> conf_target_tensor(const Tensor<T>& coords_norm, const Tensor<T>& gt_px, int H, int W,
                             double clamp_px) {
    const Tensor<T> px = denorm_px(coords_norm, H, W);
    const int64_t rows = px.numel() / 2;
    std::vector<int> oshape = px.shape;
    oshape.back() = 1;
    Tensor<T> out(oshape);
    const T c2 = T(clamp_px * clamp_px);
    for (int64_t r = 0; r < rows; ++r) {
        T acc = T(0);
        for (int k = 0; k < 2; ++k) {
            const T d = px.v[size_t(2 * r + k)] - gt_px.v[size_t(2 * r + k)];
            acc += T(1) - std::min(d * d, c2) / c2;
        }
        out.v[size_t(r)] = acc * T(0.5);
    }
    return out;
}

// window slice of a [F,N,C] tensor, cast to T
template <class S, class T>
Tensor<T> window_slice(const Tensor<S>& full, int start, int len) {
    const int N = full.shape[1], C = full.shape[2];
    Tensor<T> out({len, N, C});
    for (int t = 0; t < len; ++t)
        for (int64_t i = 0; i < int64_t(N) * C; ++i)
            out.v[size_t(t) * N * C + size_t(i)] = T(full.v[(size_t(start) + t) * N * C + size_t(i)]);
    return out;
}

}  // namespace detail_train

template <class T>
ag::Var<T> training_forward(ag::Tape<T>& tape, const BoundParams<T>& params,
                            const TrainConfig& cfg, std::span<const TrainBatchItem> batch,
                            const Rng& rng, LossReport& report, const StepDebug<T>* debug) {
    using ag::Var;
    if (batch.empty()) throw std::invalid_argument("training_forward: empty batch");
    const int K = cfg.effective_refine_steps();
    const int L = cfg.path_steps;
    const bool disc = cfg.discriminative_mode;
    const PathSchedule sched(L);
    cfg.noise.validate();

    Var<T> coord_loss, vis_loss, conf_loss;
    auto acc = [&](Var<T>& dst, Var<T> v) { dst = dst.valid() ? ag::add(dst, v) : v; };

    auto conf_target = [&](Var<T> coords_var, const Tensor<T>& gt_px, int H, int W) -> Var<T> {
        if (debug && debug->conf_targets_override) {
            const auto& list = *debug->conf_targets_override;
            if (debug->override_cursor >= list.size())
                throw std::logic_error("StepDebug: conf target override exhausted");
            return tape.constant(list[debug->override_cursor++]);
        }
        Tensor<T> tgt = detail_train::conf_target_tensor(coords_var.val(), gt_px, H, W,
                                                         cfg.conf_clamp_px);
        if (debug && debug->conf_targets_out) debug->conf_targets_out->push_back(tgt);
        return tape.constant(std::move(tgt));
    };

    for (size_t b = 0; b < batch.size(); ++b) {
        const VideoClip& clip = *batch[b].clip;
        const GroundTruth& gt = *batch[b].gt;
        const QuerySet& queries = *batch[b].queries;
        const int H = clip.height(), W = clip.width();
        const int Tw = cfg.window;
        const int N = queries.count();
        queries.validate(clip.num_frames(), H, W);

        auto frames = tape.constant(clip.frames.cast<T>());
        FeaturePyramid<T> pyr = encode_features(tape, params, cfg.model, frames);

        // query tokens: normalized positions + their source frames
        Tensor<T> q_norm({N, 2});
        std::vector<int> q_frames(size_t(N), 0);
        for (int n = 0; n < N; ++n) {
            q_frames[size_t(n)] = int(queries.points.at(n, 0));
            q_norm.at(n, 0) = T(2.0 * queries.points.at(n, 1) / (W - 1) - 1.0);
            q_norm.at(n, 1) = T(2.0 * queries.points.at(n, 2) / (H - 1) - 1.0);
        }
        auto q_norm_var = tape.constant(q_norm);
        std::vector<Var<T>> query_feats;
        for (int s = 0; s < cfg.model.scales; ++s) {
            auto grid = norm_to_grid(q_norm_var, H, W, s);
            auto qf = ag::neighborhood_sample_frames(pyr.levels[size_t(s)], grid, q_frames,
                                                     cfg.model.neighborhood_radius);
            query_feats.push_back(ag::broadcast0(qf, Tw));
        }

        // queries replicated across the window for the first prior
        Tensor<T> q_rep({Tw, N, 2});
        for (int t = 0; t < Tw; ++t)
            std::copy_n(q_norm.data(), size_t(N) * 2, &q_rep.v[size_t(t) * N * 2]);

        const WindowPlan plan = plan_windows(clip.num_frames(), Tw);
        const int NT = plan.count();
        const int half = Tw / 2;

        Var<T> prevC, prevV, prevConf;  // previous window's final estimates
        for (int nt = 0; nt < NT; ++nt) {
            const int start = plan.ranges[size_t(nt)].first;
            Tensor<T> gtP = detail_train::window_slice<float, T>(gt.coords, start, Tw);
            Tensor<T> gtV = detail_train::window_slice<float, T>(gt.vis, start, Tw);
            const Tensor<T> gt_px = detail_train::denorm_px(gtP, H, W);

            // ---- prior ----
            Rng prng = rng.split(uint64_t(b), uint64_t(nt), 0);
            const double sc = disc ? 0.0 : cfg.noise.sigma_coord;
            const double sv = disc ? 0.0 : cfg.noise.sigma_vis;
            const double sf = disc ? 0.0 : cfg.noise.sigma_conf;
            Var<T> coords1, vis1, conf1;
            double prior_flag = 1.0;
            if (nt == 0 || !cfg.window_dependent_prior || !prevC.valid()) {
                Tensor<T> pc = q_rep;
                Tensor<T> eps = detail_train::noise_const<T>({Tw, N, 2}, sc, prng);
                for (int64_t i = 0; i < pc.numel(); ++i) pc.v[size_t(i)] += eps.v[size_t(i)];
                coords1 = tape.constant(std::move(pc));
                vis1 = tape.constant(detail_train::noise_const<T>({Tw, N, 1}, sv, prng));
                conf1 = tape.constant(detail_train::noise_const<T>({Tw, N, 1}, sf, prng));
                prior_flag = 1.0;
            } else {
                auto carry = [&](Var<T> prev, int ch, double sigma) {
                    Tensor<T> eps = detail_train::noise_const<T>({Tw, N, ch}, sigma, prng);
                    auto first = ag::slice_axis(prev, 0, half, half);
                    if (cfg.noise_in_second_prior_first_half) {
                        Tensor<T> eps_a(std::vector<int>{half, N, ch});
                        std::copy_n(eps.data(), eps_a.numel(), eps_a.data());
                        first = ag::add(first, tape.constant(std::move(eps_a)));
                    }
                    auto last = ag::repeat_axis0(ag::slice_axis(prev, 0, Tw - 1, 1), half);
                    Tensor<T> eps_b(std::vector<int>{half, N, ch});
                    std::copy_n(eps.data() + int64_t(half) * N * ch, eps_b.numel(), eps_b.data());
                    auto second = ag::add(last, tape.constant(std::move(eps_b)));
                    return ag::concat(0, first, second);
                };
                coords1 = carry(prevC, 2, sc);
                vis1 = carry(prevV, 1, sv);
                conf1 = carry(prevConf, 1, sf);
                prior_flag = 0.0;
            }

            // ---- conditional sample at a random path step ----
            int l = 1;
            double lp = 0.0;
            Var<T> coords_l = coords1, vis_l = vis1, conf_l = conf1;
            if (!disc) {
                Rng lrng = rng.split(uint64_t(b), uint64_t(nt), 1);
                l = debug && debug->force_l ? *debug->force_l : int(lrng.uniform_int(1, L));
                lp = sched.lprime(l);
                Rng crng = rng.split(uint64_t(b), uint64_t(nt), 2);
                const double ec = path_sigma(cfg.noise.sigma_coord, lp, cfg.noise.schedule);
                const double ev = path_sigma(cfg.noise.sigma_vis, lp, cfg.noise.schedule);
                const double ef = path_sigma(cfg.noise.sigma_conf, lp, cfg.noise.schedule);

                auto interp = [&](Var<T> prior, const Tensor<T>& data) {
                    if (lp == 0.0) return prior;
                    if (lp == 1.0) return tape.constant(data);
                    Tensor<T> scaled(data.shape);
                    for (int64_t i = 0; i < data.numel(); ++i)
                        scaled.v[size_t(i)] = T(lp) * data.v[size_t(i)];
                    return ag::add(ag::scale(prior, 1.0 - lp), tape.constant(std::move(scaled)));
                };
                coords_l = interp(coords1, gtP);
                if (ec > 0)
                    coords_l = ag::add(coords_l, tape.constant(detail_train::noise_const<T>(
                                                     {Tw, N, 2}, ec, crng)));
                vis_l = interp(vis1, gtV);
                if (ev > 0)
                    vis_l = ag::add(
                        vis_l, tape.constant(detail_train::noise_const<T>({Tw, N, 1}, ev, crng)));
                // confidence data is itself a function of the coordinate sample
                Var<T> c1 = conf_target(coords_l, gt_px, H, W);
                if (lp == 0.0) {
                    conf_l = conf1;
                } else if (lp == 1.0) {
                    conf_l = c1;
                } else {
                    conf_l = ag::add(ag::scale(conf1, 1.0 - lp), ag::scale(c1, lp));
                }
                if (ef > 0)
                    conf_l = ag::add(
                        conf_l, tape.constant(detail_train::noise_const<T>({Tw, N, 1}, ef, crng)));
            }

            // ---- K-1 refinements ----
            RefineContext<T> ctx;
            ctx.params = &params;
            ctx.cfg = &cfg.model;
            ctx.pyramid = &pyr;
            ctx.query_feats = &query_feats;
            ctx.frame_start = start;
            ctx.lprime = disc ? 0.0 : lp;  // discriminative mode drops the step input
            ctx.prior_flag = prior_flag;
            TrackVars<T> tv = run_refinement(tape, ctx, coords_l, vis_l, conf_l, K);

            // ---- losses on refined rows ----
            const double inv = 1.0 / (double(NT) * double(K));
            for (int k = 1; k < K; ++k) {
                acc(coord_loss,
                    ag::scale(ag::mean_all(ag::abs_val(ag::sub(tv.coords[size_t(k)],
                                                               tape.constant(gtP)))),
                              cfg.coord_loss_weight * inv));
                acc(vis_loss,
                    ag::scale(ag::bce_with_logits_mean(tv.vis[size_t(k)], gtV), inv));
                if (cfg.conf_loss == ConfLossKind::Regression) {
                    Var<T> ck = conf_target(tv.coords[size_t(k)], gt_px, H, W);
                    acc(conf_loss,
                        ag::scale(ag::mean_all(ag::abs_val(ag::sub(tv.conf[size_t(k)], ck))), inv));
                } else {
                    // correctness classification: within-distance indicator
                    const Tensor<T> px =
                        detail_train::denorm_px(tv.coords[size_t(k)].val(), H, W);
                    Tensor<T> target({Tw, N, 1});
                    const double thr2 =
                        cfg.class_conf_threshold_px * cfg.class_conf_threshold_px;
                    for (int64_t r = 0; r < target.numel(); ++r) {
                        const T dx = px.v[size_t(2 * r)] - gt_px.v[size_t(2 * r)];
                        const T dy = px.v[size_t(2 * r + 1)] - gt_px.v[size_t(2 * r + 1)];
                        target.v[size_t(r)] = double(dx * dx + dy * dy) <= thr2 ? T(1) : T(0);
                    }
                    acc(conf_loss,
                        ag::scale(ag::bce_with_logits_mean(tv.conf[size_t(k)], target), inv));
                }
            }

            prevC = tv.coords.back();
            prevV = tv.vis.back();
            prevConf = tv.conf.back();
        }
    }

    const double inv_batch = 1.0 / double(batch.size());
    auto finish = [&](Var<T>& v) {
        if (!v.valid()) {
            v = tape.constant(Tensor<T>({1}));
        } else {
            v = ag::scale(v, inv_batch);
        }
        return v;
    };
    Var<T> lc = finish(coord_loss), lv = finish(vis_loss), lf = finish(conf_loss);
    Var<T> total = ag::add(ag::add(lc, lv), lf);
    report.coord = double(lc.val().v[0]);
    report.vis = double(lv.val().v[0]);
    report.conf = double(lf.val().v[0]);
    report.total = double(total.val().v[0]);
    if (!std::isfinite(report.total))
        throw std::runtime_error("training_forward: non-finite loss");
    return total;
}

}  // namespace genpt
