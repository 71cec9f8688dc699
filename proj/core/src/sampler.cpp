#include "genpt/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace genpt {

namespace {

Tensorf replicate_queries_norm(const QuerySet& queries, int window_len, int height, int width) {
    const int N = queries.count();
    Tensorf rep({window_len, N, 2});
    for (int n = 0; n < N; ++n) {
        const float xn = float(2.0 * queries.points.at(n, 1) / (width - 1) - 1.0);
        const float yn = float(2.0 * queries.points.at(n, 2) / (height - 1) - 1.0);
        for (int t = 0; t < window_len; ++t) {
            rep.at(t, n, 0) = xn;
            rep.at(t, n, 1) = yn;
        }
    }
    return rep;
}

struct WindowOutcome {
    PriorSample prior;
    SampleState final_state;
};

WindowOutcome advance_window(Estimator& est, const SampleConfig& cfg, const Tensorf& q_rep,
                             const SampleState* prev_final, int window_index, int frame_start,
                             Rng rng) {
    NoiseConfig noise = cfg.noise;
    if (cfg.discriminative_mode)
        noise.sigma_coord = noise.sigma_vis = noise.sigma_conf = 0.0;

    WindowOutcome out;
    if (prev_final == nullptr || window_index == 0 || !cfg.window_dependent_prior) {
        out.prior = prior_first_window(q_rep, noise, rng);
    } else {
        out.prior = prior_next_window(prev_final->coords, prev_final->vis, prev_final->conf,
                                      noise, rng, cfg.noise_in_second_prior_first_half);
    }
    out.prior.state.L = std::max(cfg.path_steps, 2);

    if (cfg.discriminative_mode) {
        // regression-tracker recipe: residual updates only, no integration
        TrackState ts = est.estimate(out.prior.state, frame_start, 0.0, out.prior.prior_flag,
                                     cfg.refine_steps);
        out.final_state.coords = ts.final_coords();
        out.final_state.vis = ts.final_vis();
        out.final_state.conf = ts.final_conf();
        out.final_state.l = out.final_state.L = std::max(cfg.path_steps, 2);
        return out;
    }

    const PathSchedule sched(cfg.path_steps);
    SampleState cur = out.prior.state;
    cur.l = 1;
    cur.L = sched.steps;
    for (int l = 1; l < sched.steps; ++l) {
        TrackState ts =
            est.estimate(cur, frame_start, sched.lprime(l), out.prior.prior_flag, cfg.refine_steps);
        cur = euler_step(cur, ts.final_coords(), ts.final_vis(), ts.final_conf(), out.prior.state,
                         sched);
    }
    out.final_state = std::move(cur);
    return out;
}

VideoSample compose(const VideoClip& clip, const WindowPlan& plan,
                    std::vector<PriorSample> priors, std::vector<SampleState> finals) {
    const int F = clip.num_frames();
    const int N = finals.front().coords.shape[1];
    VideoSample out;
    out.coords = Tensorf({F, N, 2});
    out.vis_logits = Tensorf({F, N, 1});
    out.conf_logits = Tensorf({F, N, 1});
    for (int w = 0; w < plan.count(); ++w) {
        const auto [start, end] = plan.ranges[size_t(w)];
        const SampleState& s = finals[size_t(w)];
        for (int t = start; t < end; ++t) {
            const int tw = t - start;
            std::copy_n(&s.coords.v[size_t(tw) * N * 2], size_t(N) * 2,
                        &out.coords.v[size_t(t) * N * 2]);
            std::copy_n(&s.vis.v[size_t(tw) * N], size_t(N), &out.vis_logits.v[size_t(t) * N]);
            std::copy_n(&s.conf.v[size_t(tw) * N], size_t(N), &out.conf_logits.v[size_t(t) * N]);
        }
    }
    out.window_priors = std::move(priors);
    out.window_finals = std::move(finals);
    return out;
}

}  // namespace

Tensorf VideoSample::vis_binary(double threshold) const {
    Tensorf out(vis_logits.shape);
    for (int64_t i = 0; i < out.numel(); ++i) {
        const double s = 1.0 / (1.0 + std::exp(-double(vis_logits.v[size_t(i)])));
        out.v[size_t(i)] = s > threshold ? 1.f : 0.f;
    }
    return out;
}

Tensorf VideoSample::conf_sigmoid() const {
    Tensorf out(conf_logits.shape);
    for (int64_t i = 0; i < out.numel(); ++i)
        out.v[size_t(i)] = float(1.0 / (1.0 + std::exp(-double(conf_logits.v[size_t(i)]))));
    return out;
}

void NetworkEstimator::begin_clip(const VideoClip& clip, const QuerySet& queries,
                                  int window_len) {
    tape_.clear();
    evals_ = 0;
    bound_ = bind_params(tape_, *params_, false);
    auto frames = tape_.constant(clip.frames);
    pyr_ = encode_features(tape_, bound_, cfg_, frames);

    const int N = queries.count();
    const int H = clip.height(), W = clip.width();
    Tensorf q_norm({N, 2});
    std::vector<int> q_frames(size_t(N), 0);
    for (int n = 0; n < N; ++n) {
        q_frames[size_t(n)] = int(queries.points.at(n, 0));
        q_norm.at(n, 0) = float(2.0 * queries.points.at(n, 1) / (W - 1) - 1.0);
        q_norm.at(n, 1) = float(2.0 * queries.points.at(n, 2) / (H - 1) - 1.0);
    }
    auto q_var = tape_.constant(std::move(q_norm));
    query_feats_.clear();
    for (int s = 0; s < cfg_.scales; ++s) {
        auto grid = norm_to_grid(q_var, H, W, s);
        auto qf = ag::neighborhood_sample_frames(pyr_.levels[size_t(s)], grid, q_frames,
                                                 cfg_.neighborhood_radius);
        query_feats_.push_back(ag::broadcast0(qf, window_len));
    }
    base_mark_ = tape_.mark();
}

TrackState NetworkEstimator::estimate(const SampleState& init, int frame_start, double lprime,
                                      double prior_flag, int refine_steps) {
    if (base_mark_ == 0) throw std::logic_error("NetworkEstimator: begin_clip not called");
    const size_t m = tape_.mark();
    auto c0 = tape_.constant(init.coords);
    auto v0 = tape_.constant(init.vis);
    auto f0 = tape_.constant(init.conf);
    RefineContext<float> ctx;
    ctx.params = &bound_;
    ctx.cfg = &cfg_;
    ctx.pyramid = &pyr_;
    ctx.query_feats = &query_feats_;
    ctx.frame_start = frame_start;
    ctx.lprime = lprime;
    ctx.prior_flag = prior_flag;
    ctx.divergence_guard = guard_;
    TrackVars<float> tv = run_refinement(tape_, ctx, c0, v0, f0, refine_steps);
    TrackState ts = to_track_state(tv);
    evals_ += std::max(0, refine_steps - 1);
    tape_.truncate(m);
    return ts;
}

TrackState OracleEstimator::estimate(const SampleState& init, int frame_start, double,
                                     double, int refine_steps) {
    const int Tw = init.coords.shape[0], N = init.coords.shape[1];
    if (frame_start + Tw > gt_->num_frames() || N != gt_->count())
        throw std::invalid_argument("OracleEstimator: window outside ground truth");
    Tensorf gc({Tw, N, 2}), gv({Tw, N, 1}), gf({Tw, N, 1});
    for (int t = 0; t < Tw; ++t)
        for (int n = 0; n < N; ++n) {
            gc.at(t, n, 0) = gt_->coords.at(frame_start + t, n, 0);
            gc.at(t, n, 1) = gt_->coords.at(frame_start + t, n, 1);
            gv.at(t, n, 0) = float(scale_ * (2.0 * gt_->vis.at(frame_start + t, n, 0) - 1.0));
            gf.at(t, n, 0) = float(scale_);  // perfect estimate: confidence target 1
        }
    TrackState ts;
    ts.coords.push_back(init.coords);
    ts.vis.push_back(init.vis);
    ts.conf.push_back(init.conf);
    auto delta = [](const Tensorf& to, const Tensorf& from) {
        Tensorf d(to.shape);
        for (int64_t i = 0; i < d.numel(); ++i) d.v[size_t(i)] = to.v[size_t(i)] - from.v[size_t(i)];
        return d;
    };
    for (int k = 1; k < refine_steps; ++k) {
        ts.coord_deltas.push_back(delta(gc, ts.coords.back()));
        ts.vis_deltas.push_back(delta(gv, ts.vis.back()));
        ts.conf_deltas.push_back(delta(gf, ts.conf.back()));
        ts.coords.push_back(gc);
        ts.vis.push_back(gv);
        ts.conf.push_back(gf);
    }
    return ts;
}

VideoSample sample_video(Estimator& est, const VideoClip& clip, const QuerySet& queries,
                         const SampleConfig& cfg, uint64_t seed, int candidate_index) {
    clip.validate();
    queries.validate(clip.num_frames(), clip.height(), clip.width());
    const WindowPlan plan = plan_windows(clip.num_frames(), cfg.window);
    const Tensorf q_rep = replicate_queries_norm(queries, cfg.window, clip.height(), clip.width());
    est.begin_clip(clip, queries, cfg.window);

    Rng base(Rng::mix(seed ^ 0x5a6d706cull));
    std::vector<PriorSample> priors;
    std::vector<SampleState> finals;
    const SampleState* prev = nullptr;
    for (int w = 0; w < plan.count(); ++w) {
        WindowOutcome o = advance_window(est, cfg, q_rep, prev, w, plan.ranges[size_t(w)].first,
                                         base.split(uint64_t(w), uint64_t(candidate_index)));
        priors.push_back(std::move(o.prior));
        finals.push_back(std::move(o.final_state));
        prev = &finals.back();
    }
    return compose(clip, plan, std::move(priors), std::move(finals));
}

std::string SelectionLog::to_text() const {
    std::ostringstream os;
    for (size_t w = 0; w < scores.size(); ++w) {
        os << "window " << w << " scores";
        for (double s : scores[w]) os << ' ' << s;
        os << " | survivors";
        for (int s : survivors[w]) os << ' ' << s;
        if (w < cumulative.size()) os << " | selected_cumulative " << cumulative[w];
        os << '\n';
    }
    return os.str();
}

BestOfNResult best_of_n(Estimator& est, const VideoClip& clip, const QuerySet& queries, int n,
                        Guide guide, int beam_width, const SampleConfig& cfg, uint64_t seed,
                        const GroundTruth* gt) {
    if (n < 1) throw std::invalid_argument("best_of_n: N must be >= 1");
    const int width = guide == Guide::Beam ? beam_width : 1;
    if (width < 1 || width > n)
        throw std::invalid_argument("best_of_n: beam width must be in [1, N]");
    if (guide == Guide::Oracle && gt == nullptr)
        throw std::invalid_argument("best_of_n: oracle guide requires ground truth");

    clip.validate();
    queries.validate(clip.num_frames(), clip.height(), clip.width());
    const int H = clip.height(), W = clip.width();
    const WindowPlan plan = plan_windows(clip.num_frames(), cfg.window);
    const Tensorf q_rep = replicate_queries_norm(queries, cfg.window, H, W);
    est.begin_clip(clip, queries, cfg.window);
    Rng base(Rng::mix(seed ^ 0x5a6d706cull));

    struct Chain {
        std::vector<PriorSample> priors;
        std::vector<SampleState> finals;
        double cum = 0.0;
    };
    std::vector<Chain> chains(1);

    // ground-truth query columns for the oracle score
    std::vector<int> gt_cols;
    if (gt) {
        // queries come from sample_queries over the same ground truth; match by position
        for (int qn = 0; qn < queries.count(); ++qn) {
            const int qf = int(queries.points.at(qn, 0));
            const double qx = 2.0 * queries.points.at(qn, 1) / (W - 1) - 1.0;
            const double qy = 2.0 * queries.points.at(qn, 2) / (H - 1) - 1.0;
            int best = -1;
            double bd = 1e30;
            for (int c = 0; c < gt->count(); ++c) {
                const double dx = gt->coords.at(qf, c, 0) - qx;
                const double dy = gt->coords.at(qf, c, 1) - qy;
                const double d = dx * dx + dy * dy;
                if (d < bd) {
                    bd = d;
                    best = c;
                }
            }
            gt_cols.push_back(best);
        }
    }

    auto window_score = [&](const SampleState& fin, int start) {
        if (guide == Guide::Oracle) {
            // mean pixel distance to the ground truth over the window
            double acc = 0;
            const int Tw = fin.coords.shape[0], N = fin.coords.shape[1];
            for (int t = 0; t < Tw; ++t)
                for (int nq = 0; nq < N; ++nq) {
                    const int c = gt_cols[size_t(nq)];
                    const double dx = (fin.coords.at(t, nq, 0) - gt->coords.at(start + t, c, 0)) *
                                      (W - 1) / 2.0;
                    const double dy = (fin.coords.at(t, nq, 1) - gt->coords.at(start + t, c, 1)) *
                                      (H - 1) / 2.0;
                    acc += std::sqrt(dx * dx + dy * dy);
                }
            return acc / double(Tw * N);
        }
        double acc = 0;
        for (float x : fin.conf.v) acc += 1.0 / (1.0 + std::exp(-double(x)));
        return acc / double(fin.conf.numel());
    };

    SelectionLog log;
    for (int w = 0; w < plan.count(); ++w) {
        const int start = plan.ranges[size_t(w)].first;
        struct Cand {
            int index;
            size_t parent;
            WindowOutcome outcome;
            double score, cum;
        };
        std::vector<Cand> cands;
        cands.reserve(size_t(n));
        for (int j = 0; j < n; ++j) {
            const size_t parent = size_t(int64_t(j) * int64_t(chains.size()) / n);
            const Chain& pc = chains[parent];
            const SampleState* prev = pc.finals.empty() ? nullptr : &pc.finals.back();
            WindowOutcome o = advance_window(est, cfg, q_rep, prev, w, start,
                                             base.split(uint64_t(w), uint64_t(j)));
            const double s = window_score(o.final_state, start);
            const double cum =
                pc.cum + (guide == Guide::Oracle ? -s : s);  // cumulative: higher is better
            cands.push_back({j, parent, std::move(o), s, cum});
        }

        log.scores.emplace_back();
        for (const Cand& c : cands) log.scores.back().push_back(c.score);

        std::vector<size_t> order(cands.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
            if (guide == Guide::Oracle) {
                if (cands[a].score != cands[b].score) return cands[a].score < cands[b].score;
            } else if (guide == Guide::Greedy) {
                if (cands[a].score != cands[b].score) return cands[a].score > cands[b].score;
            } else {
                if (cands[a].cum != cands[b].cum) return cands[a].cum > cands[b].cum;
            }
            return cands[a].index < cands[b].index;  // deterministic tie break
        });

        std::vector<Chain> next;
        log.survivors.emplace_back();
        for (int k = 0; k < width && k < int(order.size()); ++k) {
            const Cand& c = cands[order[size_t(k)]];
            Chain nc = chains[c.parent];
            nc.priors.push_back(c.outcome.prior);
            nc.finals.push_back(c.outcome.final_state);
            nc.cum = c.cum;
            next.push_back(std::move(nc));
            log.survivors.back().push_back(c.index);
        }
        chains = std::move(next);
        log.cumulative.push_back(chains.front().cum);
    }

    // beam: the chain with the highest cumulative score (front after sort)
    const Chain& sel = chains.front();
    BestOfNResult out;
    out.selected = compose(clip, plan, sel.priors, sel.finals);
    out.log = std::move(log);
    return out;
}

}  // namespace genpt
