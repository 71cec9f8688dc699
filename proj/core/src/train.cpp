#include "genpt/train.hpp"

#include <cmath>

namespace genpt {

// explicit instantiations: float for training, double for gradient checks
template ag::Var<float> training_forward<float>(ag::Tape<float>&, const BoundParams<float>&,
                                                const TrainConfig&,
                                                std::span<const TrainBatchItem>, const Rng&,
                                                LossReport&, const StepDebug<float>*);
template ag::Var<double> training_forward<double>(ag::Tape<double>&, const BoundParams<double>&,
                                                  const TrainConfig&,
                                                  std::span<const TrainBatchItem>, const Rng&,
                                                  LossReport&, const StepDebug<double>*);

TrainConfig TrainConfig::from_run(const RunConfig& rc) {
    TrainConfig c;
    c.steps = rc.get_int("train.steps");
    c.batch = rc.get_int("train.batch");
    c.window = rc.get_int("train.window");
    c.video_len = rc.get_int("train.video_len");
    c.points = rc.get_int("train.points");
    c.refine_steps = rc.get_int("train.refine_steps");
    c.path_steps = rc.get_int("train.path_steps");
    c.noise = rc.noise();
    c.peak_lr = rc.get_double("train.peak_lr");
    c.weight_decay = rc.get_double("train.weight_decay");
    c.grad_clip = rc.get_double("train.grad_clip");
    c.warmup_frac = rc.get_double("train.warmup_frac");
    c.initial_div = rc.get_double("train.initial_div");
    c.final_div = rc.get_double("train.final_div");
    c.coord_loss_weight = rc.get_double("train.coord_loss_weight");
    c.conf_clamp_px = rc.get_double("train.conf_clamp_px");
    c.iterative_refinement = rc.get_bool("train.iterative_refinement");
    c.window_dependent_prior = rc.get_bool("train.window_dependent_prior");
    c.noise_in_second_prior_first_half = rc.get_bool("train.noise_in_second_prior_first_half");
    c.discriminative_mode = rc.get_bool("train.discriminative_mode");
    const std::string cl = rc.get("train.conf_loss");
    if (cl == "regression") c.conf_loss = ConfLossKind::Regression;
    else if (cl == "classification") c.conf_loss = ConfLossKind::Classification;
    else throw std::runtime_error("RunConfig: unknown train.conf_loss '" + cl + "'");
    c.class_conf_threshold_px = rc.get_double("train.class_conf_threshold_px");
    c.model.scales = rc.get_int("model.scales");
    c.model.feat_channels = rc.get_int("model.feat_channels");
    c.model.enc_base = rc.get_int("model.enc_base");
    c.model.corr_dim = rc.get_int("model.corr_dim");
    c.model.corr_hidden = rc.get_int("model.corr_hidden");
    c.model.width = rc.get_int("model.width");
    c.model.heads = rc.get_int("model.heads");
    c.model.temporal_blocks = rc.get_int("model.temporal_blocks");
    c.model.spatial_block_at = rc.get_int("model.spatial_block_at");
    c.model.mlp_mult = rc.get_int("model.mlp_mult");
    return c;
}

void TrainConfig::apply_to_run(RunConfig& rc) const {
    auto s = [&](const char* k, auto v) { rc.set(k, std::to_string(v)); };
    s("train.steps", steps);
    s("train.batch", batch);
    s("train.window", window);
    s("train.video_len", video_len);
    s("train.points", points);
    s("train.refine_steps", refine_steps);
    s("train.path_steps", path_steps);
    s("train.peak_lr", peak_lr);
    s("train.weight_decay", weight_decay);
    s("train.grad_clip", grad_clip);
    rc.set("train.iterative_refinement", iterative_refinement ? "true" : "false");
    rc.set("train.window_dependent_prior", window_dependent_prior ? "true" : "false");
    rc.set("train.noise_in_second_prior_first_half",
           noise_in_second_prior_first_half ? "true" : "false");
    rc.set("train.discriminative_mode", discriminative_mode ? "true" : "false");
    rc.set("train.conf_loss",
           conf_loss == ConfLossKind::Regression ? "regression" : "classification");
    s("noise.sigma_coord", noise.sigma_coord);
    s("noise.sigma_vis", noise.sigma_vis);
    s("noise.sigma_conf", noise.sigma_conf);
    rc.set("noise.schedule", noise.schedule == VarianceSchedule::LinearL ? "linear-l"
                             : noise.schedule == VarianceSchedule::Constant ? "constant"
                                                                            : "zero");
    s("model.scales", model.scales);
    s("model.feat_channels", model.feat_channels);
    s("model.enc_base", model.enc_base);
    s("model.corr_dim", model.corr_dim);
    s("model.corr_hidden", model.corr_hidden);
    s("model.width", model.width);
    s("model.heads", model.heads);
    s("model.temporal_blocks", model.temporal_blocks);
    s("model.spatial_block_at", model.spatial_block_at);
    s("model.mlp_mult", model.mlp_mult);
}

WindowLosses compute_losses(const Tensorf& gt_coords_window, const Tensorf& gt_vis_window,
                            const TrackState& track, const TrainConfig& cfg, int num_windows,
                            int height, int width) {
    if (track.steps() < 2)
        throw std::invalid_argument("compute_losses: need refined rows (K >= 2)");
    const int K = track.steps();
    const double inv = 1.0 / (double(num_windows) * double(K));
    const Tensorf gt_px = denormalize_coords(gt_coords_window, height, width);
    WindowLosses out;
    for (int k = 1; k < K; ++k) {
        const Tensorf& pk = track.coords[size_t(k)];
        double l1 = 0;
        for (int64_t i = 0; i < pk.numel(); ++i)
            l1 += std::abs(double(pk.v[size_t(i)]) - double(gt_coords_window.v[size_t(i)]));
        out.coord += cfg.coord_loss_weight * inv * l1 / double(pk.numel());

        const Tensorf& vk = track.vis[size_t(k)];
        double bce = 0;
        for (int64_t i = 0; i < vk.numel(); ++i) {
            const double x = vk.v[size_t(i)], t = gt_vis_window.v[size_t(i)];
            bce += std::max(x, 0.0) - x * t + std::log1p(std::exp(-std::abs(x)));
        }
        out.vis += inv * bce / double(vk.numel());

        const Tensorf px = denormalize_coords(pk, height, width);
        const Tensorf target = confidence_target(px, gt_px, cfg.conf_clamp_px);
        const Tensorf& ck = track.conf[size_t(k)];
        double l1c = 0;
        for (int64_t i = 0; i < ck.numel(); ++i)
            l1c += std::abs(double(ck.v[size_t(i)]) - double(target.v[size_t(i)]));
        out.conf += inv * l1c / double(ck.numel());
    }
    return out;
}

double schedule_lr(int step, int total, double peak, double warmup_frac, double initial_div,
                   double final_div) {
    if (step < 0 || step >= total) throw std::invalid_argument("schedule_lr: step out of range");
    if (total == 1) return peak;
    const int warmup = int(std::lround(warmup_frac * total));
    if (step < warmup) {
        const double lo = peak / initial_div;
        return lo + (peak - lo) * double(step) / double(warmup);
    }
    const double hi = peak, lo = peak / final_div;
    const int span = std::max(1, total - 1 - warmup);
    return hi + (lo - hi) * double(step - warmup) / double(span);
}

double AdamW::clip_grad_norm(std::vector<Tensorf>& grads, double clip) {
    double ss = 0;
    for (const auto& g : grads)
        for (float x : g.v) ss += double(x) * double(x);
    const double norm = std::sqrt(ss);
    if (clip > 0 && norm > clip) {
        const float s = float(clip / norm);
        for (auto& g : grads)
            for (float& x : g.v) x *= s;
    }
    return norm;
}

void AdamW::step(Params<float>& params, const std::vector<Tensorf>& grads, double lr,
                 double weight_decay) {
    if (m_.empty()) {
        for (const auto& name : params.names) {
            m_.emplace_back(params.at(name).shape);
            v_.emplace_back(params.at(name).shape);
        }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, double(t_));
    const double bc2 = 1.0 - std::pow(beta2_, double(t_));
    for (size_t i = 0; i < params.names.size(); ++i) {
        Tensorf& p = params.at(params.names[i]);
        const Tensorf& g = grads[i];
        Tensorf&m = m_[i], &v = v_[i];
        for (int64_t k = 0; k < p.numel(); ++k) {
            const double gk = g.v[size_t(k)];
            m.v[size_t(k)] = float(beta1_ * m.v[size_t(k)] + (1 - beta1_) * gk);
            v.v[size_t(k)] = float(beta2_ * v.v[size_t(k)] + (1 - beta2_) * gk * gk);
            const double mhat = m.v[size_t(k)] / bc1;
            const double vhat = v.v[size_t(k)] / bc2;
            double upd = lr * mhat / (std::sqrt(vhat) + eps_);
            upd += lr * weight_decay * p.v[size_t(k)];  // decoupled decay
            p.v[size_t(k)] -= float(upd);
        }
    }
}

namespace {
std::vector<Tensorf> extract_grads(ag::Tape<float>& tape, const Params<float>& params,
                                   const BoundParams<float>& bound) {
    std::vector<Tensorf> grads;
    grads.reserve(params.names.size());
    for (const auto& name : params.names) {
        ag::Var<float> v = bound[name];
        grads.push_back(tape.grad_buf(v.i));  // zero if untouched
    }
    return grads;
}
}  // namespace

LossReport training_step(Params<float>& params, const TrainConfig& cfg,
                         std::span<const TrainBatchItem> batch, const Rng& rng, AdamW& opt,
                         double lr) {
    ag::Tape<float> tape;
    BoundParams<float> bound = bind_params(tape, params, true);
    LossReport report;
    ag::Var<float> loss = training_forward(tape, bound, cfg, batch, rng, report);
    tape.backward(loss);
    std::vector<Tensorf> grads = extract_grads(tape, params, bound);
    report.grad_norm = AdamW::clip_grad_norm(grads, cfg.grad_clip);
    report.lr = lr;
    opt.step(params, grads, lr, cfg.weight_decay);
    return report;
}

LossReport training_loss(const Params<float>& params, const TrainConfig& cfg,
                         std::span<const TrainBatchItem> batch, const Rng& rng) {
    ag::Tape<float> tape;
    BoundParams<float> bound = bind_params(tape, params, false);
    LossReport report;
    training_forward(tape, bound, cfg, batch, rng, report);
    return report;
}

TrainResult train_loop(Params<float>& params, const TrainConfig& cfg,
                       const std::vector<WorldConfig>& pool_worlds, uint64_t seed,
                       const std::function<void(int, const Params<float>&, const LossReport&)>&
                           checkpoint_cb) {
    if (pool_worlds.empty()) throw std::invalid_argument("train_loop: empty clip pool");
    struct PoolItem {
        VideoClip clip;
        GroundTruth gt;
    };
    std::vector<PoolItem> pool;
    pool.reserve(pool_worlds.size());
    for (const auto& wc : pool_worlds) {
        auto [clip, gt] = make_clip(wc);
        if (clip.num_frames() != cfg.video_len)
            throw std::invalid_argument("train_loop: world frame count != train.video_len");
        pool.push_back({std::move(clip), std::move(gt)});
    }

    Rng master(Rng::mix(seed ^ 0x74726e6cull));
    AdamW opt;
    TrainResult result;
    result.history.reserve(size_t(cfg.steps));

    for (int step = 0; step < cfg.steps; ++step) {
        Rng srng = master.split(uint64_t(step), 0xb);
        // assemble a batch: pick clips, subsample trajectories, first-visible queries
        std::vector<GroundTruth> gts(size_t(cfg.batch));
        std::vector<QuerySet> queries(size_t(cfg.batch));
        std::vector<TrainBatchItem> items(size_t(cfg.batch));
        for (int b = 0; b < cfg.batch; ++b) {
            const PoolItem& it = pool[size_t(srng.uniform_int(0, int64_t(pool.size()) - 1))];
            const int total = it.gt.count();
            if (total < cfg.points)
                throw std::invalid_argument("train_loop: world has fewer points than train.points");
            // trajectory subsample without replacement
            std::vector<int> idx(size_t(total), 0);
            for (int i = 0; i < total; ++i) idx[size_t(i)] = i;
            for (int i = 0; i < cfg.points; ++i) {
                const int j = i + int(srng.uniform_int(0, int64_t(total) - 1 - i));
                std::swap(idx[size_t(i)], idx[size_t(j)]);
            }
            GroundTruth sub;
            sub.coords = Tensorf({it.gt.num_frames(), cfg.points, 2});
            sub.vis = Tensorf({it.gt.num_frames(), cfg.points, 1});
            for (int t = 0; t < it.gt.num_frames(); ++t)
                for (int n = 0; n < cfg.points; ++n) {
                    sub.coords.at(t, n, 0) = it.gt.coords.at(t, idx[size_t(n)], 0);
                    sub.coords.at(t, n, 1) = it.gt.coords.at(t, idx[size_t(n)], 1);
                    sub.vis.at(t, n, 0) = it.gt.vis.at(t, idx[size_t(n)], 0);
                }
            gts[size_t(b)] = std::move(sub);
            queries[size_t(b)] =
                queries_first_visible(gts[size_t(b)], it.clip.height(), it.clip.width());
            items[size_t(b)] = {&it.clip, &gts[size_t(b)], &queries[size_t(b)]};
        }

        const double lr = schedule_lr(step, cfg.steps, cfg.peak_lr, cfg.warmup_frac,
                                      cfg.initial_div, cfg.final_div);
        LossReport rep =
            training_step(params, cfg, items, master.split(uint64_t(step), 0xa), opt, lr);
        rep.step = step;
        result.history.push_back(rep);
        result.last = rep;
        if (checkpoint_cb) checkpoint_cb(step, params, rep);
    }
    return result;
}

}  // namespace genpt
