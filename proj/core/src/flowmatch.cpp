#include "genpt/flowmatch.hpp"

namespace genpt {

namespace {
Tensorf noise_like(const std::vector<int>& shape, double sigma, Rng& rng) {
    Tensorf t(shape);
    if (sigma != 0.0)
        for (float& x : t.v) x = float(rng.gaussian() * sigma);
    return t;
}

void add_inplace(Tensorf& dst, const Tensorf& src) {
    for (int64_t i = 0; i < dst.numel(); ++i) dst.v[size_t(i)] += src.v[size_t(i)];
}
}  // namespace

PriorSample prior_first_window(const Tensorf& queries_rep, const NoiseConfig& noise, Rng& rng) {
    if (queries_rep.rank() != 3 || queries_rep.shape[2] != 2)
        throw std::invalid_argument("prior_first_window: queries must be [T,N,2]");
    noise.validate();
    const int T = queries_rep.shape[0], N = queries_rep.shape[1];
    PriorSample out;
    out.prior_flag = 1.f;
    out.state.coords = queries_rep;
    add_inplace(out.state.coords, noise_like({T, N, 2}, noise.sigma_coord, rng));
    out.state.vis = noise_like({T, N, 1}, noise.sigma_vis, rng);
    out.state.conf = noise_like({T, N, 1}, noise.sigma_conf, rng);
    out.state.l = 1;
    return out;
}

PriorSample prior_next_window(const Tensorf& prev_coords, const Tensorf& prev_vis,
                              const Tensorf& prev_conf, const NoiseConfig& noise, Rng& rng,
                              bool noise_first_half) {
    if (prev_coords.rank() != 3 || prev_coords.shape[2] != 2)
        throw std::invalid_argument("prior_next_window: prev coords must be [T,N,2]");
    const int T = prev_coords.shape[0], N = prev_coords.shape[1];
    if (T % 2) throw std::invalid_argument("prior_next_window: window length must be even");
    if (prev_vis.shape != std::vector<int>{T, N, 1} || prev_conf.shape != std::vector<int>{T, N, 1})
        throw std::invalid_argument("prior_next_window: vis/conf must be [T,N,1]");
    const int half = T / 2;

    auto build = [&](const Tensorf& prev, int ch, double sigma) {
        Tensorf eps = noise_like({T, N, ch}, sigma, rng);
        Tensorf out({T, N, ch});
        // first half: Dirac at prev's trailing half
        for (int t = 0; t < half; ++t)
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < ch; ++c) {
                    float v = prev.at(t + half, n, c);
                    if (noise_first_half) v += eps.at(t, n, c);
                    out.at(t, n, c) = v;
                }
        // second half: Gaussian about prev's final frame
        for (int t = half; t < T; ++t)
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < ch; ++c)
                    out.at(t, n, c) = prev.at(T - 1, n, c) + eps.at(t, n, c);
        return out;
    };

    PriorSample out;
    out.prior_flag = 0.f;
    out.state.coords = build(prev_coords, 2, noise.sigma_coord);
    out.state.vis = build(prev_vis, 1, noise.sigma_vis);
    out.state.conf = build(prev_conf, 1, noise.sigma_conf);
    out.state.l = 1;
    return out;
}

SampleState conditional_sample(const Tensorf& gt_coords, const Tensorf& gt_vis,
                               const Tensorf& gt_conf, const SampleState& prior, int l,
                               const PathSchedule& schedule, const NoiseConfig& noise, Rng& rng) {
    if (gt_coords.shape != prior.coords.shape || gt_vis.shape != prior.vis.shape ||
        gt_conf.shape != prior.conf.shape)
        throw std::invalid_argument("conditional_sample: shape mismatch with prior");
    const double lp = schedule.lprime(l);

    auto path = [&](const Tensorf& gt, const Tensorf& pr, double sigma) {
        const double se = path_sigma(sigma, lp, noise.schedule);
        Tensorf out;
        if (lp == 0.0) {
            out = pr;  // endpoint: the prior, bit-exact
        } else if (lp == 1.0) {
            out = gt;  // endpoint: the data
        } else {
            out = Tensorf(gt.shape);
            for (int64_t i = 0; i < out.numel(); ++i)
                out.v[size_t(i)] =
                    float(lp) * gt.v[size_t(i)] + float(1.0 - lp) * pr.v[size_t(i)];
        }
        if (se != 0.0) add_inplace(out, noise_like(gt.shape, se, rng));
        return out;
    };

    SampleState out;
    out.coords = path(gt_coords, prior.coords, noise.sigma_coord);
    out.vis = path(gt_vis, prior.vis, noise.sigma_vis);
    out.conf = path(gt_conf, prior.conf, noise.sigma_conf);
    out.l = l;
    out.L = schedule.steps;
    return out;
}

Tensorf confidence_target(const Tensorf& phat_px, const Tensorf& p_px, double clamp_px) {
    if (phat_px.shape != p_px.shape || phat_px.shape.back() != 2)
        throw std::invalid_argument("confidence_target: want matching [..,2] pixel coords");
    const int64_t rows = phat_px.numel() / 2;
    std::vector<int> oshape = phat_px.shape;
    oshape.back() = 1;
    Tensorf out(oshape);
    const float c2 = float(clamp_px * clamp_px);
    for (int64_t r = 0; r < rows; ++r) {
        float acc = 0.f;
        for (int k = 0; k < 2; ++k) {
            const float d = phat_px.v[size_t(2 * r + k)] - p_px.v[size_t(2 * r + k)];
            acc += 1.f - std::min(d * d, c2) / c2;
        }
        out.v[size_t(r)] = acc * 0.5f;
    }
    return out;
}

SampleState euler_step(const SampleState& sample, const Tensorf& est_coords,
                       const Tensorf& est_vis, const Tensorf& est_conf, const SampleState& prior,
                       const PathSchedule& schedule) {
    if (sample.l >= schedule.steps)
        throw std::invalid_argument("euler_step: no step beyond the path end (l=L)");
    const double d = schedule.lprime(sample.l + 1) - schedule.lprime(sample.l);

    auto advance = [&](const Tensorf& cur, const Tensorf& est, const Tensorf& pr) {
        Tensorf out(cur.shape);
        for (int64_t i = 0; i < cur.numel(); ++i)
            out.v[size_t(i)] =
                cur.v[size_t(i)] + float(d) * (est.v[size_t(i)] - pr.v[size_t(i)]);
        return out;
    };

    SampleState out;
    out.coords = advance(sample.coords, est_coords, prior.coords);
    out.vis = advance(sample.vis, est_vis, prior.vis);
    out.conf = advance(sample.conf, est_conf, prior.conf);
    out.l = sample.l + 1;
    out.L = schedule.steps;
    return out;
}

}  // namespace genpt
