#pragma once

#include "genpt/rng.hpp"
#include "genpt/types.hpp"

namespace genpt {

// Path step grid. Steps are 1-based: l' = (l-1)/(L-1), so l'(1)=0, l'(L)=1.
struct PathSchedule {
    int steps = 2;  // L

    explicit PathSchedule(int L) : steps(L) {
        if (L < 2) throw std::invalid_argument("PathSchedule: L must be >= 2");
    }
    double lprime(int l) const {
        if (l < 1 || l > steps) throw std::invalid_argument("PathSchedule: l out of range");
        return double(l - 1) / double(steps - 1);
    }
    double delta() const { return 1.0 / double(steps - 1); }
};

// Effective noise scale of the conditional path at l'.
inline double path_sigma(double sigma, double lprime, VarianceSchedule schedule) {
    switch (schedule) {
        case VarianceSchedule::Zero: return 0.0;
        case VarianceSchedule::Constant: return sigma;
        case VarianceSchedule::LinearL: return lprime * sigma;
    }
    return 0.0;
}

inline Tensorf gaussian_tensor(std::vector<int> shape, double sigma, Rng& rng) {
    Tensorf t(std::move(shape));
    if (sigma != 0.0)
        for (float& x : t.v) x = float(rng.gaussian() * sigma);
    else
        for (float& x : t.v) x = float(rng.gaussian()) * 0.f;  // keep stream position fixed
    return t;
}

struct PriorSample {
    SampleState state;
    float prior_flag = 1.f;  // 1: query-centred prior, 0: carried over from previous window
};

// First-window prior: coords Gaussian about the replicated queries, visibility
// and confidence logits Gaussian about zero.
PriorSample prior_first_window(const Tensorf& queries_rep, const NoiseConfig& noise, Rng& rng);

// Subsequent-window prior: Dirac on the overlapping first half (copied from
// prev's trailing half), Gaussian about prev's final frame on the second half.
// noise_first_half reproduces the variant that perturbs the carried half too.
PriorSample prior_next_window(const Tensorf& prev_coords, const Tensorf& prev_vis,
                              const Tensorf& prev_conf, const NoiseConfig& noise, Rng& rng,
                              bool noise_first_half = false);

// Sample from the conditional probability path at step l:
// x_l = l'*x_data + (1-l')*x_1 + sigma_eff(l')*eps, per quantity.
SampleState conditional_sample(const Tensorf& gt_coords, const Tensorf& gt_vis,
                               const Tensorf& gt_conf, const SampleState& prior, int l,
                               const PathSchedule& schedule, const NoiseConfig& noise, Rng& rng);

// C = mean over axes of 1 - min((phat - p)^2, clamp^2)/clamp^2, in pixels.
// Gradient never flows through this target; it is plain data.
Tensorf confidence_target(const Tensorf& phat_px, const Tensorf& p_px, double clamp_px = 16.0);

// One Euler update: x_{l+1} = x_l + delta_l' * (estimate - prior), applied to
// coords, vis, conf alike.
SampleState euler_step(const SampleState& sample, const Tensorf& est_coords,
                       const Tensorf& est_vis, const Tensorf& est_conf, const SampleState& prior,
                       const PathSchedule& schedule);

}  // namespace genpt
