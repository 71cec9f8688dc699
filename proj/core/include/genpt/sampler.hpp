#pragma once

#include <memory>

#include "genpt/flowmatch.hpp"
#include "genpt/refiner.hpp"
#include "genpt/train.hpp"

namespace genpt {

struct SampleConfig {
    int refine_steps = 3;  // K: estimates per integration step (K-1 updates)
    int path_steps = 3;    // L: L-1 Euler steps per window
    NoiseConfig noise;
    bool window_dependent_prior = true;
    bool noise_in_second_prior_first_half = false;
    bool discriminative_mode = false;
    int window = 16;
    double divergence_guard = 10.0;
    double vis_threshold = 0.5;  // on sigmoid(vis logit)
};

// Ground-truth estimator driving the sampler: the trained network, or an
// oracle that returns the true data (used for closure checks and ceilings).
class Estimator {
public:
    virtual ~Estimator() = default;
    virtual void begin_clip(const VideoClip& clip, const QuerySet& queries, int window_len) = 0;
    virtual TrackState estimate(const SampleState& init, int frame_start, double lprime,
                                double prior_flag, int refine_steps) = 0;
    virtual int64_t evaluations() const { return 0; }  // network calls so far
};

class NetworkEstimator final : public Estimator {
public:
    NetworkEstimator(const Params<float>& params, const ModelConfig& cfg,
                     double divergence_guard = 10.0)
        : params_(&params), cfg_(cfg), guard_(divergence_guard) {}

    void begin_clip(const VideoClip& clip, const QuerySet& queries, int window_len) override;
    TrackState estimate(const SampleState& init, int frame_start, double lprime,
                        double prior_flag, int refine_steps) override;
    int64_t evaluations() const override { return evals_; }

private:
    const Params<float>* params_;
    ModelConfig cfg_;
    double guard_;
    ag::Tape<float> tape_;
    BoundParams<float> bound_;
    FeaturePyramid<float> pyr_;
    std::vector<ag::Var<float>> query_feats_;
    size_t base_mark_ = 0;
    int64_t evals_ = 0;
};

// Replaces the network with the true data: rows 2..K are the ground truth.
class OracleEstimator final : public Estimator {
public:
    OracleEstimator(const GroundTruth& gt, double vis_logit_scale = 12.0)
        : gt_(&gt), scale_(vis_logit_scale) {}
    void begin_clip(const VideoClip&, const QuerySet&, int) override {}
    TrackState estimate(const SampleState& init, int frame_start, double lprime,
                        double prior_flag, int refine_steps) override;

private:
    const GroundTruth* gt_;
    double scale_;
};

struct VideoSample {
    Tensorf coords;       // [F,N,2] normalized
    Tensorf vis_logits;   // [F,N,1]
    Tensorf conf_logits;  // [F,N,1]
    std::vector<PriorSample> window_priors;
    std::vector<SampleState> window_finals;

    Tensorf vis_binary(double threshold = 0.5) const;
    Tensorf conf_sigmoid() const;
};

// Full-video sampling: per window draw the window-dependent prior, run L-1
// Euler steps of K-1 refinements each, chain on the final sample, and take
// each frame's value from the latest window containing it.
VideoSample sample_video(Estimator& est, const VideoClip& clip, const QuerySet& queries,
                         const SampleConfig& cfg, uint64_t seed, int candidate_index = 0);

enum class Guide { Oracle, Greedy, Beam };

struct SelectionLog {
    // per window: every candidate's score and the surviving candidate indices
    std::vector<std::vector<double>> scores;
    std::vector<std::vector<int>> survivors;
    std::vector<double> cumulative;  // of the finally selected chain, per window
    std::string to_text() const;
};

struct BestOfNResult {
    VideoSample selected;
    SelectionLog log;
};

// Per-window best-of-N: candidates are advanced from the survivor(s) of the
// previous window with RNG streams keyed (seed, window, candidate). Oracle
// keeps the min mean pixel distance to the ground truth, greedy the max
// window-mean sigmoid confidence, beam the top-width cumulative confidence.
BestOfNResult best_of_n(Estimator& est, const VideoClip& clip, const QuerySet& queries, int n,
                        Guide guide, int beam_width, const SampleConfig& cfg, uint64_t seed,
                        const GroundTruth* gt = nullptr);

}  // namespace genpt
