#pragma once

#include <functional>
#include <optional>

#include "genpt/image.hpp"
#include "genpt/sampler.hpp"
#include "genpt/synth.hpp"

namespace genpt {

struct DeltaMetrics {
    std::optional<double> vis_avg, occ_avg;  // absent when the point set is empty
    std::vector<double> vis_per_threshold, occ_per_threshold;
    int64_t vis_count = 0, occ_count = 0;
};

// Fraction of (frame, point) pairs with pixel error < threshold, averaged over
// thresholds; visible and occluded frames are scored separately by the
// ground-truth flag. valid[f,n]=0 drops a pair (e.g. the query frame).
DeltaMetrics delta_metrics(const Tensorf& pred_px, const Tensorf& gt_px, const Tensorf& gt_vis,
                           const Tensor<uint8_t>& valid, const std::vector<double>& thresholds);

// Literature thresholds are pinned at a 512-pixel long side; scale to ours.
std::vector<double> scaled_thresholds(int height, int width,
                                      const std::vector<double>& at_512 = {1, 2, 4, 8, 16});

using EstimatorFactory =
    std::function<std::unique_ptr<Estimator>(const VideoClip&, const GroundTruth&)>;

struct BenchmarkOptions {
    SampleConfig sample;
    int queries = 8;
    QueryRule rule = QueryRule::FirstFrameVisible;
    bool occluder = false;
    std::vector<SweepDirection> directions = {SweepDirection::LeftToRight,
                                              SweepDirection::RightToLeft,
                                              SweepDirection::TopToBottom,
                                              SweepDirection::BottomToTop};
    int occluder_width_at_512 = 100;
    int best_of_n = 1;
    Guide guide = Guide::Greedy;
    int beam_width = 2;
    uint64_t seed = 1;
    bool exclude_query_frame = true;
    std::vector<double> thresholds_at_512 = {1, 2, 4, 8, 16};
};

struct ClipResult {
    std::string id;
    DeltaMetrics metrics;
    std::string error;  // non-empty: the clip failed and was skipped
};

struct MetricsReport {
    std::optional<double> vis_avg, occ_avg;
    std::vector<double> vis_per_threshold, occ_per_threshold;
    std::vector<ClipResult> rows;
    std::string config_echo;

    std::string to_text() const;
};

// Per-clip evaluation over synthetic worlds; the occluder variant runs every
// direction and averages. Clip failures are recorded per row and the run
// continues.
MetricsReport run_benchmark(const EstimatorFactory& make_estimator,
                            const std::vector<WorldConfig>& worlds, const BenchmarkOptions& opt);

// Per-frame spread (RMS pixel distance from the per-frame mean) across M
// sampled trajectories of one query.
std::vector<double> multimodality_stats(const std::vector<Tensorf>& trajectories_px);

Image overlay_plot(const VideoClip& clip, const std::vector<Tensorf>& trajectories_px,
                   int background_frame = 0);

struct SweepRow {
    int refine_steps;
    std::optional<double> vis_avg, occ_avg;
    double seconds = 0;
};

std::vector<SweepRow> convergence_sweep(const EstimatorFactory& make_estimator,
                                        const std::vector<WorldConfig>& worlds,
                                        const std::vector<int>& refine_steps_list,
                                        BenchmarkOptions opt);

struct ProfileRow {
    int points;
    double mean_seconds_per_frame = 0, std_seconds = 0;
    bool oom = false;
};

struct ProfileReport {
    std::vector<ProfileRow> rows;
    double best_of_n_multiple = 0;  // best-of-5 cost over single-sample cost
    std::string to_text() const;
};

ProfileReport runtime_profile(const Params<float>& params, const ModelConfig& model,
                              const SampleConfig& sample, const WorldConfig& world,
                              const std::vector<int>& point_counts, int repeats = 3);

}  // namespace genpt
