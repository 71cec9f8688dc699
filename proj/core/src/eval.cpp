#include "genpt/eval.hpp"

#include <chrono>
#include <cmath>
#include <new>
#include <numeric>
#include <sstream>

namespace genpt {

DeltaMetrics delta_metrics(const Tensorf& pred_px, const Tensorf& gt_px, const Tensorf& gt_vis,
                           const Tensor<uint8_t>& valid, const std::vector<double>& thresholds) {
    if (pred_px.shape != gt_px.shape || pred_px.shape.back() != 2)
        throw std::invalid_argument("delta_metrics: coord shapes must match [F,N,2]");
    const int F = pred_px.shape[0], N = pred_px.shape[1];
    if (gt_vis.shape != std::vector<int>{F, N, 1})
        throw std::invalid_argument("delta_metrics: vis must be [F,N,1]");
    if (valid.shape != std::vector<int>{F, N})
        throw std::invalid_argument("delta_metrics: valid mask must be [F,N]");
    if (thresholds.empty()) throw std::invalid_argument("delta_metrics: no thresholds");

    const size_t M = thresholds.size();
    std::vector<int64_t> vis_hits(M, 0), occ_hits(M, 0);
    int64_t vis_count = 0, occ_count = 0;
    for (int f = 0; f < F; ++f)
        for (int n = 0; n < N; ++n) {
            if (!valid.v[size_t(f) * N + n]) continue;
            const double dx = pred_px.at(f, n, 0) - gt_px.at(f, n, 0);
            const double dy = pred_px.at(f, n, 1) - gt_px.at(f, n, 1);
            const double err = std::sqrt(dx * dx + dy * dy);
            const bool visible = gt_vis.at(f, n, 0) == 1.f;
            (visible ? vis_count : occ_count) += 1;
            for (size_t k = 0; k < M; ++k)
                if (err < thresholds[k]) (visible ? vis_hits : occ_hits)[k] += 1;
        }

    DeltaMetrics out;
    out.vis_count = vis_count;
    out.occ_count = occ_count;
    if (vis_count > 0) {
        double avg = 0;
        for (size_t k = 0; k < M; ++k) {
            out.vis_per_threshold.push_back(double(vis_hits[k]) / double(vis_count));
            avg += out.vis_per_threshold.back();
        }
        out.vis_avg = avg / double(M);
    }
    if (occ_count > 0) {
        double avg = 0;
        for (size_t k = 0; k < M; ++k) {
            out.occ_per_threshold.push_back(double(occ_hits[k]) / double(occ_count));
            avg += out.occ_per_threshold.back();
        }
        out.occ_avg = avg / double(M);
    }
    return out;
}

std::vector<double> scaled_thresholds(int height, int width, const std::vector<double>& at_512) {
    const double scale = double(std::max(height, width)) / 512.0;
    std::vector<double> out;
    for (double t : at_512) out.push_back(t * scale);
    return out;
}

namespace {

DeltaMetrics evaluate_clip(const EstimatorFactory& make_estimator, const VideoClip& clip,
                           const GroundTruth& gt, const BenchmarkOptions& opt, uint64_t seed) {
    QuerySet queries = sample_queries(gt, opt.queries, opt.rule, seed, clip.height(), clip.width());
    // reorder ground truth columns to the sampled queries
    const int F = gt.num_frames(), Q = queries.count();
    GroundTruth sub;
    sub.coords = Tensorf({F, Q, 2});
    sub.vis = Tensorf({F, Q, 1});
    for (int qn = 0; qn < Q; ++qn) {
        const int qf = int(queries.points.at(qn, 0));
        const double qx = 2.0 * queries.points.at(qn, 1) / (clip.width() - 1) - 1.0;
        const double qy = 2.0 * queries.points.at(qn, 2) / (clip.height() - 1) - 1.0;
        int best = -1;
        double bd = 1e30;
        for (int c = 0; c < gt.count(); ++c) {
            const double dx = gt.coords.at(qf, c, 0) - qx, dy = gt.coords.at(qf, c, 1) - qy;
            if (dx * dx + dy * dy < bd) {
                bd = dx * dx + dy * dy;
                best = c;
            }
        }
        for (int f = 0; f < F; ++f) {
            sub.coords.at(f, qn, 0) = gt.coords.at(f, best, 0);
            sub.coords.at(f, qn, 1) = gt.coords.at(f, best, 1);
            sub.vis.at(f, qn, 0) = gt.vis.at(f, best, 0);
        }
    }

    std::unique_ptr<Estimator> est = make_estimator(clip, sub);
    VideoSample sample;
    if (opt.best_of_n > 1) {
        sample = best_of_n(*est, clip, queries, opt.best_of_n, opt.guide, opt.beam_width,
                           opt.sample, seed, &sub)
                     .selected;
    } else {
        sample = sample_video(*est, clip, queries, opt.sample, seed);
    }

    Tensor<uint8_t> valid({F, Q});
    for (int f = 0; f < F; ++f)
        for (int qn = 0; qn < Q; ++qn) {
            const bool is_query_frame = f == int(queries.points.at(qn, 0));
            valid.v[size_t(f) * Q + qn] = (opt.exclude_query_frame && is_query_frame) ? 0 : 1;
        }

    const Tensorf pred_px = denormalize_coords(sample.coords, clip.height(), clip.width());
    const Tensorf gt_px = denormalize_coords(sub.coords, clip.height(), clip.width());
    return delta_metrics(pred_px, gt_px, sub.vis, valid,
                         scaled_thresholds(clip.height(), clip.width(), opt.thresholds_at_512));
}

void merge_mean(std::optional<double>& dst, int& count, const std::optional<double>& src) {
    if (!src) return;
    dst = dst ? *dst + *src : *src;
    ++count;
}

}  // namespace

MetricsReport run_benchmark(const EstimatorFactory& make_estimator,
                            const std::vector<WorldConfig>& worlds, const BenchmarkOptions& opt) {
    MetricsReport report;
    std::optional<double> vis_sum, occ_sum;
    int vis_n = 0, occ_n = 0;
    std::vector<double> vis_thr_sum, occ_thr_sum;
    int vis_thr_n = 0, occ_thr_n = 0;

    for (size_t ci = 0; ci < worlds.size(); ++ci) {
        ClipResult row;
        row.id = "clip" + std::to_string(ci) + "_seed" + std::to_string(worlds[ci].seed);
        try {
            auto [clip, gt] = make_clip(worlds[ci]);
            const uint64_t seed = opt.seed ^ (ci * 0x9e3779b9ull);
            if (!opt.occluder) {
                row.metrics = evaluate_clip(make_estimator, clip, gt, opt, seed);
            } else {
                // all directions, averaged
                std::optional<double> va, oa;
                int vn = 0, on = 0;
                std::vector<double> vthr, othr;
                int vtn = 0, otn = 0;
                for (const auto dir : opt.directions) {
                    const int w = std::max(
                        1, int(std::lround(double(opt.occluder_width_at_512) *
                                           std::max(clip.height(), clip.width()) / 512.0)));
                    OccludedClip oc = apply_sliding_occluder(clip, dir, w);
                    GroundTruth gto = gt;
                    apply_occlusion_mask(gto, oc.mask, clip.height(), clip.width());
                    bool ok = true;
                    // occlusion may leave a trajectory never visible; skip such directions
                    try {
                        gto.validate();
                    } catch (const std::exception&) {
                        ok = false;
                    }
                    if (!ok) continue;
                    DeltaMetrics m = evaluate_clip(make_estimator, oc.clip, gto, opt, seed);
                    merge_mean(va, vn, m.vis_avg);
                    merge_mean(oa, on, m.occ_avg);
                    if (!m.vis_per_threshold.empty()) {
                        if (vthr.empty()) vthr.assign(m.vis_per_threshold.size(), 0.0);
                        for (size_t k = 0; k < vthr.size(); ++k) vthr[k] += m.vis_per_threshold[k];
                        ++vtn;
                    }
                    if (!m.occ_per_threshold.empty()) {
                        if (othr.empty()) othr.assign(m.occ_per_threshold.size(), 0.0);
                        for (size_t k = 0; k < othr.size(); ++k) othr[k] += m.occ_per_threshold[k];
                        ++otn;
                    }
                }
                if (va) row.metrics.vis_avg = *va / vn;
                if (oa) row.metrics.occ_avg = *oa / on;
                for (size_t k = 0; k < vthr.size(); ++k)
                    row.metrics.vis_per_threshold.push_back(vthr[k] / vtn);
                for (size_t k = 0; k < othr.size(); ++k)
                    row.metrics.occ_per_threshold.push_back(othr[k] / otn);
            }
        } catch (const std::exception& e) {
            row.error = e.what();
        }
        if (row.error.empty()) {
            merge_mean(vis_sum, vis_n, row.metrics.vis_avg);
            merge_mean(occ_sum, occ_n, row.metrics.occ_avg);
            if (!row.metrics.vis_per_threshold.empty()) {
                if (vis_thr_sum.empty())
                    vis_thr_sum.assign(row.metrics.vis_per_threshold.size(), 0.0);
                for (size_t k = 0; k < vis_thr_sum.size(); ++k)
                    vis_thr_sum[k] += row.metrics.vis_per_threshold[k];
                ++vis_thr_n;
            }
            if (!row.metrics.occ_per_threshold.empty()) {
                if (occ_thr_sum.empty())
                    occ_thr_sum.assign(row.metrics.occ_per_threshold.size(), 0.0);
                for (size_t k = 0; k < occ_thr_sum.size(); ++k)
                    occ_thr_sum[k] += row.metrics.occ_per_threshold[k];
                ++occ_thr_n;
            }
        }
        report.rows.push_back(std::move(row));
    }
    if (vis_sum) report.vis_avg = *vis_sum / vis_n;
    if (occ_sum) report.occ_avg = *occ_sum / occ_n;
    for (size_t k = 0; k < vis_thr_sum.size(); ++k)
        report.vis_per_threshold.push_back(vis_thr_sum[k] / vis_thr_n);
    for (size_t k = 0; k < occ_thr_sum.size(); ++k)
        report.occ_per_threshold.push_back(occ_thr_sum[k] / occ_thr_n);
    return report;
}

std::string MetricsReport::to_text() const {
    std::ostringstream os;
    os << "delta_vis_avg ";
    if (vis_avg) os << *vis_avg; else os << "absent";
    os << "\ndelta_occ_avg ";
    if (occ_avg) os << *occ_avg; else os << "absent";
    os << "\n";
    for (const auto& row : rows) {
        os << row.id << " ";
        if (!row.error.empty()) {
            os << "ERROR " << row.error;
        } else {
            os << "vis ";
            if (row.metrics.vis_avg) os << *row.metrics.vis_avg; else os << "absent";
            os << " occ ";
            if (row.metrics.occ_avg) os << *row.metrics.occ_avg; else os << "absent";
        }
        os << "\n";
    }
    if (!config_echo.empty()) os << "# config\n" << config_echo;
    return os.str();
}

std::vector<double> multimodality_stats(const std::vector<Tensorf>& trajectories_px) {
    if (trajectories_px.size() < 2)
        throw std::invalid_argument("multimodality_stats: need at least two samples");
    const int F = trajectories_px[0].shape[0];
    for (const auto& t : trajectories_px)
        if (t.shape != std::vector<int>{F, 2})
            throw std::invalid_argument("multimodality_stats: every sample must be [F,2]");
    const double M = double(trajectories_px.size());
    std::vector<double> spread(size_t(F), 0.0);
    for (int f = 0; f < F; ++f) {
        double mx = 0, my = 0;
        for (const auto& t : trajectories_px) {
            mx += t.at(f, 0);
            my += t.at(f, 1);
        }
        mx /= M;
        my /= M;
        double var = 0;
        for (const auto& t : trajectories_px) {
            const double dx = t.at(f, 0) - mx, dy = t.at(f, 1) - my;
            var += dx * dx + dy * dy;
        }
        spread[size_t(f)] = std::sqrt(var / M);
    }
    return spread;
}

Image overlay_plot(const VideoClip& clip, const std::vector<Tensorf>& trajectories_px,
                   int background_frame) {
    Image img = frame_to_image(clip.frames, background_frame);
    for (size_t m = 0; m < trajectories_px.size(); ++m) {
        const Tensorf& t = trajectories_px[m];
        const uint8_t r = uint8_t(60 + (m * 47) % 190);
        const uint8_t g = uint8_t(220 - (m * 31) % 160);
        const uint8_t b = uint8_t(40 + (m * 73) % 200);
        for (int f = 0; f + 1 < t.shape[0]; ++f)
            draw_line(img, t.at(f, 0), t.at(f, 1), t.at(f + 1, 0), t.at(f + 1, 1), r, g, b);
    }
    return img;
}

std::vector<SweepRow> convergence_sweep(const EstimatorFactory& make_estimator,
                                        const std::vector<WorldConfig>& worlds,
                                        const std::vector<int>& refine_steps_list,
                                        BenchmarkOptions opt) {
    std::vector<SweepRow> rows;
    for (int k : refine_steps_list) {
        opt.sample.refine_steps = k;
        const auto t0 = std::chrono::steady_clock::now();
        MetricsReport r = run_benchmark(make_estimator, worlds, opt);
        const auto t1 = std::chrono::steady_clock::now();
        SweepRow row;
        row.refine_steps = k;
        row.vis_avg = r.vis_avg;
        row.occ_avg = r.occ_avg;
        row.seconds = std::chrono::duration<double>(t1 - t0).count();
        rows.push_back(row);
    }
    return rows;
}

std::string ProfileReport::to_text() const {
    std::ostringstream os;
    os << "points  mean_s_per_frame  std  status\n";
    for (const auto& r : rows) {
        os << r.points << "  ";
        if (r.oom)
            os << "-  -  OOM";
        else
            os << r.mean_seconds_per_frame << "  " << r.std_seconds << "  ok";
        os << "\n";
    }
    os << "best_of_5_cost_multiple " << best_of_n_multiple << "\n";
    return os.str();
}

ProfileReport runtime_profile(const Params<float>& params, const ModelConfig& model,
                              const SampleConfig& sample, const WorldConfig& world,
                              const std::vector<int>& point_counts, int repeats) {
    ProfileReport report;
    auto [clip, gt] = make_clip(world);
    const int F = clip.num_frames();

    auto run_once = [&](int points, int n_best) {
        QuerySet q = sample_queries(gt, std::min(points, gt.count()), QueryRule::FirstFrameVisible,
                                    7, clip.height(), clip.width());
        // pad by tiling queries when more points than trajectories are asked for
        if (points > q.count()) {
            Tensorf tiled({points, 3});
            for (int i = 0; i < points; ++i)
                for (int c = 0; c < 3; ++c) tiled.at(i, c) = q.points.at(i % q.count(), c);
            q.points = std::move(tiled);
        }
        NetworkEstimator est(params, model);
        const auto t0 = std::chrono::steady_clock::now();
        if (n_best > 1)
            best_of_n(est, clip, q, n_best, Guide::Greedy, 1, sample, 7);
        else
            sample_video(est, clip, q, sample, 7);
        const auto t1 = std::chrono::steady_clock::now();
        return std::chrono::duration<double>(t1 - t0).count() / double(F);
    };

    for (int pc : point_counts) {
        ProfileRow row;
        row.points = pc;
        try {
            std::vector<double> times;
            for (int r = 0; r < std::max(3, repeats); ++r) times.push_back(run_once(pc, 1));
            double mean = std::accumulate(times.begin(), times.end(), 0.0) / times.size();
            double var = 0;
            for (double t : times) var += (t - mean) * (t - mean);
            row.mean_seconds_per_frame = mean;
            row.std_seconds = std::sqrt(var / times.size());
        } catch (const std::bad_alloc&) {
            row.oom = true;
        }
        report.rows.push_back(row);
    }

    // best-of-5 relative cost at the smallest configured point count
    if (!point_counts.empty()) {
        const int pc = point_counts.front();
        const double single = run_once(pc, 1);
        const double b5 = run_once(pc, 5);
        report.best_of_n_multiple = b5 / single;
    }
    return report;
}

}  // namespace genpt
