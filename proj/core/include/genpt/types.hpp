#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "genpt/tensor.hpp"

namespace genpt {

// Coordinate convention used everywhere: x = column, y = row, origin at the
// top-left pixel center. Normalized coordinates map pixel 0 -> -1 and
// pixel (W-1) -> +1 per axis. Visibility is stored as {0,1} reals; predicted
// visibility is thresholded at 0.5 after sigmoid.

struct VideoClip {
    Tensorf frames;  // [F, 3, H, W], values in [0, 1]
    double fps = 12.0;

    int num_frames() const { return frames.shape[0]; }
    int height() const { return frames.shape[2]; }
    int width() const { return frames.shape[3]; }

    void validate(int scales = 3) const;
};

struct QuerySet {
    Tensorf points;  // [N, 3] as (frame index, x px, y px)

    int count() const { return points.shape[0]; }
    void validate(int num_frames, int height, int width) const;
};

struct GroundTruth {
    Tensorf coords;  // [F, N, 2], normalized to [-1, 1]
    Tensorf vis;     // [F, N, 1], {0, 1}

    int num_frames() const { return coords.shape[0]; }
    int count() const { return coords.shape[1]; }
    void validate() const;
};

struct WindowPlan {
    int window = 0;  // T
    int stride = 0;  // T/2
    std::vector<std::pair<int, int>> ranges;  // [start, end) per window

    int count() const { return int(ranges.size()); }
};

// Frame ranges with stride T/2; when T' is not stride-aligned the final window
// is clamped to end at T' (extra overlap) instead of padding frames.
WindowPlan plan_windows(int total_frames, int window);

enum class VarianceSchedule { Zero, Constant, LinearL };

struct NoiseConfig {
    double sigma_coord = 0.25;
    double sigma_vis = 0.25;
    double sigma_conf = 0.25;
    VarianceSchedule schedule = VarianceSchedule::LinearL;

    void validate() const {
        if (sigma_coord < 0 || sigma_vis < 0 || sigma_conf < 0)
            throw std::invalid_argument("NoiseConfig: sigma must be >= 0");
    }
};

// Generated quantities at one integration step of one window.
struct SampleState {
    Tensorf coords;  // [T, N, 2] normalized
    Tensorf vis;     // [T, N, 1] logits
    Tensorf conf;    // [T, N, 1] logits
    int l = 1;       // 1-based path step
    int L = 2;

    void validate() const;
};

// K-step refinement history of ground-truth estimates at one integration step.
// Rows and the deltas that produced them are both kept, so
// rows[k+1] == rows[k] + deltas[k] holds bit-exactly.
struct TrackState {
    std::vector<Tensorf> coords;  // K rows of [T, N, 2]
    std::vector<Tensorf> vis;     // K rows of [T, N, 1]
    std::vector<Tensorf> conf;    // K rows of [T, N, 1]
    std::vector<Tensorf> coord_deltas, vis_deltas, conf_deltas;  // K-1 each

    int steps() const { return int(coords.size()); }
    const Tensorf& final_coords() const { return coords.back(); }
    const Tensorf& final_vis() const { return vis.back(); }
    const Tensorf& final_conf() const { return conf.back(); }
};

// x' = 2x/(W-1) - 1, y' = 2y/(H-1) - 1. Input/output shape [.., 2].
Tensorf normalize_coords(const Tensorf& pixels, int height, int width);
Tensorf denormalize_coords(const Tensorf& norm, int height, int width);

}  // namespace genpt
