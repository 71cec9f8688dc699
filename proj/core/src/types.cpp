#include "genpt/types.hpp"

#include <cmath>

namespace genpt {

void VideoClip::validate(int scales) const {
    if (frames.rank() != 4 || frames.shape[1] != 3)
        throw std::invalid_argument("VideoClip: frames must be [F,3,H,W]");
    if (num_frames() < 2) throw std::invalid_argument("VideoClip: need at least 2 frames");
    const int div = 1 << (scales + 1);
    if (height() % div || width() % div)
        throw std::invalid_argument("VideoClip: H and W must be divisible by " +
                                    std::to_string(div));
}

void QuerySet::validate(int num_frames, int height, int width) const {
    if (points.rank() != 2 || points.shape[1] != 3)
        throw std::invalid_argument("QuerySet: points must be [N,3]");
    for (int n = 0; n < count(); ++n) {
        const float f = points.at(n, 0), x = points.at(n, 1), y = points.at(n, 2);
        if (f != std::floor(f) || f < 0 || f >= float(num_frames))
            throw std::invalid_argument("QuerySet: frame index out of range at row " +
                                        std::to_string(n));
        if (x < 0 || x > float(width - 1) || y < 0 || y > float(height - 1))
            throw std::invalid_argument("QuerySet: point outside frame at row " +
                                        std::to_string(n));
    }
}

void GroundTruth::validate() const {
    if (coords.rank() != 3 || coords.shape[2] != 2)
        throw std::invalid_argument("GroundTruth: coords must be [F,N,2]");
    if (vis.shape != std::vector<int>{coords.shape[0], coords.shape[1], 1})
        throw std::invalid_argument("GroundTruth: vis must be [F,N,1]");
    if (!coords.all_finite()) throw std::invalid_argument("GroundTruth: non-finite coords");
    for (const float& v : vis.v)
        if (v != 0.f && v != 1.f) throw std::invalid_argument("GroundTruth: vis must be 0 or 1");
    for (int n = 0; n < count(); ++n) {
        bool any = false;
        for (int f = 0; f < num_frames(); ++f) any = any || vis.at(f, n, 0) == 1.f;
        if (!any)
            throw std::invalid_argument("GroundTruth: trajectory " + std::to_string(n) +
                                        " is never visible");
    }
}

void SampleState::validate() const {
    if (!coords.all_finite() || !vis.all_finite() || !conf.all_finite())
        throw std::invalid_argument("SampleState: non-finite values");
    if (l < 1 || l > L) throw std::invalid_argument("SampleState: step index out of range");
}

WindowPlan plan_windows(int total_frames, int window) {
    if (window < 2 || window % 2 != 0)
        throw std::invalid_argument("plan_windows: window length must be even, got " +
                                    std::to_string(window));
    if (total_frames < window)
        throw std::invalid_argument("plan_windows: need T' >= T, got T'=" +
                                    std::to_string(total_frames) + " T=" + std::to_string(window));
    WindowPlan plan;
    plan.window = window;
    plan.stride = window / 2;
    const int count = (2 * total_frames - 1) / window;  // ceil(2T'/T - 1)
    for (int i = 0; i < count; ++i) {
        int start = std::min(i * plan.stride, total_frames - window);
        plan.ranges.emplace_back(start, start + window);
    }
    return plan;
}

Tensorf normalize_coords(const Tensorf& pixels, int height, int width) {
    if (pixels.shape.empty() || pixels.shape.back() != 2)
        throw std::invalid_argument("normalize_coords: last dim must be 2");
    if (height <= 0 || width <= 0) throw std::invalid_argument("normalize_coords: bad H/W");
    if (!pixels.all_finite()) throw std::invalid_argument("normalize_coords: non-finite input");
    Tensorf out(pixels.shape);
    const float sx = 2.f / float(width - 1), sy = 2.f / float(height - 1);
    for (int64_t i = 0; i < pixels.numel(); i += 2) {
        out.v[size_t(i)] = pixels.v[size_t(i)] * sx - 1.f;
        out.v[size_t(i) + 1] = pixels.v[size_t(i) + 1] * sy - 1.f;
    }
    return out;
}

Tensorf denormalize_coords(const Tensorf& norm, int height, int width) {
    if (norm.shape.empty() || norm.shape.back() != 2)
        throw std::invalid_argument("denormalize_coords: last dim must be 2");
    if (!norm.all_finite()) throw std::invalid_argument("denormalize_coords: non-finite input");
    Tensorf out(norm.shape);
    const float sx = float(width - 1) * 0.5f, sy = float(height - 1) * 0.5f;
    for (int64_t i = 0; i < norm.numel(); i += 2) {
        out.v[size_t(i)] = (norm.v[size_t(i)] + 1.f) * sx;
        out.v[size_t(i) + 1] = (norm.v[size_t(i) + 1] + 1.f) * sy;
    }
    return out;
}

}  // namespace genpt
