#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "genpt/rng.hpp"
#include "genpt/types.hpp"

namespace genpt {

enum class SpriteKind { TexturedSquare, GaussianBlob, FlatDisc };
enum class MotionKind { Linear, Sinusoidal, Circular };
enum class TextureMode { Unique, Homogeneous };
enum class SweepDirection { LeftToRight, RightToLeft, TopToBottom, BottomToTop };

// A black bar sweeping across the frame between two frames; the leading edge
// sits at the frame border on start_frame and the trailing edge has fully
// left by end_frame.
struct OccluderBar {
    SweepDirection direction = SweepDirection::LeftToRight;
    int width_px = 19;
    int start_frame = 0;
    int end_frame = -1;  // -1: last frame
};

struct WorldConfig {
    int height = 64;
    int width = 96;
    int frames = 24;
    int sprites = 6;
    int points_per_sprite = 3;
    std::vector<SpriteKind> sprite_kinds = {SpriteKind::TexturedSquare, SpriteKind::GaussianBlob,
                                            SpriteKind::FlatDisc};
    std::vector<MotionKind> motion_kinds = {MotionKind::Linear, MotionKind::Sinusoidal,
                                            MotionKind::Circular};
    TextureMode texture = TextureMode::Unique;
    double min_sprite_size = 10.0;  // full side / diameter, px
    double max_sprite_size = 20.0;
    double max_speed = 0.75;  // px per frame
    std::vector<OccluderBar> occluders;
    uint64_t seed = 1;

    void validate() const;
};

// Renders sprites over a static textured background. Ground-truth coordinates
// follow the analytic motion exactly; visibility is 0 exactly when the
// point's pixel is covered by a higher-z sprite or an occluder bar.
// Deterministic given the config (including seed).
std::pair<VideoClip, GroundTruth> make_clip(const WorldConfig& config);

struct OccludedClip {
    VideoClip clip;
    Tensor<uint8_t> mask;  // [F, H, W], 1 where the bar covered the pixel
};

// Benchmark transform: sweep a black bar through the clip. The bar's leading
// edge position at frame t is round(-w + t*(D+w)/(F-1)) along the sweep axis,
// D being the frame extent, so it enters at frame 0 and has exited by the
// last frame. Occluded pixels are set to 0.
OccludedClip apply_sliding_occluder(const VideoClip& clip, SweepDirection direction,
                                    int bar_width_px);

// Zero out ground-truth visibility wherever the mask covers the point's pixel.
void apply_occlusion_mask(GroundTruth& gt, const Tensor<uint8_t>& mask, int height, int width);

enum class QueryRule { FirstFrameVisible, UniformVisible };

// Query selection for evaluation. FirstFrameVisible keeps only trajectories
// visible at frame 0 (queries placed there); UniformVisible queries each
// chosen trajectory at a uniformly drawn visible frame.
QuerySet sample_queries(const GroundTruth& gt, int n, QueryRule rule, uint64_t seed, int height,
                        int width);

// Training protocol: one query per trajectory at its first visible frame.
QuerySet queries_first_visible(const GroundTruth& gt, int height, int width);

// Per-clip seed derivation for parallel dataset builds.
inline uint64_t clip_seed(uint64_t master_seed, uint64_t clip_index) {
    return master_seed ^ clip_index;
}

}  // namespace genpt
