#include "genpt/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace genpt {

namespace {

constexpr double kTwoPi = 6.283185307179586;

struct Sprite {
    SpriteKind kind;
    MotionKind motion;
    double half = 6.0;  // half side / radius
    // motion parameters
    double cx = 0, cy = 0;       // base position / center
    double vx = 0, vy = 0;       // linear velocity
    double amp_x = 0, amp_y = 0; // sinusoidal amplitudes / circular radius in amp_x
    double om_x = 0, om_y = 0;   // angular rates
    double ph_x = 0, ph_y = 0;   // phases
    // appearance
    Tensorf texture;  // [3, S, S] for squares
    float color[3] = {0.5f, 0.5f, 0.5f};
    double blob_sigma = 3.0;
    // tracked point anchors, offsets from center
    std::vector<std::pair<double, double>> anchors;

    std::pair<double, double> pos(int t) const {
        switch (motion) {
            case MotionKind::Linear:
                return {cx + vx * t, cy + vy * t};
            case MotionKind::Sinusoidal:
                return {cx + amp_x * std::sin(om_x * t + ph_x),
                        cy + amp_y * std::sin(om_y * t + ph_y)};
            case MotionKind::Circular:
                return {cx + amp_x * std::cos(om_x * t + ph_x),
                        cy + amp_x * std::sin(om_x * t + ph_x)};
        }
        return {cx, cy};
    }

    bool covers(double px, double py, double x, double y) const {
        // (px,py): sprite center; (x,y): pixel
        const double dx = x - px, dy = y - py;
        if (kind == SpriteKind::TexturedSquare)
            return std::abs(dx) <= half && std::abs(dy) <= half;
        return dx * dx + dy * dy <= half * half;
    }
};

Tensorf make_texture(int side, Rng& rng) {
    Tensorf tex({3, side, side});
    for (float& v : tex.v) v = float(rng.uniform(0.1, 0.95));
    // light box blur so patches have structure at several scales
    Tensorf out = tex;
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < side; ++y)
            for (int x = 0; x < side; ++x) {
                float acc = 0.f;
                int cnt = 0;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int yy = y + dy, xx = x + dx;
                        if (yy < 0 || yy >= side || xx < 0 || xx >= side) continue;
                        acc += tex.at(c, yy, xx);
                        ++cnt;
                    }
                out.at(c, y, x) = 0.35f * tex.at(c, y, x) + 0.65f * acc / float(cnt);
            }
    return out;
}

Tensorf make_background(int h, int w, Rng& rng) {
    const int gh = h / 8 + 2, gw = w / 8 + 2;
    Tensorf grid({3, gh, gw});
    for (float& v : grid.v) v = float(rng.uniform(0.15, 0.85));
    Tensorf bg({3, h, w});
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const double gy = y / 8.0, gx = x / 8.0;
                const int y0 = int(gy), x0 = int(gx);
                const double ay = gy - y0, ax = gx - x0;
                bg.at(c, y, x) = float((1 - ay) * ((1 - ax) * grid.at(c, y0, x0) +
                                                   ax * grid.at(c, y0, x0 + 1)) +
                                       ay * ((1 - ax) * grid.at(c, y0 + 1, x0) +
                                             ax * grid.at(c, y0 + 1, x0 + 1)));
            }
    return bg;
}

// Leading-edge linear sweep shared by in-world bars and the benchmark
// transform: span along the sweep axis at step s of [0, n-1].
std::pair<int, int> bar_span(int s, int n, int extent, int width) {
    const double lead = -double(width) + double(s) * double(extent + width) / double(n - 1);
    const int left = int(std::lround(lead));
    return {left, left + width};
}

struct BarCover {
    int lo = 0, hi = 0;  // [lo, hi) along the axis
    bool horizontal_axis = true;  // true: span indexes columns, false: rows
    bool active = false;
};

BarCover bar_cover(const OccluderBar& bar, int t, int frames, int h, int w) {
    BarCover c;
    const int end = bar.end_frame < 0 ? frames - 1 : bar.end_frame;
    if (t < bar.start_frame || t > end || end <= bar.start_frame) return c;
    const bool horiz = bar.direction == SweepDirection::LeftToRight ||
                       bar.direction == SweepDirection::RightToLeft;
    const int extent = horiz ? w : h;
    auto [lo, hi] = bar_span(t - bar.start_frame, end - bar.start_frame + 1, extent, bar.width_px);
    if (bar.direction == SweepDirection::RightToLeft || bar.direction == SweepDirection::BottomToTop) {
        const int nlo = extent - hi, nhi = extent - lo;
        lo = nlo;
        hi = nhi;
    }
    c.lo = std::max(lo, 0);
    c.hi = std::min(hi, extent);
    c.horizontal_axis = horiz;
    c.active = c.hi > c.lo;
    return c;
}

}  // namespace

void WorldConfig::validate() const {
    if (height < 16 || width < 16 || frames < 2)
        throw std::invalid_argument("WorldConfig: frame geometry too small");
    if (sprites < 1 || points_per_sprite < 1)
        throw std::invalid_argument("WorldConfig: need at least one sprite and point");
    if (sprite_kinds.empty() || motion_kinds.empty())
        throw std::invalid_argument("WorldConfig: empty kind lists");
    if (max_sprite_size >= std::min(height, width) / 2.0)
        throw std::invalid_argument("WorldConfig: sprite size must stay below min(H,W)/2");
    if (min_sprite_size < 4 || min_sprite_size > max_sprite_size)
        throw std::invalid_argument("WorldConfig: bad sprite size range");
    if (max_speed <= 0 || max_speed >= std::min(height, width) / 32.0)
        throw std::invalid_argument(
            "WorldConfig: max_speed must keep per-frame displacement under min(H,W)/32");
    for (const auto& bar : occluders) {
        if (bar.width_px < 1 || bar.width_px >= std::max(height, width))
            throw std::invalid_argument("WorldConfig: occluder width out of range");
        const int end = bar.end_frame < 0 ? frames - 1 : bar.end_frame;
        if (bar.start_frame < 0 || end >= frames || end <= bar.start_frame)
            throw std::invalid_argument("WorldConfig: occluder frame range invalid");
    }
}

std::pair<VideoClip, GroundTruth> make_clip(const WorldConfig& config) {
    config.validate();
    Rng rng(Rng::mix(config.seed ^ 0x73796e7468ull));
    const int H = config.height, W = config.width, F = config.frames;

    Tensorf shared_tex;
    float shared_color[3];
    if (config.texture == TextureMode::Homogeneous) {
        shared_tex = make_texture(int(std::lround(config.max_sprite_size)), rng);
        for (int c = 0; c < 3; ++c) shared_color[c] = float(rng.uniform(0.2, 0.9));
    }

    std::vector<Sprite> sprites(size_t(config.sprites));
    for (int i = 0; i < config.sprites; ++i) {
        Sprite& sp = sprites[size_t(i)];
        sp.kind = config.sprite_kinds[size_t(rng.uniform_int(0, int64_t(config.sprite_kinds.size()) - 1))];
        sp.motion = config.motion_kinds[size_t(rng.uniform_int(0, int64_t(config.motion_kinds.size()) - 1))];
        sp.half = rng.uniform(config.min_sprite_size, config.max_sprite_size) * 0.5;

        // keep every tracked point strictly inside the frame for all t
        const double reach = sp.half + 1.0;
        auto place = [&](double extent, double travel) {
            const double lo = reach + travel, hi = extent - 1 - reach - travel;
            return rng.uniform(lo, std::max(lo, hi));
        };
        switch (sp.motion) {
            case MotionKind::Linear: {
                const double speed = rng.uniform(0.25, 1.0) * config.max_speed;
                const double ang = rng.uniform(0.0, kTwoPi);
                sp.vx = speed * std::cos(ang);
                sp.vy = speed * std::sin(ang);
                // place() reserves the full travel on both sides, so the start
                // works for either sign of velocity
                sp.cx = place(W, std::abs(sp.vx) * (F - 1));
                sp.cy = place(H, std::abs(sp.vy) * (F - 1));
                break;
            }
            case MotionKind::Sinusoidal: {
                sp.amp_x = rng.uniform(2.0, 8.0);
                sp.amp_y = rng.uniform(1.0, 4.0);
                sp.om_x = std::min(config.max_speed / sp.amp_x, 0.8);
                sp.om_y = std::min(config.max_speed / sp.amp_y, 0.8);
                sp.ph_x = rng.uniform(0.0, kTwoPi);
                sp.ph_y = rng.uniform(0.0, kTwoPi);
                sp.cx = place(W, sp.amp_x);
                sp.cy = place(H, sp.amp_y);
                break;
            }
            case MotionKind::Circular: {
                sp.amp_x = rng.uniform(2.0, 7.0);
                sp.om_x = std::min(config.max_speed / sp.amp_x, 0.8);
                sp.ph_x = rng.uniform(0.0, kTwoPi);
                sp.cx = place(W, sp.amp_x);
                sp.cy = place(H, sp.amp_x);
                break;
            }
        }

        const int side = std::max(4, int(std::lround(sp.half * 2)));
        if (config.texture == TextureMode::Homogeneous) {
            sp.texture = shared_tex;
            for (int c = 0; c < 3; ++c) sp.color[c] = shared_color[c];
        } else {
            sp.texture = make_texture(side, rng);
            for (int c = 0; c < 3; ++c) sp.color[c] = float(rng.uniform(0.2, 0.9));
        }
        sp.blob_sigma = sp.half * 0.6;

        for (int p = 0; p < config.points_per_sprite; ++p) {
            const double r = 0.4 * sp.half;
            sp.anchors.emplace_back(rng.uniform(-r, r), rng.uniform(-r, r));
        }
    }

    const Tensorf bg = make_background(H, W, rng);

    VideoClip clip;
    clip.frames = Tensorf({F, 3, H, W});
    const int N = config.sprites * config.points_per_sprite;
    GroundTruth gt;
    gt.coords = Tensorf({F, N, 2});
    gt.vis = Tensorf({F, N, 1});

    std::vector<int16_t> zbuf(size_t(H) * W);
    for (int t = 0; t < F; ++t) {
        float* frame = &clip.frames.v[size_t(t) * 3 * H * W];
        std::copy_n(bg.data(), size_t(3) * H * W, frame);
        std::fill(zbuf.begin(), zbuf.end(), int16_t(-1));

        for (int i = 0; i < config.sprites; ++i) {
            const Sprite& sp = sprites[size_t(i)];
            auto [px, py] = sp.pos(t);
            const int x0 = std::max(0, int(std::floor(px - sp.half)));
            const int x1 = std::min(W - 1, int(std::ceil(px + sp.half)));
            const int y0 = std::max(0, int(std::floor(py - sp.half)));
            const int y1 = std::min(H - 1, int(std::ceil(py + sp.half)));
            const int side = sp.texture.numel() ? sp.texture.shape[1] : 0;
            for (int y = y0; y <= y1; ++y)
                for (int x = x0; x <= x1; ++x) {
                    if (!sp.covers(px, py, x, y)) continue;
                    zbuf[size_t(y) * W + x] = int16_t(i);
                    for (int c = 0; c < 3; ++c) {
                        float v = sp.color[c];
                        if (sp.kind == SpriteKind::TexturedSquare) {
                            int u = int(std::floor(x - (px - sp.half)));
                            int w2 = int(std::floor(y - (py - sp.half)));
                            u = std::clamp(u, 0, side - 1);
                            w2 = std::clamp(w2, 0, side - 1);
                            v = sp.texture.at(c, w2, u);
                        } else if (sp.kind == SpriteKind::GaussianBlob) {
                            const double d2 = (x - px) * (x - px) + (y - py) * (y - py);
                            v = sp.color[c] *
                                float(0.35 + 0.65 * std::exp(-d2 / (2 * sp.blob_sigma * sp.blob_sigma)));
                        }
                        frame[(size_t(c) * H + y) * W + x] = v;
                    }
                }
        }

        for (const auto& bar : config.occluders) {
            const BarCover cov = bar_cover(bar, t, F, H, W);
            if (!cov.active) continue;
            if (cov.horizontal_axis) {
                for (int y = 0; y < H; ++y)
                    for (int x = cov.lo; x < cov.hi; ++x) {
                        zbuf[size_t(y) * W + x] = int16_t(0x7fff);
                        for (int c = 0; c < 3; ++c) frame[(size_t(c) * H + y) * W + x] = 0.f;
                    }
            } else {
                for (int y = cov.lo; y < cov.hi; ++y)
                    for (int x = 0; x < W; ++x) {
                        zbuf[size_t(y) * W + x] = int16_t(0x7fff);
                        for (int c = 0; c < 3; ++c) frame[(size_t(c) * H + y) * W + x] = 0.f;
                    }
            }
        }

        for (int i = 0; i < config.sprites; ++i) {
            const Sprite& sp = sprites[size_t(i)];
            auto [px, py] = sp.pos(t);
            for (int p = 0; p < config.points_per_sprite; ++p) {
                const int n = i * config.points_per_sprite + p;
                const double x = px + sp.anchors[size_t(p)].first;
                const double y = py + sp.anchors[size_t(p)].second;
                if (x < 0 || x > W - 1 || y < 0 || y > H - 1)
                    throw std::logic_error("make_clip: tracked point left the frame");
                gt.coords.at(t, n, 0) = float(2.0 * x / (W - 1) - 1.0);
                gt.coords.at(t, n, 1) = float(2.0 * y / (H - 1) - 1.0);
                const int xi = int(std::lround(x)), yi = int(std::lround(y));
                gt.vis.at(t, n, 0) = zbuf[size_t(yi) * W + xi] == int16_t(i) ? 1.f : 0.f;
            }
        }
    }

    gt.validate();
    clip.validate();
    return {std::move(clip), std::move(gt)};
}

OccludedClip apply_sliding_occluder(const VideoClip& clip, SweepDirection direction,
                                    int bar_width_px) {
    const int F = clip.num_frames(), H = clip.height(), W = clip.width();
    if (bar_width_px < 1 || bar_width_px >= std::max(H, W))
        throw std::invalid_argument("apply_sliding_occluder: bar width out of range");
    OccludedClip out;
    out.clip = clip;
    out.mask = Tensor<uint8_t>({F, H, W});
    OccluderBar bar;
    bar.direction = direction;
    bar.width_px = bar_width_px;
    bar.start_frame = 0;
    bar.end_frame = F - 1;
    for (int t = 0; t < F; ++t) {
        const BarCover cov = bar_cover(bar, t, F, H, W);
        if (!cov.active) continue;
        float* frame = &out.clip.frames.v[size_t(t) * 3 * H * W];
        uint8_t* m = &out.mask.v[size_t(t) * H * W];
        if (cov.horizontal_axis) {
            for (int y = 0; y < H; ++y)
                for (int x = cov.lo; x < cov.hi; ++x) {
                    m[size_t(y) * W + x] = 1;
                    for (int c = 0; c < 3; ++c) frame[(size_t(c) * H + y) * W + x] = 0.f;
                }
        } else {
            for (int y = cov.lo; y < cov.hi; ++y)
                for (int x = 0; x < W; ++x) {
                    m[size_t(y) * W + x] = 1;
                    for (int c = 0; c < 3; ++c) frame[(size_t(c) * H + y) * W + x] = 0.f;
                }
        }
    }
    return out;
}

void apply_occlusion_mask(GroundTruth& gt, const Tensor<uint8_t>& mask, int height, int width) {
    const int F = gt.num_frames(), N = gt.count();
    if (mask.shape != std::vector<int>{F, height, width})
        throw std::invalid_argument("apply_occlusion_mask: mask shape mismatch");
    for (int t = 0; t < F; ++t)
        for (int n = 0; n < N; ++n) {
            const double x = (gt.coords.at(t, n, 0) + 1.0) * (width - 1) / 2.0;
            const double y = (gt.coords.at(t, n, 1) + 1.0) * (height - 1) / 2.0;
            const int xi = std::clamp(int(std::lround(x)), 0, width - 1);
            const int yi = std::clamp(int(std::lround(y)), 0, height - 1);
            if (mask.v[(size_t(t) * height + yi) * width + xi]) gt.vis.at(t, n, 0) = 0.f;
        }
}

QuerySet sample_queries(const GroundTruth& gt, int n, QueryRule rule, uint64_t seed, int height,
                        int width) {
    const int N = gt.count();
    std::vector<int> eligible;
    for (int i = 0; i < N; ++i) {
        if (rule == QueryRule::FirstFrameVisible) {
            if (gt.vis.at(0, i, 0) == 1.f) eligible.push_back(i);
        } else {
            eligible.push_back(i);  // every trajectory has a visible frame
        }
    }
    if (int(eligible.size()) < n)
        throw std::invalid_argument("sample_queries: only " + std::to_string(eligible.size()) +
                                    " eligible trajectories, need " + std::to_string(n));
    Rng rng(Rng::mix(seed ^ 0x71756572ull));
    // deterministic partial Fisher-Yates
    std::vector<int> pool = eligible;
    QuerySet qs;
    qs.points = Tensorf({n, 3});
    for (int k = 0; k < n; ++k) {
        const int j = k + int(rng.uniform_int(0, int64_t(pool.size()) - 1 - k));
        std::swap(pool[size_t(k)], pool[size_t(j)]);
        const int traj = pool[size_t(k)];
        int frame = 0;
        if (rule == QueryRule::UniformVisible) {
            std::vector<int> vis_frames;
            for (int t = 0; t < gt.num_frames(); ++t)
                if (gt.vis.at(t, traj, 0) == 1.f) vis_frames.push_back(t);
            frame = vis_frames[size_t(rng.uniform_int(0, int64_t(vis_frames.size()) - 1))];
        }
        qs.points.at(k, 0) = float(frame);
        qs.points.at(k, 1) = float((gt.coords.at(frame, traj, 0) + 1.0) * (width - 1) / 2.0);
        qs.points.at(k, 2) = float((gt.coords.at(frame, traj, 1) + 1.0) * (height - 1) / 2.0);
    }
    return qs;
}

QuerySet queries_first_visible(const GroundTruth& gt, int height, int width) {
    const int N = gt.count();
    QuerySet qs;
    qs.points = Tensorf({N, 3});
    for (int i = 0; i < N; ++i) {
        int frame = 0;
        while (gt.vis.at(frame, i, 0) != 1.f) ++frame;  // validate() guarantees one exists
        qs.points.at(i, 0) = float(frame);
        qs.points.at(i, 1) = float((gt.coords.at(frame, i, 0) + 1.0) * (width - 1) / 2.0);
        qs.points.at(i, 2) = float((gt.coords.at(frame, i, 1) + 1.0) * (height - 1) / 2.0);
    }
    return qs;
}

}  // namespace genpt
