#include "genpt/runconfig.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace genpt {

namespace {
std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}
}  // namespace

RunConfig::RunConfig() {
    auto d = [&](const char* k, const char* v) { values_[k] = v; };
    // synthetic world
    d("world.height", "64");
    d("world.width", "96");
    d("world.frames", "24");
    d("world.sprites", "6");
    d("world.points_per_sprite", "3");
    d("world.sprite_kinds", "textured-square,gaussian-blob,flat-disc");
    d("world.motion_kinds", "linear,sinusoidal,circular");
    d("world.texture", "unique");
    d("world.min_sprite_size", "10");
    d("world.max_sprite_size", "20");
    d("world.max_speed", "0.75");
    d("world.occluder_bars", "0");          // in-world sweeping bars
    d("world.occluder_width", "19");
    d("world.seed", "1");
    // dataset build
    d("dataset.count", "8");
    d("dataset.seed", "1");
    // model sizes
    d("model.scales", "3");
    d("model.feat_channels", "64");
    d("model.enc_base", "24");
    d("model.corr_dim", "64");
    d("model.corr_hidden", "64");
    d("model.width", "128");
    d("model.heads", "4");
    d("model.temporal_blocks", "3");
    d("model.spatial_block_at", "2");
    d("model.mlp_mult", "2");
    // noise / path
    d("noise.sigma_coord", "0.25");
    d("noise.sigma_vis", "0.25");
    d("noise.sigma_conf", "0.25");
    d("noise.schedule", "linear-l");  // linear-l | constant | zero
    // training
    d("train.steps", "2000");
    d("train.batch", "2");
    d("train.window", "16");
    d("train.video_len", "24");
    d("train.points", "16");
    d("train.refine_steps", "4");
    d("train.path_steps", "1000");
    d("train.peak_lr", "5e-4");
    d("train.weight_decay", "0.001");
    d("train.grad_clip", "1.0");
    d("train.warmup_frac", "0.3");
    d("train.initial_div", "25");
    d("train.final_div", "10000");
    d("train.coord_loss_weight", "0.05");
    d("train.conf_clamp_px", "16");
    d("train.pool_clips", "16");
    d("train.checkpoint_every", "500");
    d("train.iterative_refinement", "true");
    d("train.window_dependent_prior", "true");
    d("train.noise_in_second_prior_first_half", "false");
    d("train.discriminative_mode", "false");
    d("train.conf_loss", "regression");  // regression | classification
    d("train.class_conf_threshold_px", "16");
    // sampling
    d("sample.refine_steps", "3");
    d("sample.path_steps", "3");
    d("sample.n", "1");
    d("sample.guide", "greedy");  // greedy | oracle | beam
    d("sample.beam_width", "2");
    // evaluation
    d("eval.occluder", "false");
    d("eval.occluder_width_at_512", "100");
    d("eval.directions", "lr,rl,tb,bt");
    d("eval.thresholds_px_at_512", "1,2,4,8,16");
    d("eval.exclude_query_frame", "true");
    // runtime
    d("workers", "2");
}

RunConfig RunConfig::from_file(const std::string& path) {
    RunConfig c;
    c.apply_file(path);
    return c;
}

RunConfig RunConfig::from_text(const std::string& text) {
    RunConfig c;
    c.apply_text(text);
    return c;
}

void RunConfig::apply_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("RunConfig: cannot open " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    apply_text(ss.str());
}

void RunConfig::apply_text(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("RunConfig: line " + std::to_string(lineno) +
                                     ": expected 'key = value'");
        set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
}

void RunConfig::set(const std::string& key, const std::string& value) {
    auto it = values_.find(key);
    if (it == values_.end()) throw std::runtime_error("RunConfig: unknown key '" + key + "'");
    it->second = value;
}

const std::string& RunConfig::get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw std::runtime_error("RunConfig: unknown key '" + key + "'");
    return it->second;
}

int RunConfig::get_int(const std::string& key) const {
    try {
        return std::stoi(get(key));
    } catch (const std::exception&) {
        throw std::runtime_error("RunConfig: key '" + key + "' is not an integer");
    }
}

double RunConfig::get_double(const std::string& key) const {
    try {
        return std::stod(get(key));
    } catch (const std::exception&) {
        throw std::runtime_error("RunConfig: key '" + key + "' is not a number");
    }
}

uint64_t RunConfig::get_u64(const std::string& key) const {
    try {
        return std::stoull(get(key));
    } catch (const std::exception&) {
        throw std::runtime_error("RunConfig: key '" + key + "' is not an unsigned integer");
    }
}

bool RunConfig::get_bool(const std::string& key) const {
    const std::string& v = get(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw std::runtime_error("RunConfig: key '" + key + "' is not a boolean");
}

std::string RunConfig::serialize() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
}

namespace {
std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else if (!isspace(static_cast<unsigned char>(c))) {
            cur += c;
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}
}  // namespace

WorldConfig RunConfig::world() const {
    WorldConfig w;
    w.height = get_int("world.height");
    w.width = get_int("world.width");
    w.frames = get_int("world.frames");
    w.sprites = get_int("world.sprites");
    w.points_per_sprite = get_int("world.points_per_sprite");
    w.sprite_kinds.clear();
    for (const auto& k : split_csv(get("world.sprite_kinds"))) {
        if (k == "textured-square") w.sprite_kinds.push_back(SpriteKind::TexturedSquare);
        else if (k == "gaussian-blob") w.sprite_kinds.push_back(SpriteKind::GaussianBlob);
        else if (k == "flat-disc") w.sprite_kinds.push_back(SpriteKind::FlatDisc);
        else throw std::runtime_error("RunConfig: unknown sprite kind '" + k + "'");
    }
    w.motion_kinds.clear();
    for (const auto& k : split_csv(get("world.motion_kinds"))) {
        if (k == "linear") w.motion_kinds.push_back(MotionKind::Linear);
        else if (k == "sinusoidal") w.motion_kinds.push_back(MotionKind::Sinusoidal);
        else if (k == "circular") w.motion_kinds.push_back(MotionKind::Circular);
        else throw std::runtime_error("RunConfig: unknown motion kind '" + k + "'");
    }
    const std::string tex = get("world.texture");
    if (tex == "unique") w.texture = TextureMode::Unique;
    else if (tex == "homogeneous") w.texture = TextureMode::Homogeneous;
    else throw std::runtime_error("RunConfig: unknown texture mode '" + tex + "'");
    w.min_sprite_size = get_double("world.min_sprite_size");
    w.max_sprite_size = get_double("world.max_sprite_size");
    w.max_speed = get_double("world.max_speed");
    w.seed = get_u64("world.seed");
    const int bars = get_int("world.occluder_bars");
    const SweepDirection dirs[4] = {SweepDirection::LeftToRight, SweepDirection::RightToLeft,
                                    SweepDirection::TopToBottom, SweepDirection::BottomToTop};
    for (int b = 0; b < bars; ++b) {
        OccluderBar bar;
        bar.direction = dirs[b % 4];
        bar.width_px = get_int("world.occluder_width");
        bar.start_frame = 0;
        bar.end_frame = -1;
        w.occluders.push_back(bar);
    }
    return w;
}

NoiseConfig RunConfig::noise() const {
    NoiseConfig n;
    n.sigma_coord = get_double("noise.sigma_coord");
    n.sigma_vis = get_double("noise.sigma_vis");
    n.sigma_conf = get_double("noise.sigma_conf");
    const std::string s = get("noise.schedule");
    if (s == "linear-l") n.schedule = VarianceSchedule::LinearL;
    else if (s == "constant") n.schedule = VarianceSchedule::Constant;
    else if (s == "zero") n.schedule = VarianceSchedule::Zero;
    else throw std::runtime_error("RunConfig: unknown noise schedule '" + s + "'");
    return n;
}

SweepDirection parse_direction(const std::string& s) {
    if (s == "lr") return SweepDirection::LeftToRight;
    if (s == "rl") return SweepDirection::RightToLeft;
    if (s == "tb") return SweepDirection::TopToBottom;
    if (s == "bt") return SweepDirection::BottomToTop;
    throw std::runtime_error("unknown sweep direction '" + s + "' (want lr|rl|tb|bt)");
}

std::string direction_name(SweepDirection d) {
    switch (d) {
        case SweepDirection::LeftToRight: return "lr";
        case SweepDirection::RightToLeft: return "rl";
        case SweepDirection::TopToBottom: return "tb";
        case SweepDirection::BottomToTop: return "bt";
    }
    return "?";
}

}  // namespace genpt
