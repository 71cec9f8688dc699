#pragma once

#include <map>
#include <string>

#include "genpt/synth.hpp"
#include "genpt/types.hpp"

namespace genpt {

struct ModelConfig;
struct TrainConfig;

// Flat key-value configuration with dotted section names. Every key has a
// default; unknown keys are rejected. Values are stored as strings and
// converted by the typed getters, so parse -> serialize -> parse is lossless.
class RunConfig {
public:
    RunConfig();  // defaults for every key

    static RunConfig from_file(const std::string& path);
    static RunConfig from_text(const std::string& text);

    void apply_file(const std::string& path);
    void apply_text(const std::string& text);
    void set(const std::string& key, const std::string& value);

    const std::string& get(const std::string& key) const;
    int get_int(const std::string& key) const;
    double get_double(const std::string& key) const;
    bool get_bool(const std::string& key) const;
    uint64_t get_u64(const std::string& key) const;

    std::string serialize() const;  // canonical order, one "key = value" per line
    const std::map<std::string, std::string>& entries() const { return values_; }

    WorldConfig world() const;
    NoiseConfig noise() const;

private:
    std::map<std::string, std::string> values_;
};

SweepDirection parse_direction(const std::string& s);
std::string direction_name(SweepDirection d);

}  // namespace genpt
