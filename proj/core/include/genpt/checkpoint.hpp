#pragma once

#include <filesystem>
#include <map>

#include "genpt/model.hpp"
#include "genpt/runconfig.hpp"

namespace genpt::checkpoint {

inline constexpr const char* kKind = "genpt-checkpoint-v1";

// Directory layout: array-store manifest + one raw float32 file per named
// parameter, with the resolved run configuration and step embedded.
void save(const std::filesystem::path& dir, const Params<float>& params, const RunConfig& config,
          int step, const std::map<std::string, std::string>& metrics = {});

struct Loaded {
    Params<float> params;
    RunConfig config;
    int step = 0;
    std::map<std::string, std::string> metrics;
};

Loaded load(const std::filesystem::path& dir);

}  // namespace genpt::checkpoint
