#include "genpt/checkpoint.hpp"

#include "genpt/array_store.hpp"
#include "genpt/train.hpp"

namespace genpt::checkpoint {

void save(const std::filesystem::path& dir, const Params<float>& params, const RunConfig& config,
          int step, const std::map<std::string, std::string>& metrics) {
    std::vector<std::pair<std::string, const Tensorf*>> arrays;
    arrays.reserve(params.names.size());
    for (const auto& name : params.names) arrays.emplace_back(name, &params.at(name));
    std::map<std::string, std::string> extra;
    extra["kind"] = kKind;
    extra["step"] = std::to_string(step);
    extra["config"] = config.serialize();
    for (const auto& [k, v] : metrics) extra["metric." + k] = v;
    array_store::save(dir, arrays, extra);
}

Loaded load(const std::filesystem::path& dir) {
    array_store::Loaded raw = array_store::load(dir);
    auto kind = raw.extra.find("kind");
    if (kind == raw.extra.end() || kind->second != kKind)
        throw std::runtime_error("checkpoint: " + dir.string() + " is not a " + kKind +
                                 " container");
    Loaded out;
    out.config = RunConfig::from_text(raw.extra.at("config"));
    out.step = std::stoi(raw.extra.at("step"));
    for (const auto& [k, v] : raw.extra)
        if (k.starts_with("metric.")) out.metrics[k.substr(7)] = v;

    const ModelConfig mc = TrainConfig::from_run(out.config).model;
    out.params = build_params(mc);
    for (const auto& name : out.params.names) {
        auto it = raw.arrays.find(name);
        if (it == raw.arrays.end())
            throw std::runtime_error("checkpoint: missing array '" + name + "'");
        if (it->second.shape != out.params.at(name).shape)
            throw std::runtime_error("checkpoint: shape mismatch for '" + name + "'");
        out.params.at(name) = std::move(it->second);
    }
    return out;
}

}  // namespace genpt::checkpoint
