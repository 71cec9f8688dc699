#include "genpt/array_store.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

namespace genpt::array_store {

namespace {
static_assert(sizeof(float) == 4);

void write_f32_le(const std::filesystem::path& path, const Tensorf& t) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("array_store: cannot write " + path.string());
    if constexpr (std::endian::native == std::endian::little) {
        f.write(reinterpret_cast<const char*>(t.data()), std::streamsize(t.numel() * 4));
    } else {
        for (float x : t.v) {
            uint32_t u;
            std::memcpy(&u, &x, 4);
            const char b[4] = {char(u), char(u >> 8), char(u >> 16), char(u >> 24)};
            f.write(b, 4);
        }
    }
    if (!f) throw std::runtime_error("array_store: write failed for " + path.string());
}

Tensorf read_f32_le(const std::filesystem::path& path, const std::vector<int>& shape) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("array_store: cannot read " + path.string());
    Tensorf t(shape);
    if constexpr (std::endian::native == std::endian::little) {
        f.read(reinterpret_cast<char*>(t.data()), std::streamsize(t.numel() * 4));
    } else {
        for (float& x : t.v) {
            unsigned char b[4];
            f.read(reinterpret_cast<char*>(b), 4);
            const uint32_t u = uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 |
                               uint32_t(b[3]) << 24;
            std::memcpy(&x, &u, 4);
        }
    }
    if (!f) throw std::runtime_error("array_store: short read from " + path.string());
    return t;
}
}  // namespace

std::string sanitize_name(const std::string& name) {
    std::string out;
    out.reserve(name.size());
    for (char c : name) {
        if (c == '/')
            out += "__";
        else
            out += c;
    }
    return out;
}

void save(const std::filesystem::path& dir,
          const std::vector<std::pair<std::string, const Tensorf*>>& arrays,
          const std::map<std::string, std::string>& extra) {
    std::filesystem::create_directories(dir);
    nlohmann::ordered_json manifest;
    manifest["format"] = kFormat;
    manifest["dtype"] = "float32";
    manifest["byte_order"] = "little";
    manifest["coordinate_convention"] = kCoordinateConvention;
    auto arr = nlohmann::ordered_json::array();
    for (const auto& [name, tensor] : arrays) {
        const std::string file = sanitize_name(name) + ".f32";
        write_f32_le(dir / file, *tensor);
        arr.push_back({{"name", name}, {"file", file}, {"shape", tensor->shape}});
    }
    manifest["arrays"] = arr;
    for (const auto& [k, v] : extra) manifest["extra"][k] = v;
    std::ofstream mf(dir / "manifest.json", std::ios::trunc);
    if (!mf) throw std::runtime_error("array_store: cannot write manifest in " + dir.string());
    mf << manifest.dump(2) << "\n";
}

Loaded load(const std::filesystem::path& dir) {
    std::ifstream mf(dir / "manifest.json");
    if (!mf) throw std::runtime_error("array_store: no manifest in " + dir.string());
    nlohmann::json manifest = nlohmann::json::parse(mf);
    if (manifest.value("format", "") != kFormat)
        throw std::runtime_error("array_store: unsupported format in " + dir.string());
    Loaded out;
    for (const auto& entry : manifest.at("arrays")) {
        const std::string name = entry.at("name");
        const std::vector<int> shape = entry.at("shape").get<std::vector<int>>();
        out.arrays.emplace(name, read_f32_le(dir / entry.at("file").get<std::string>(), shape));
    }
    if (manifest.contains("extra"))
        for (const auto& [k, v] : manifest.at("extra").items()) out.extra[k] = v.get<std::string>();
    return out;
}

}  // namespace genpt::array_store
