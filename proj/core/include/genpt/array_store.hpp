#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "genpt/tensor.hpp"

namespace genpt {

// Directory container for named float arrays: a JSON manifest recording
// shapes, dtype, byte order and the coordinate convention, plus one raw
// little-endian float32 file per array. Array names may contain '/', which is
// replaced by '__' in file names.
namespace array_store {

inline constexpr const char* kFormat = "genpt-arrays-v1";
inline constexpr const char* kCoordinateConvention =
    "x=column, y=row, origin=top-left pixel center, normalized range [-1,1] per axis";

void save(const std::filesystem::path& dir,
          const std::vector<std::pair<std::string, const Tensorf*>>& arrays,
          const std::map<std::string, std::string>& extra = {});

struct Loaded {
    std::map<std::string, Tensorf> arrays;
    std::map<std::string, std::string> extra;
};

Loaded load(const std::filesystem::path& dir);

std::string sanitize_name(const std::string& name);

}  // namespace array_store

}  // namespace genpt
