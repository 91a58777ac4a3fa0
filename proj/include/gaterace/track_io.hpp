#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "gaterace/world.hpp"

namespace gaterace {

using Json = nlohmann::json;

Json quad_params_to_json(const QuadParams& p);
QuadParams quad_params_from_json(const Json& j);

Json track_to_json(const Track& track);
Track track_from_json(const Json& j);

Json scene_to_json(const Scene& scene);
Scene scene_from_json(const Json& j);

Track load_track(const std::filesystem::path& path);
void save_json(const std::filesystem::path& path, const Json& j);
Json load_json(const std::filesystem::path& path);

// Accepts a file path or the stem of a track shipped in the data directory
// (e.g. "s_shaped").
std::filesystem::path resolve_track_path(const std::string& name_or_path);
Track load_track_by_name(const std::string& name_or_path);

}  // namespace gaterace
