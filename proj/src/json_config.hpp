#pragma once

#include "json.hpp"
#include "satfuse/synthdata.hpp"

namespace satfuse {

// Shared by the dataset manifest and the checkpoint metadata block.
nlohmann::json scene_config_to_json(const SceneConfig& c);
SceneConfig scene_config_from_json(const nlohmann::json& j);

} // namespace satfuse
