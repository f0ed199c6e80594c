#pragma once

#include "hydro/model.hpp"

#include <filesystem>
#include <string>

namespace hydro::model {

inline constexpr int kCheckpointVersion = 1;

/// One JSON document: format tag and version, backbone id and checksum, input side,
/// normalization stats, head config and parameters, training history. Backbone weights are
/// not stored; they are regenerated from the id and verified against the checksum on load.
std::string serialize_checkpoint(const TrainedModel& model);
TrainedModel parse_checkpoint(const std::string& text);

void save_checkpoint(const TrainedModel& model, const std::filesystem::path& path);
TrainedModel load_checkpoint(const std::filesystem::path& path);

}  // namespace hydro::model
