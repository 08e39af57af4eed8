#pragma once

#include <filesystem>
#include <string_view>

#include "capsfield/model/model.hpp"

namespace capsfield::model {

inline constexpr std::string_view kCheckpointVersion = "capsfield-ckpt-1";

/// Container layout: magic "CFCK", u32 little-endian header length, a JSON
/// header (version, model config, vocabulary, seed, epoch, tensor names and
/// shapes), then every parameter tensor as a CFT2 record in header order.
void save_checkpoint(const CapsFieldModel& model, const std::filesystem::path& path);

/// Throws FormatError on a bad magic or a corrupt body and
/// CompatibilityError on a version mismatch.
CapsFieldModel load_checkpoint(const std::filesystem::path& path);

}  // namespace capsfield::model
