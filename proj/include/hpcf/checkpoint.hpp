#pragma once

#include <filesystem>
#include <memory>

#include "hpcf/model.hpp"

namespace hpcf {

/// Flat binary archive: magic + version, a JSON header with the model config
/// and per-tensor metadata, then raw little-endian float64 payloads in header
/// order. Batch-norm running statistics ship alongside the learnable weights.
void save_checkpoint(const std::filesystem::path& path, const ChangeDetector& model);

std::unique_ptr<ChangeDetector> load_checkpoint(const std::filesystem::path& path);

/// Reads just the config (cheap header parse).
ModelConfig checkpoint_config(const std::filesystem::path& path);

}  // namespace hpcf
