#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>

#include "sls/conformal.hpp"
#include "sls/region.hpp"

namespace sls {

struct ModelMetadata {
  std::uint64_t seed = 0;
  std::string config_hash;
};

struct LoadedModel {
  std::unique_ptr<PredictionRegion> region;
  std::optional<CalibrationResult> calibration;
  ModelMetadata meta;
};

/// Versioned model file: magic, format version, length-prefixed JSON header
/// (family, dims, net sizes, tau, metadata), then little-endian f64
/// parameter buffers in declaration order. Byte-identical for identical
/// models.
void save_model(const std::string& path, const PredictionRegion& region,
                const std::optional<CalibrationResult>& calibration,
                const ModelMetadata& meta);

LoadedModel load_model(const std::string& path);

}  // namespace sls
