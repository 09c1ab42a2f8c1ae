#pragma once

#include <cstdint>
#include <string>

#include "lcnn/model.hpp"

namespace lcnn {

// LCNM container: magic, format version, architecture name + overrides,
// preprocessing manifest, named parameter blobs as 32-bit little-endian
// reals, optional solver state, CRC32 trailer. Saving is deterministic:
// the same model always produces byte-identical files.

inline constexpr uint32_t kModelFormatVersion = 1;
inline constexpr const char* kPixelScaling = "1/255";
inline constexpr const char* kCropPolicy = "center-128";

void save_model(const NetworkModel& model, const std::string& path);
NetworkModel load_model(const std::string& path);

// checkpoint = model + iteration counter + momentum buffers
void save_checkpoint(const NetworkModel& model, long long iter, const std::string& path);

struct Checkpoint {
    NetworkModel model;
    long long iter = 0;
};

Checkpoint load_checkpoint(const std::string& path);

uint32_t crc32(const uint8_t* data, size_t len);

}  // namespace lcnn
