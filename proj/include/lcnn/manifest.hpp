#pragma once

#include <optional>
#include <string>
#include <vector>

#include "lcnn/align.hpp"

namespace lcnn {

// One dataset record: image path, integer identity label, and optionally the
// five landmark points (lx ly rx ry nx ny mlx mly mrx mry).
struct ManifestEntry {
    std::string path;
    int label = 0;
    std::optional<Landmarks5> landmarks;
};

// Tab-separated, one record per line; lines starting with '#' are ignored.
std::vector<ManifestEntry> read_manifest(const std::string& path);

void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries);

}  // namespace lcnn
