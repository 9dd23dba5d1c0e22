#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "colorflow/encoder.hpp"
#include "colorflow/flow.hpp"

namespace colorflow {

// Line-oriented dataset manifest. Paths are stored relative to the manifest
// location; image paths double as entry ids and must be unique.
struct ManifestEntry {
  std::string image;
  std::string weights;
  std::uint64_t iterations = 0;
  float final_loss = 0.0f;
  std::uint64_t seed = 0;
};

struct ManifestFailure {
  std::string image;
  std::string message;
};

struct Manifest {
  int version = 1;
  FlowArch arch;
  std::vector<ManifestEntry> entries;
  std::vector<ManifestFailure> failures;
};

void save_manifest(const Manifest& m, const std::string& path);
Manifest load_manifest(const std::string& path);

// Resolves relative paths against the manifest's directory. Only successful
// entries are included.
FlowDataset manifest_to_dataset(const Manifest& m, const std::string& manifest_path);

}  // namespace colorflow
