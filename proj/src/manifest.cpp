#include "colorflow/manifest.hpp"

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <set>
#include <sstream>

#include "colorflow/errors.hpp"

namespace colorflow {
namespace {

constexpr const char* kHeader = "colorflow-manifest";

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t pos = 0;
  while (true) {
    const std::size_t tab = line.find('\t', pos);
    if (tab == std::string::npos) {
      fields.push_back(line.substr(pos));
      break;
    }
    fields.push_back(line.substr(pos, tab - pos));
    pos = tab + 1;
  }
  return fields;
}

void check_path_field(const std::string& s, const std::string& what) {
  if (s.empty()) throw ValidationError("manifest: empty " + what);
  if (s.find('\t') != std::string::npos || s.find('\n') != std::string::npos)
    throw ValidationError("manifest: " + what + " contains tab or newline");
}

}  // namespace

void save_manifest(const Manifest& m, const std::string& path) {
  std::set<std::string> ids;
  for (const auto& e : m.entries) {
    check_path_field(e.image, "image path");
    check_path_field(e.weights, "weights path");
    if (!ids.insert(e.image).second)
      throw ValidationError("manifest: duplicate image id '" + e.image + "'");
  }

  std::string out;
  char buf[128];
  std::snprintf(buf, sizeof(buf), "%s %d\n", kHeader, m.version);
  out += buf;
  std::snprintf(buf, sizeof(buf), "hidden %d\n", m.arch.hidden);
  out += buf;
  for (const auto& e : m.entries) {
    std::snprintf(buf, sizeof(buf), "\t%" PRIu64 "\t%a\t%" PRIu64 "\n",
                  e.iterations, double(e.final_loss), e.seed);
    out += "entry\t" + e.image + "\t" + e.weights + buf;
  }
  for (const auto& f : m.failures) {
    check_path_field(f.image, "image path");
    out += "failed\t" + f.image + "\t" + f.message + "\n";
  }

  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw IoError("cannot write '" + path + "'");
  file << out;
  if (!file.flush()) throw IoError("write failed: '" + path + "'");
}

Manifest load_manifest(const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw IoError("cannot open '" + path + "'");
  Manifest m;
  std::string line;

  if (!std::getline(file, line))
    throw ValidationError("manifest: empty file '" + path + "'");
  {
    std::istringstream hdr(line);
    std::string tag;
    hdr >> tag >> m.version;
    if (tag != kHeader || m.version != 1)
      throw ValidationError("manifest: bad header in '" + path + "'");
  }
  if (!std::getline(file, line))
    throw ValidationError("manifest: missing arch line in '" + path + "'");
  {
    std::istringstream hdr(line);
    std::string tag;
    hdr >> tag >> m.arch.hidden;
    if (tag != "hidden" || m.arch.hidden < 1)
      throw ValidationError("manifest: bad arch line in '" + path + "'");
  }

  std::set<std::string> ids;
  while (std::getline(file, line)) {
    if (line.empty()) continue;
    const auto fields = split_tabs(line);
    if (fields[0] == "entry") {
      if (fields.size() != 6)
        throw ValidationError("manifest: malformed entry line in '" + path + "'");
      ManifestEntry e;
      e.image = fields[1];
      e.weights = fields[2];
      e.iterations = std::strtoull(fields[3].c_str(), nullptr, 10);
      e.final_loss = std::strtof(fields[4].c_str(), nullptr);
      e.seed = std::strtoull(fields[5].c_str(), nullptr, 10);
      if (!ids.insert(e.image).second)
        throw ValidationError("manifest: duplicate image id '" + e.image + "'");
      m.entries.push_back(std::move(e));
    } else if (fields[0] == "failed") {
      if (fields.size() < 3)
        throw ValidationError("manifest: malformed failed line in '" + path + "'");
      m.failures.push_back({fields[1], fields[2]});
    } else {
      throw ValidationError("manifest: unknown record '" + fields[0] + "' in '" +
                            path + "'");
    }
  }
  return m;
}

FlowDataset manifest_to_dataset(const Manifest& m, const std::string& manifest_path) {
  const std::filesystem::path base = std::filesystem::path(manifest_path).parent_path();
  FlowDataset ds;
  ds.arch = m.arch;
  ds.entries.reserve(m.entries.size());
  for (const auto& e : m.entries) {
    FlowDatasetEntry entry;
    entry.image_path = (base / e.image).string();
    entry.weights_path = (base / e.weights).string();
    entry.iterations = e.iterations;
    entry.final_loss = e.final_loss;
    entry.seed = e.seed;
    ds.entries.push_back(std::move(entry));
  }
  return ds;
}

}  // namespace colorflow
