#pragma once

// JSONL annotation manifests and the seeded synthetic stand-in dataset.

#include "endoclip/image.hpp"
#include "endoclip/rng.hpp"

#include <cstdint>
#include <filesystem>
#include <istream>
#include <optional>
#include <string>
#include <vector>

namespace endoclip {

struct ManifestRecord {
  std::string path;            // relative to the manifest directory unless absolute
  std::string classification;  // one of kClassNames, case-sensitive
  std::string type;
  std::string description;
  std::optional<std::string> description_en;
  int label = 0;

  friend bool operator==(const ManifestRecord&, const ManifestRecord&) = default;
};

struct DatasetManifest {
  std::filesystem::path base_dir;
  std::vector<ManifestRecord> records;

  std::filesystem::path resolve(const ManifestRecord& r) const;
  std::vector<int> labels() const;
  bool empty() const { return records.empty(); }
  std::size_t size() const { return records.size(); }
};

/// Parses one JSON object per non-blank line. Any malformed line, unknown
/// class or (when check_files) unreadable image raises DataError naming the
/// line number.
DatasetManifest parse_manifest(std::istream& in, const std::filesystem::path& base_dir,
                               bool check_files);
DatasetManifest ingest_manifest(const std::filesystem::path& path);

std::string serialize_manifest(const DatasetManifest& manifest);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);

/// Per-record prompt: the English description when present.
std::string record_prompt(const ManifestRecord& record);

struct SyntheticSpec {
  int per_class = 20;
  Index raw_size = 40;  // before black-border cropping and resizing
  std::uint64_t seed = 0;
  bool with_descriptions = true;
};

/// One class-specific geometric pattern on a tissue-coloured field inside a
/// random black border. Left/right classes are mirror images of each other.
Image render_synthetic(int class_id, Index raw_size, Rng& rng);

/// Writes PPM images and manifest.jsonl into `dir` and returns the manifest.
DatasetManifest make_synthetic_dataset(const std::filesystem::path& dir,
                                       const SyntheticSpec& spec);

}  // namespace endoclip
