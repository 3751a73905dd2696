#pragma once

// IIW-style dataset directories: <id>.png next to <id>.json.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "intrinsic/annotations.hpp"
#include "intrinsic/errors.hpp"
#include "intrinsic/model.hpp"
#include "intrinsic/png_io.hpp"

namespace intrinsic {

inline constexpr const char* kDatasetEnv = "IIW_DATASET";

struct DatasetEntry {
  std::string id;
  std::filesystem::path image;
  std::filesystem::path judgments;
};

inline std::optional<std::filesystem::path> dataset_root_from_env() {
  const char* v = std::getenv(kDatasetEnv);
  if (v == nullptr || *v == '\0') return std::nullopt;
  return std::filesystem::path(v);
}

// Entries sorted by file name. Accepts either the data directory itself or a
// release root containing data/.
inline std::vector<DatasetEntry> scan_dataset(const std::filesystem::path& root) {
  std::filesystem::path dir = root;
  if (std::filesystem::is_directory(root / "data")) dir = root / "data";
  if (!std::filesystem::is_directory(dir)) throw IoError(root.string(), "dataset directory not found");
  std::vector<DatasetEntry> entries;
  for (const auto& f : std::filesystem::directory_iterator(dir)) {
    if (!f.is_regular_file() || f.path().extension() != ".png") continue;
    auto json = f.path();
    json.replace_extension(".json");
    if (!std::filesystem::exists(json)) continue;
    entries.push_back({f.path().stem().string(), f.path(), json});
  }
  std::sort(entries.begin(), entries.end(),
            [](const DatasetEntry& a, const DatasetEntry& b) { return a.image.filename() < b.image.filename(); });
  return entries;
}

inline std::vector<std::string> entry_ids(const std::vector<DatasetEntry>& entries) {
  std::vector<std::string> ids;
  ids.reserve(entries.size());
  for (const auto& e : entries) ids.push_back(e.id);
  return ids;
}

inline AnnotatedImage load_entry(const DatasetEntry& e) {
  AnnotatedImage item{e.id, read_linear_png(e.image.string()), load_iiw_judgments(e.judgments).set};
  item.judgments.image_id = e.id;
  return item;
}

// Entries whose id is in `ids`, in dataset order.
inline std::vector<DatasetEntry> select_entries(const std::vector<DatasetEntry>& entries,
                                                const std::vector<std::string>& ids) {
  std::vector<std::string> sorted = ids;
  std::sort(sorted.begin(), sorted.end());
  std::vector<DatasetEntry> out;
  for (const auto& e : entries) {
    if (std::binary_search(sorted.begin(), sorted.end(), e.id)) out.push_back(e);
  }
  return out;
}

}  // namespace intrinsic
