#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include <spdlog/spdlog.h>

#include "prefkit/dataset.hpp"
#include "prefkit/image.hpp"
#include "prefkit/types.hpp"

namespace prefkit {

// Digest of (normalized prompt text, image bytes). Matching is exact on
// this digest: text is lowercased and whitespace-collapsed, images are
// hashed byte-for-byte in order. Throws ImageError for unresolvable images.
std::string sample_digest(const ContentKey& key, const ImageStore& images);

using BenchmarkIndex = std::unordered_set<std::string>;

template <class Record>
BenchmarkIndex build_benchmark_index(std::span<const Record> records, const ImageStore& images) {
  BenchmarkIndex index;
  for (const auto& r : records) index.insert(sample_digest(content_key(r), images));
  return index;
}

struct DecontaminationReport {
  std::size_t input_count = 0;
  std::size_t removed = 0;
  std::size_t unresolvable = 0;
  std::vector<std::string> removed_ids;
  std::vector<std::string> unresolvable_ids;
};

void to_json(nlohmann::json& j, const DecontaminationReport& r);

template <class Record>
struct Decontaminated {
  std::vector<Record> kept;
  DecontaminationReport report;
};

template <class Record>
Decontaminated<Record> decontaminate(std::span<const Record> records, const BenchmarkIndex& index,
                                     const ImageStore& images) {
  Decontaminated<Record> out;
  out.report.input_count = records.size();
  for (const auto& r : records) {
    std::string digest;
    try {
      digest = sample_digest(content_key(r), images);
    } catch (const ImageError& e) {
      spdlog::warn("decontaminate: skipping '{}': {}", record_id(r), e.what());
      ++out.report.unresolvable;
      out.report.unresolvable_ids.push_back(record_id(r));
      continue;
    }
    if (index.contains(digest)) {
      ++out.report.removed;
      out.report.removed_ids.push_back(record_id(r));
    } else {
      out.kept.push_back(r);
    }
  }
  return out;
}

// Dataset-to-dataset form; the output manifest names the input as parent.
template <class Record>
std::pair<DatasetManifest, DecontaminationReport> decontaminate_dataset(const std::filesystem::path& in_dir,
                                                                        const std::filesystem::path& out_dir,
                                                                        const BenchmarkIndex& index,
                                                                        const ImageStore& images) {
  const auto records = read_records<Record>(in_dir);
  const auto parent = read_manifest(in_dir);
  auto result = decontaminate(std::span<const Record>(records), index, images);
  WriteOptions options;
  options.parent_manifests = {parent.name};
  options.pipeline_config_digest = parent.pipeline_config_digest;
  auto manifest = write_dataset(out_dir, result.kept, options);
  return {manifest, result.report};
}

}  // namespace prefkit
