#pragma once

#include <filesystem>
#include <fstream>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "prefkit/digest.hpp"
#include "prefkit/errors.hpp"
#include "prefkit/types.hpp"

namespace prefkit {

// <dir>/records.jsonl, <dir>/manifest.json, optional <dir>/blobs/<digest>.
struct DatasetLayout {
  std::filesystem::path dir;

  std::filesystem::path records() const { return dir / "records.jsonl"; }
  std::filesystem::path manifest() const { return dir / "manifest.json"; }
  std::filesystem::path blobs() const { return dir / "blobs"; }
};

struct WriteOptions {
  std::string name;  // defaults to the directory name
  std::string pipeline_config_digest;
  std::vector<std::string> parent_manifests;
};

std::string canonical_line(const nlohmann::json& record);

// Writes canonical lines, then the manifest; both via temp file + rename.
DatasetManifest write_lines(const std::filesystem::path& dir, std::span<const std::string> lines,
                            const WriteOptions& options);

std::vector<std::string> read_lines(const std::filesystem::path& dir);
DatasetManifest read_manifest(const std::filesystem::path& dir);

// Manifest describing the records currently on disk.
DatasetManifest build_manifest(std::span<const std::string> lines, const WriteOptions& options);
void write_manifest(const std::filesystem::path& dir, const DatasetManifest& manifest);

// True iff the stored content digest and count match the records file.
bool verify_manifest(const std::filesystem::path& dir);

// Copies blobs of `from` missing in `to`. No-op when `from` has none.
void copy_blobs(const std::filesystem::path& from, const std::filesystem::path& to);

std::string utc_timestamp();
std::string config_digest(const nlohmann::json& config);

// Validates every record first; a violation throws RecordError carrying the
// index and nothing is written.
template <class Record>
DatasetManifest write_dataset(const std::filesystem::path& dir, std::span<const Record> records,
                              const WriteOptions& options = {}) {
  std::vector<std::string> lines;
  lines.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    try {
      validate(records[i]);
    } catch (const ValidationError& e) {
      throw RecordError(i, e.what());
    }
    lines.push_back(canonical_line(nlohmann::json(records[i])));
  }
  return write_lines(dir, lines, options);
}

template <class Record>
DatasetManifest write_dataset(const std::filesystem::path& dir, const std::vector<Record>& records,
                              const WriteOptions& options = {}) {
  return write_dataset(dir, std::span<const Record>(records), options);
}

template <class Record>
Record parse_record(const std::string& line) {
  return nlohmann::json::parse(line).get<Record>();
}

template <class Record>
std::vector<Record> read_records(const std::filesystem::path& dir) {
  std::vector<Record> out;
  std::size_t index = 0;
  for (const auto& line : read_lines(dir)) {
    try {
      out.push_back(parse_record<Record>(line));
    } catch (const nlohmann::json::exception& e) {
      throw RecordError(index, e.what());
    }
    ++index;
  }
  return out;
}

// Reads a bare JSONL file (no manifest), e.g. prompt or benchmark inputs.
// A directory argument is read as a dataset.
template <class Record>
std::vector<Record> read_jsonl(const std::filesystem::path& path) {
  if (std::filesystem::is_directory(path)) return read_records<Record>(path);
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<Record> out;
  std::string line;
  std::size_t index = 0;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(parse_record<Record>(line));
    } catch (const nlohmann::json::exception& e) {
      throw RecordError(index, e.what());
    }
    ++index;
  }
  return out;
}

// Single-writer appender for long runs; the manifest is rebuilt from the
// full records file on finalize(). Thread-safe append.
class DatasetWriter {
 public:
  explicit DatasetWriter(std::filesystem::path dir);

  template <class Record>
  void append(const Record& record) {
    validate(record);
    append_line(canonical_line(nlohmann::json(record)));
  }
  void append_line(const std::string& line);
  DatasetManifest finalize(const WriteOptions& options);

 private:
  DatasetLayout layout_;
  std::mutex mutex_;
  std::ofstream out_;
};

}  // namespace prefkit
