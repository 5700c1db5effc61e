#include "prefkit/dataset.hpp"

#include <chrono>
#include <ctime>

#include <spdlog/spdlog.h>

namespace prefkit {

namespace fs = std::filesystem;

namespace {

void write_atomically(const fs::path& target, const std::string& content) {
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      fs::remove(tmp, ec);
      throw IoError("write failed for " + tmp.string());
    }
  }
  fs::rename(tmp, target);
}

std::string default_name(const fs::path& dir, const WriteOptions& options) {
  if (!options.name.empty()) return options.name;
  auto p = dir;
  if (!p.has_filename()) p = p.parent_path();
  return p.filename().string();
}

}  // namespace

std::string canonical_line(const nlohmann::json& record) { return canonical_dump(record); }

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string config_digest(const nlohmann::json& config) { return sha256_hex(canonical_dump(config)); }

DatasetManifest build_manifest(std::span<const std::string> lines, const WriteOptions& options) {
  std::vector<std::string> digests;
  digests.reserve(lines.size());
  for (const auto& line : lines) digests.push_back(sha256_hex(line));
  DatasetManifest m;
  m.name = options.name;
  m.record_count = lines.size();
  m.content_digest = combine_digests(std::move(digests));
  m.pipeline_config_digest = options.pipeline_config_digest;
  m.parent_manifests = options.parent_manifests;
  m.created_at = utc_timestamp();
  return m;
}

void write_manifest(const fs::path& dir, const DatasetManifest& manifest) {
  write_atomically(DatasetLayout{dir}.manifest(), nlohmann::json(manifest).dump(2) + "\n");
}

DatasetManifest write_lines(const fs::path& dir, std::span<const std::string> lines, const WriteOptions& options) {
  fs::create_directories(dir);
  const DatasetLayout layout{dir};
  std::string body;
  for (const auto& line : lines) {
    body += line;
    body += '\n';
  }
  // Stale manifest goes first so a failed write never leaves a manifest
  // describing other content.
  std::error_code ec;
  fs::remove(layout.manifest(), ec);
  write_atomically(layout.records(), body);
  WriteOptions named = options;
  named.name = default_name(dir, options);
  auto manifest = build_manifest(lines, named);
  write_manifest(dir, manifest);
  spdlog::debug("wrote dataset {} ({} records)", dir.string(), manifest.record_count);
  return manifest;
}

std::vector<std::string> read_lines(const fs::path& dir) {
  const DatasetLayout layout{dir};
  std::ifstream in(layout.records());
  if (!in) throw IoError("cannot open " + layout.records().string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) lines.push_back(std::move(line));
  }
  return lines;
}

DatasetManifest read_manifest(const fs::path& dir) {
  std::ifstream in(DatasetLayout{dir}.manifest());
  if (!in) throw IoError("no manifest in " + dir.string());
  return nlohmann::json::parse(in).get<DatasetManifest>();
}

bool verify_manifest(const fs::path& dir) {
  const auto manifest = read_manifest(dir);
  const auto lines = read_lines(dir);
  const auto rebuilt = build_manifest(lines, {});
  return manifest.record_count == rebuilt.record_count && manifest.content_digest == rebuilt.content_digest;
}

void copy_blobs(const fs::path& from, const fs::path& to) {
  const auto src = DatasetLayout{from}.blobs();
  if (!fs::is_directory(src)) return;
  const auto dst = DatasetLayout{to}.blobs();
  fs::create_directories(dst);
  for (const auto& entry : fs::directory_iterator(src)) {
    if (!entry.is_regular_file() || entry.path().extension() == ".tmp") continue;
    const auto target = dst / entry.path().filename();
    if (!fs::exists(target)) fs::copy_file(entry.path(), target);
  }
}

DatasetWriter::DatasetWriter(fs::path dir) : layout_{std::move(dir)} {
  fs::create_directories(layout_.dir);
  out_.open(layout_.records(), std::ios::binary | std::ios::app);
  if (!out_) throw IoError("cannot open " + layout_.records().string() + " for appending");
}

void DatasetWriter::append_line(const std::string& line) {
  std::lock_guard lock(mutex_);
  out_ << line << '\n';
  out_.flush();
  if (!out_) throw IoError("append failed for " + layout_.records().string());
}

DatasetManifest DatasetWriter::finalize(const WriteOptions& options) {
  std::lock_guard lock(mutex_);
  out_.close();
  const auto lines = read_lines(layout_.dir);
  WriteOptions named = options;
  named.name = default_name(layout_.dir, options);
  auto manifest = build_manifest(lines, named);
  write_manifest(layout_.dir, manifest);
  return manifest;
}

}  // namespace prefkit
