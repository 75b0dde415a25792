#include "avsync/manifest.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <set>

namespace avsync {

namespace {

using nlohmann::json;

const std::set<std::string> kKnownKeys = {
    "clip_id",       "video_path",        "audio_path", "landmarks_path",
    "gt_video_path", "gt_landmarks_path", "class_id"};

std::string resolve_path(const std::string& base_dir, const std::string& p) {
  std::filesystem::path path(p);
  if (path.is_absolute() || base_dir.empty()) return p;
  return (std::filesystem::path(base_dir) / path).lexically_normal().string();
}

// Parses one line into entry; appends diagnostics instead of throwing.
bool parse_line(const std::string& text, const std::string& base_dir, int line,
                ManifestEntry& entry, std::vector<ManifestDiagnostic>& diags) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) {
    diags.push_back({line, "error", "", "line is not valid JSON"});
    return false;
  }
  if (!j.is_object()) {
    diags.push_back({line, "error", "", "line is not a JSON object"});
    return false;
  }
  bool ok = true;
  auto need_string = [&](const char* key, std::string& out) {
    if (!j.contains(key) || !j[key].is_string() ||
        j[key].get<std::string>().empty()) {
      diags.push_back({line, "error", key,
                       std::string("missing or empty required field '") + key +
                           "'"});
      ok = false;
      return;
    }
    out = j[key].get<std::string>();
  };
  auto optional_string = [&](const char* key, std::optional<std::string>& out) {
    if (!j.contains(key)) return;
    if (!j[key].is_string()) {
      diags.push_back({line, "error", key,
                       std::string("field '") + key + "' must be a string"});
      ok = false;
      return;
    }
    out = resolve_path(base_dir, j[key].get<std::string>());
  };

  need_string("clip_id", entry.clip_id);
  std::string video;
  need_string("video_path", video);
  if (!video.empty()) entry.video_path = resolve_path(base_dir, video);
  optional_string("audio_path", entry.audio_path);
  optional_string("landmarks_path", entry.landmarks_path);
  optional_string("gt_video_path", entry.gt_video_path);
  optional_string("gt_landmarks_path", entry.gt_landmarks_path);
  if (j.contains("class_id")) {
    if (!j["class_id"].is_number_integer()) {
      diags.push_back({line, "error", "class_id", "class_id must be an integer"});
      ok = false;
    } else {
      entry.class_id = j["class_id"].get<int>();
    }
  }
  for (const auto& [key, value] : j.items())
    if (!kKnownKeys.count(key))
      diags.push_back({line, "warning", key, "unknown field '" + key + "'"});
  entry.line = line;
  return ok;
}

std::vector<ManifestDiagnostic> scan(const std::string& path,
                                     std::vector<ManifestEntry>* entries) {
  std::vector<ManifestDiagnostic> diags;
  std::ifstream in(path);
  if (!in) {
    diags.push_back({0, "error", "", "cannot open manifest: " + path});
    return diags;
  }
  const std::string base_dir = std::filesystem::path(path).parent_path().string();

  std::set<std::string> seen_ids;
  std::string text;
  int line = 0, valid = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    ManifestEntry entry;
    if (!parse_line(text, base_dir, line, entry, diags)) continue;
    if (!seen_ids.insert(entry.clip_id).second)
      diags.push_back({line, "warning", "clip_id",
                       "duplicate clip_id '" + entry.clip_id + "'"});
    ++valid;
    if (entries) entries->push_back(std::move(entry));
  }
  if (line == 0 || valid == 0)
    diags.push_back({0, "error", "", "manifest has no clip records"});
  return diags;
}

}  // namespace

std::vector<ManifestEntry> load_manifest(const std::string& path) {
  std::vector<ManifestEntry> entries;
  const std::vector<ManifestDiagnostic> diags = scan(path, &entries);
  for (const ManifestDiagnostic& d : diags)
    if (d.severity == "error")
      throw ManifestError(path + ":" + std::to_string(d.line) + ": " + d.message);
  return entries;
}

std::vector<ManifestDiagnostic> validate_manifest(const std::string& path) {
  return scan(path, nullptr);
}

void save_manifest(const std::string& path,
                   const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DecodeError("cannot write manifest: " + path);
  for (const ManifestEntry& e : entries) {
    json j;
    j["clip_id"] = e.clip_id;
    j["video_path"] = e.video_path;
    if (e.audio_path) j["audio_path"] = *e.audio_path;
    if (e.landmarks_path) j["landmarks_path"] = *e.landmarks_path;
    if (e.gt_video_path) j["gt_video_path"] = *e.gt_video_path;
    if (e.gt_landmarks_path) j["gt_landmarks_path"] = *e.gt_landmarks_path;
    if (e.class_id) j["class_id"] = *e.class_id;
    out << j.dump() << "\n";
  }
}

}  // namespace avsync
