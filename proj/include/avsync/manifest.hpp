// JSONL dataset manifests: one clip record per line. Relative paths resolve
// against the manifest file's directory.
#pragma once

#include "avsync/common.hpp"

#include <optional>
#include <string>
#include <vector>

namespace avsync {

struct ManifestEntry {
  std::string clip_id;
  std::string video_path;                    // required
  std::optional<std::string> audio_path;     // WAV override/supplement
  std::optional<std::string> landmarks_path;
  std::optional<std::string> gt_video_path;  // needed by AVS_m/AVS_v/LMD
  std::optional<std::string> gt_landmarks_path;
  std::optional<int> class_id;               // needed by toy training/ablation
  int line = 0;                              // 1-based manifest line
};

// Parses strictly: malformed JSON or missing required fields raise
// ManifestError citing the line; an empty manifest is an error too.
std::vector<ManifestEntry> load_manifest(const std::string& path);

struct ManifestDiagnostic {
  int line = 0;  // 0 = file-level
  std::string severity;  // "error" | "warning"
  std::string field;
  std::string message;
};

// Non-throwing inspection used by `validate-manifest`; errors make the
// manifest unusable, warnings do not.
std::vector<ManifestDiagnostic> validate_manifest(const std::string& path);

void save_manifest(const std::string& path,
                   const std::vector<ManifestEntry>& entries);

}  // namespace avsync
