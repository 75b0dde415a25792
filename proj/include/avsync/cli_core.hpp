// Command implementations behind the avsync CLI binary, exposed as a library
// so the tests can drive them without spawning processes.
#pragma once

#include "avsync/fixtures.hpp"
#include "avsync/harness.hpp"
#include "avsync/manifest.hpp"
#include "avsync/metrics.hpp"
#include "avsync/probes.hpp"
#include "avsync/report.hpp"

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

namespace avsync {

// Exit-code contract: 0 = all clips succeeded, 2 = some clips failed,
// 1 = configuration/manifest error (including every clip failing).
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitPartial = 2;

struct RunConfiguration {
  std::string command;  // evaluate|probe|ablate|train-toy|validate-manifest|gen-fixtures
  std::string manifest_path;
  ExtractorSpec extractor;
  std::vector<Metric> metrics = {Metric::avs_u};
  std::string out_dir = "out";
  std::uint64_t seed = 7;
  std::string format = "both";  // records|table|both
  int workers = 1;
  bool permissive_zero_norm = false;

  // probe
  ProbeAxis probe_axis = ProbeAxis::shift_px;
  std::vector<double> probe_values;  // empty -> per-axis defaults
  std::vector<ProbeMetric> probe_metrics = {ProbeMetric::avs_u,
                                            ProbeMetric::sync_loss};

  // ablate
  Index steps = 150;
  Index batch = 2;
  std::vector<std::uint64_t> seeds = {1, 2, 3};

  // train-toy
  Index epochs = 50;
  ToyStyle toy_style = ToyStyle::avh;

  // gen-fixtures
  int fixture_classes = 4;
  int fixture_clips_per_class = 2;
  Index fixture_frames = 50;
};

bool parse_extractor_kind(const std::string& name, ExtractorKind& out);

// Builds the evaluation report without touching the filesystem for output
// (still reads the clips); used by both cmd_evaluate and the report tests.
EvaluationReport build_evaluation_report(const RunConfiguration& config);

int cmd_evaluate(const RunConfiguration& config, std::ostream& out);
int cmd_probe(const RunConfiguration& config, std::ostream& out);
int cmd_ablate(const RunConfiguration& config, std::ostream& out);
int cmd_train_toy(const RunConfiguration& config, std::ostream& out);
int cmd_validate_manifest(const RunConfiguration& config, std::ostream& out);
int cmd_gen_fixtures(const RunConfiguration& config, std::ostream& out);

// Dispatches on config.command; avsync::Error and filesystem failures map to
// exit code 1 with the message on `err`.
int run_cli(const RunConfiguration& config, std::ostream& out, std::ostream& err);

}  // namespace avsync
