#include "avsync/cli_core.hpp"

#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

namespace {

int fail(const std::string& msg) {
  std::cerr << "error: " << msg << "\n";
  return avsync::kExitConfig;
}

}  // namespace

int main(int argc, char** argv) {
  avsync::RunConfiguration config;

  CLI::App app{"AV lip-sync metrics, robustness probes and toy training"};
  app.require_subcommand(1);

  std::string extractor_name = "toy";
  std::vector<std::string> metric_names = {"AVS_u"};
  std::vector<std::string> probe_metric_names = {"avs_u", "sync_loss"};
  std::string axis_name = "shift";
  std::string style_name = "avh";

  auto add_manifest = [&](CLI::App* sub) {
    sub->add_option("--manifest", config.manifest_path,
                    "JSONL dataset manifest")
        ->required();
  };
  auto add_extractor = [&](CLI::App* sub) {
    sub->add_option("--extractor", extractor_name, "feature extractor kind")
        ->check(CLI::IsMember({"toy", "avhubert", "syncnet"}))
        ->capture_default_str();
    sub->add_option("--model-ref", config.extractor.model_ref,
                    "weights path, or seed:N[:syncnet] for a fresh toy");
    sub->add_option("--embed-dim", config.extractor.embed_dim,
                    "expected feature dimension (0 = kind default)");
  };
  auto add_out = [&](CLI::App* sub) {
    sub->add_option("--out", config.out_dir, "output directory")
        ->capture_default_str();
  };
  auto add_seed = [&](CLI::App* sub) {
    sub->add_option("--seed", config.seed, "run seed")->capture_default_str();
  };

  CLI::App* evaluate =
      app.add_subcommand("evaluate", "Score manifest clips and emit a report");
  add_manifest(evaluate);
  add_extractor(evaluate);
  add_out(evaluate);
  add_seed(evaluate);
  evaluate->add_option("--metrics", metric_names, "metrics to compute")
      ->delimiter(',')
      ->capture_default_str();
  evaluate->add_option("--format", config.format, "records|table|both")
      ->check(CLI::IsMember({"records", "table", "both"}))
      ->capture_default_str();
  evaluate->add_option("--workers", config.workers, "parallel clip workers")
      ->capture_default_str();
  evaluate->add_flag("--permissive-zero-norm", config.permissive_zero_norm,
                     "score zero-norm feature rows as 0 instead of failing");

  CLI::App* probe = app.add_subcommand(
      "probe", "Perturbation sweeps and the GT similarity scan");
  add_manifest(probe);
  add_extractor(probe);
  add_out(probe);
  add_seed(probe);
  probe->add_option("--axis", axis_name, "perturbation axis")
      ->check(CLI::IsMember({"shift", "rotation"}))
      ->capture_default_str();
  probe->add_option("--values", config.probe_values,
                    "axis settings; must be sorted and include 0")
      ->delimiter(',');
  probe->add_option("--metrics", probe_metric_names, "probe metrics")
      ->delimiter(',')
      ->capture_default_str();

  CLI::App* ablate = app.add_subcommand(
      "ablate", "Four-variant sync-loss ablation on fixture clips");
  add_manifest(ablate);
  add_out(ablate);
  add_seed(ablate);
  ablate->add_option("--steps", config.steps, "training steps per run")
      ->capture_default_str();
  ablate->add_option("--batch", config.batch, "segments per step")
      ->capture_default_str();
  ablate->add_option("--seeds", config.seeds, "training seeds")
      ->delimiter(',')
      ->capture_default_str();
  ablate->add_option("--epochs", config.epochs,
                     "conditioning-extractor training epochs")
      ->capture_default_str();

  CLI::App* train_toy =
      app.add_subcommand("train-toy", "Train the toy contrastive extractor");
  add_manifest(train_toy);
  add_out(train_toy);
  add_seed(train_toy);
  train_toy->add_option("--epochs", config.epochs, "training epochs")
      ->capture_default_str();
  train_toy->add_option("--style", style_name, "avh|syncnet")
      ->check(CLI::IsMember({"avh", "syncnet"}))
      ->capture_default_str();

  CLI::App* validate = app.add_subcommand(
      "validate-manifest", "Lint a manifest and print per-line diagnostics");
  add_manifest(validate);

  CLI::App* gen = app.add_subcommand(
      "gen-fixtures", "Render the synthetic talking-mouth fixture set");
  add_out(gen);
  add_seed(gen);
  gen->add_option("--classes", config.fixture_classes, "fixture classes")
      ->capture_default_str();
  gen->add_option("--clips-per-class", config.fixture_clips_per_class,
                  "clips per class")
      ->capture_default_str();
  gen->add_option("--frames", config.fixture_frames, "frames per clip")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : avsync::kExitConfig;
  }

  if (!avsync::parse_extractor_kind(extractor_name, config.extractor.kind))
    return fail("unknown extractor kind: " + extractor_name);
  config.metrics.clear();
  for (const std::string& name : metric_names) {
    avsync::Metric m;
    if (!avsync::parse_metric(name, m)) return fail("unknown metric: " + name);
    config.metrics.push_back(m);
  }
  config.probe_metrics.clear();
  for (const std::string& name : probe_metric_names) {
    avsync::ProbeMetric m;
    if (!avsync::parse_probe_metric(name, m))
      return fail("unknown probe metric: " + name);
    config.probe_metrics.push_back(m);
  }
  config.probe_axis = axis_name == "rotation" ? avsync::ProbeAxis::rotation_deg
                                              : avsync::ProbeAxis::shift_px;
  config.toy_style = style_name == "syncnet" ? avsync::ToyStyle::syncnet
                                             : avsync::ToyStyle::avh;

  config.command = app.get_subcommands().front()->get_name();
  return avsync::run_cli(config, std::cout, std::cerr);
}
