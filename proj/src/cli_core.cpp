#include "avsync/cli_core.hpp"

#include <json.hpp>

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <thread>

namespace avsync {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

std::string g6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw DecodeError("cannot open for write: " + path);
  out << content;
}

bool needs_gt(Metric m) {
  return m == Metric::avs_m || m == Metric::avs_v || m == Metric::lmd;
}

bool needs_audio(Metric m) {
  return m == Metric::avs_u || m == Metric::avs_m || m == Metric::lse_c ||
         m == Metric::lse_d;
}

bool needs_extractor(Metric m) { return m != Metric::lmd; }

std::string metrics_csv(const std::vector<Metric>& metrics) {
  std::string out;
  for (const Metric m : metrics) {
    if (!out.empty()) out += ",";
    out += metric_name(m);
  }
  return out;
}

std::vector<std::pair<std::string, std::string>> base_params(
    const RunConfiguration& config) {
  return {{"manifest", config.manifest_path},
          {"extractor", extractor_kind_name(config.extractor.kind)},
          {"model_ref", config.extractor.model_ref},
          {"embed_dim", std::to_string(config.extractor.embed_dim)},
          {"seed", std::to_string(config.seed)}};
}

ClipRecord evaluate_clip(const ManifestEntry& entry,
                         const RunConfiguration& config) {
  bool want_gt = false, want_audio = false;
  for (const Metric m : config.metrics) {
    want_gt = want_gt || needs_gt(m);
    want_audio = want_audio || needs_audio(m);
  }

  const MediaClip clip = load_clip(entry.video_path, entry.audio_path);
  std::optional<LandmarkTrack> lm;
  if (entry.landmarks_path) lm = load_landmarks(*entry.landmarks_path);
  const MouthTrack track = crop_mouth(clip, lm);
  MelSpectrogram mel;
  if (want_audio) mel = mel_spectrogram(clip.audio, clip.sample_rate);

  std::optional<MouthTrack> gt_track;
  std::optional<LandmarkTrack> gt_lm;
  if (want_gt) {
    const MediaClip gt = load_clip(*entry.gt_video_path);
    if (entry.gt_landmarks_path) gt_lm = load_landmarks(*entry.gt_landmarks_path);
    gt_track = crop_mouth(gt, gt_lm);
  }

  MetricOptions opt;
  opt.extractor = config.extractor;
  opt.zero_norm = config.permissive_zero_norm ? ZeroNormPolicy::permissive
                                              : ZeroNormPolicy::strict;
  opt.clip_id = entry.clip_id;

  ClipRecord rec;
  rec.clip_id = entry.clip_id;
  std::optional<LseScores> lse;  // computed once, feeds both LSE rows
  for (const Metric m : config.metrics) {
    switch (m) {
      case Metric::avs_u:
        rec.scores.push_back(avs_u(track, mel, opt));
        break;
      case Metric::avs_m:
        rec.scores.push_back(avs_m(track, *gt_track, mel, opt));
        break;
      case Metric::avs_v:
        rec.scores.push_back(avs_v(track, *gt_track, opt));
        break;
      case Metric::lmd: {
        // Manifest landmarks map into crop space when both sides have them;
        // otherwise both sides go through the moment fitter so the two
        // tracks stay comparable.
        LandmarkTrack a, b;
        if (lm && gt_lm) {
          a = crop_space_landmarks(*lm, track);
          b = crop_space_landmarks(*gt_lm, *gt_track);
        } else {
          a = fit_landmark_track(track.crops);
          b = fit_landmark_track(gt_track->crops);
        }
        rec.scores.push_back(lmd(a, b, false, entry.clip_id));
        break;
      }
      case Metric::lse_c:
      case Metric::lse_d:
        if (!lse) lse = lse_cd(track, mel, opt);
        rec.scores.push_back(m == Metric::lse_c ? lse->lse_c : lse->lse_d);
        break;
    }
  }
  return rec;
}

std::vector<PairedClip> load_paired_clips(const std::string& manifest_path,
                                          bool require_class) {
  const std::vector<ManifestEntry> entries = load_manifest(manifest_path);
  std::vector<PairedClip> paired;
  for (const ManifestEntry& entry : entries) {
    if (require_class && !entry.class_id)
      throw ManifestError(manifest_path + ":" + std::to_string(entry.line) +
                          ": clip '" + entry.clip_id +
                          "' is missing class_id (required for training)");
    const MediaClip clip = load_clip(entry.video_path, entry.audio_path);
    std::optional<LandmarkTrack> lm;
    if (entry.landmarks_path) lm = load_landmarks(*entry.landmarks_path);
    PairedClip p;
    p.track = crop_mouth(clip, lm);
    p.mel = mel_spectrogram(clip.audio, clip.sample_rate);
    p.class_id = entry.class_id.value_or(0);
    p.clip_id = entry.clip_id;
    paired.push_back(std::move(p));
  }
  return paired;
}

}  // namespace

bool parse_extractor_kind(const std::string& name, ExtractorKind& out) {
  if (name == "toy") out = ExtractorKind::toy;
  else if (name == "avhubert") out = ExtractorKind::external_avhubert;
  else if (name == "syncnet") out = ExtractorKind::external_syncnet;
  else return false;
  return true;
}

EvaluationReport build_evaluation_report(const RunConfiguration& config) {
  if (config.metrics.empty()) throw SpecInvalid("no metrics requested");
  const std::vector<ManifestEntry> entries = load_manifest(config.manifest_path);

  for (const ManifestEntry& entry : entries)
    for (const Metric m : config.metrics)
      if (needs_gt(m) && !entry.gt_video_path)
        throw ManifestError(config.manifest_path + ":" +
                            std::to_string(entry.line) + ": metric " +
                            metric_name(m) + " requires gt_video_path on clip '" +
                            entry.clip_id + "'");

  bool uses_extractor = false;
  for (const Metric m : config.metrics)
    uses_extractor = uses_extractor || needs_extractor(m);

  EvaluationReport report;
  report.command = "evaluate";
  // Resolving up front surfaces model/adapter problems as a config error
  // before any clip work starts.
  report.extractor_id =
      uses_extractor ? resolve_extractor(config.extractor)->id() : "none";
  report.params = base_params(config);
  report.params.emplace_back("metrics", metrics_csv(config.metrics));
  report.params.emplace_back(
      "zero_norm", zero_norm_policy_name(config.permissive_zero_norm
                                             ? ZeroNormPolicy::permissive
                                             : ZeroNormPolicy::strict));

  struct Outcome {
    bool ok = false;
    ClipRecord record;
    std::string error;
  };
  std::vector<Outcome> outcomes(entries.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < entries.size();) {
      try {
        outcomes[i].record = evaluate_clip(entries[i], config);
        outcomes[i].ok = true;
      } catch (const std::exception& e) {
        outcomes[i].error = e.what();
      }
    }
  };
  const int workers =
      std::max(1, std::min(config.workers, static_cast<int>(entries.size())));
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (std::thread& t : pool) t.join();
  }

  // Assembly stays single-threaded and in manifest order.
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (outcomes[i].ok)
      report.clips.push_back(std::move(outcomes[i].record));
    else
      report.failures.push_back({entries[i].clip_id, outcomes[i].error});
  }
  report.timestamp = rfc3339_utc_now();
  return report;
}

int cmd_evaluate(const RunConfiguration& config, std::ostream& out) {
  if (config.format != "records" && config.format != "table" &&
      config.format != "both")
    throw SpecInvalid("unknown report format: " + config.format);
  const EvaluationReport report = build_evaluation_report(config);
  fs::create_directories(config.out_dir);
  const std::string table = report_to_table(report);
  if (config.format != "table")
    write_text(config.out_dir + "/report.json", report_to_json(report));
  if (config.format != "records")
    write_text(config.out_dir + "/report.tsv", table);
  out << table;
  out << report.clips.size() << " clip(s) evaluated, " << report.failures.size()
      << " failed; reports under " << config.out_dir << "\n";
  if (report.clips.empty()) return kExitConfig;  // every clip hard-failed
  return report.failures.empty() ? kExitOk : kExitPartial;
}

int cmd_probe(const RunConfiguration& config, std::ostream& out) {
  const std::vector<ManifestEntry> entries = load_manifest(config.manifest_path);
  std::vector<ProbeClip> clips;
  std::vector<std::string> load_failures;
  for (const ManifestEntry& entry : entries) {
    try {
      const MediaClip clip = load_clip(entry.video_path, entry.audio_path);
      std::optional<LandmarkTrack> lm;
      if (entry.landmarks_path) lm = load_landmarks(*entry.landmarks_path);
      ProbeClip pc;
      pc.clip_id = entry.clip_id;
      pc.track = crop_mouth(clip, lm);
      pc.mel = mel_spectrogram(clip.audio, clip.sample_rate);
      clips.push_back(std::move(pc));
    } catch (const std::exception& e) {
      load_failures.push_back(entry.clip_id);
      out << "clip '" << entry.clip_id << "' skipped: " << e.what() << "\n";
    }
  }

  SweepSpec spec;
  spec.axis = config.probe_axis;
  spec.values = config.probe_values.empty()
                    ? (config.probe_axis == ProbeAxis::shift_px
                           ? default_shift_values()
                           : default_rotation_values())
                    : config.probe_values;
  spec.metrics = config.probe_metrics;
  spec.extractor = config.extractor;

  const std::vector<StabilityCurve> curves = run_sweep(clips, spec);
  fs::create_directories(config.out_dir);
  for (const StabilityCurve& curve : curves) {
    const PlotSpec plot = curve_plot_spec(curve);
    const std::string stem = config.out_dir + "/curve_" +
                             probe_axis_name(curve.axis) + "_" +
                             probe_metric_name(curve.metric);
    write_text(stem + ".svg", render_svg(plot));
    write_text(stem + ".tsv", plot_data_tsv(plot));
  }

  const std::vector<ScanPoint> scan =
      gt_similarity_scan(clips, config.extractor);
  const PlotSpec cs_plot = scan_cs_plot_spec(scan);
  const PlotSpec loss_plot = scan_loss_plot_spec(scan);
  write_text(config.out_dir + "/scan_cs.svg", render_svg(cs_plot));
  write_text(config.out_dir + "/scan_cs.tsv", plot_data_tsv(cs_plot));
  write_text(config.out_dir + "/scan_loss.svg", render_svg(loss_plot));
  write_text(config.out_dir + "/scan_loss.tsv", plot_data_tsv(loss_plot));

  auto params = base_params(config);
  params.emplace_back("axis", probe_axis_name(spec.axis));
  write_text(config.out_dir + "/curves.json",
             curves_to_json(curves, "probe", params));

  for (const StabilityCurve& curve : curves) {
    out << probe_metric_name(curve.metric) << " vs "
        << probe_axis_name(curve.axis) << ": baseline " << g6(curve.baseline);
    if (curve.points.size() >= 2) {
      const StabilityIndex si = stability_index(curve);
      out << ", stability index " << g6(si.value)
          << (si.normalized ? "" : " (raw deviation; zero baseline)");
    }
    out << "\n";
  }

  const std::size_t excluded =
      load_failures.size() +
      (curves.empty() ? 0 : curves.front().excluded_clips.size());
  const std::size_t included = curves.empty() ? 0 : curves.front().clip_ids.size();
  out << included << " clip(s) in curves, " << excluded
      << " excluded; plots under " << config.out_dir << "\n";
  if (included == 0) return kExitConfig;
  return excluded == 0 ? kExitOk : kExitPartial;
}

int cmd_ablate(const RunConfiguration& config, std::ostream& out) {
  const std::vector<PairedClip> paired =
      load_paired_clips(config.manifest_path, /*require_class=*/true);
  fs::create_directories(config.out_dir);

  // The shared audio-conditioning extractor: an AV-HuBERT-style toy trained
  // on the full fixture set, referenced by file so every run resolves the
  // same weights.
  ToyTrainReport cond_report;
  const ToyExtractor cond = train_toy_extractor(paired, config.epochs,
                                                config.seed, ToyStyle::avh,
                                                &cond_report);
  const std::string cond_path = config.out_dir + "/toy_avh.avc";
  cond.save(cond_path);
  ExtractorSpec spec;
  spec.kind = ExtractorKind::toy;
  spec.model_ref = cond_path;

  TrainRunConfig base;
  base.steps = config.steps;
  base.batch = config.batch;
  const AblationResult result = run_ablation(base, paired, spec, config.seeds);

  std::ostringstream table;
  table << "variant\tAVS_u\tAVS_m\tAVS_v\tLMD\tpixel_L1\n";
  for (const VariantResult& vr : result.variants)
    table << vr.label << "\t" << g6(vr.avs_u_mean) << "\t" << g6(vr.avs_m_mean)
          << "\t" << g6(vr.avs_v_mean) << "\t" << g6(vr.lmd_mean) << "\t"
          << g6(vr.pixel_mean) << "\n";
  write_text(config.out_dir + "/ablation.tsv", table.str());

  ordered_json j;
  j["schema"] = "avsync-ablation-v1";
  j["tool_version"] = kToolVersion;
  j["command"] = "ablate";
  ordered_json params = ordered_json::object();
  for (const auto& [key, value] : base_params(config)) params[key] = value;
  params["steps"] = static_cast<long long>(config.steps);
  params["batch"] = static_cast<long long>(config.batch);
  params["epochs"] = static_cast<long long>(config.epochs);
  j["params"] = params;
  j["metric_extractor_id"] = result.metric_extractor_id;
  j["conditioning_margin"] = cond_report.margin;
  j["seeds"] = result.seeds;
  j["holdout_clips"] = result.holdout_clips;
  ordered_json variants = ordered_json::array();
  for (const VariantResult& vr : result.variants) {
    ordered_json v;
    v["variant"] = sync_variant_name(vr.variant);
    v["label"] = vr.label;
    v["sync_extractor_id"] = vr.sync_extractor_id;
    v["avs_u"] = vr.avs_u_mean;
    v["avs_m"] = vr.avs_m_mean;
    v["avs_v"] = vr.avs_v_mean;
    v["lmd"] = vr.lmd_mean;
    v["pixel_l1"] = vr.pixel_mean;
    ordered_json per_seed = ordered_json::array();
    for (Index r = 0; r < vr.per_seed.rows(); ++r) {
      ordered_json row = ordered_json::array();
      for (Index c = 0; c < vr.per_seed.cols(); ++c)
        row.push_back(vr.per_seed(r, c));
      per_seed.push_back(row);
    }
    v["per_seed"] = per_seed;
    variants.push_back(v);
  }
  j["variants"] = variants;
  write_text(config.out_dir + "/ablation.json", j.dump(2) + "\n");

  out << table.str();
  out << "ablation artifacts under " << config.out_dir << "\n";
  return kExitOk;
}

int cmd_train_toy(const RunConfiguration& config, std::ostream& out) {
  const std::vector<PairedClip> paired =
      load_paired_clips(config.manifest_path, /*require_class=*/true);
  ToyTrainReport report;
  const ToyExtractor trained = train_toy_extractor(
      paired, config.epochs, config.seed, config.toy_style, &report);
  fs::create_directories(config.out_dir);
  const std::string path =
      config.out_dir + "/toy_" + toy_style_name(config.toy_style) + ".avc";
  trained.save(path);

  ordered_json j;
  j["schema"] = "avsync-toy-train-v1";
  j["tool_version"] = kToolVersion;
  j["command"] = "train-toy";
  ordered_json params = ordered_json::object();
  for (const auto& [key, value] : base_params(config)) params[key] = value;
  params["style"] = toy_style_name(config.toy_style);
  params["epochs"] = static_cast<long long>(config.epochs);
  j["params"] = params;
  j["extractor_id"] = trained.id();
  j["weights_path"] = path;
  j["matched_mean"] = report.matched_mean;
  j["mismatched_mean"] = report.mismatched_mean;
  j["margin"] = report.margin;
  j["loss_history"] = report.loss_history;
  write_text(config.out_dir + "/train_report.json", j.dump(2) + "\n");

  out << "saved " << path << " (id " << trained.id() << ")\n"
      << "holdout margin " << g6(report.margin) << " (matched "
      << g6(report.matched_mean) << ", mismatched "
      << g6(report.mismatched_mean) << ")\n";
  return kExitOk;
}

int cmd_validate_manifest(const RunConfiguration& config, std::ostream& out) {
  const std::vector<ManifestDiagnostic> diags =
      validate_manifest(config.manifest_path);
  int errors = 0, warnings = 0;
  for (const ManifestDiagnostic& d : diags) {
    (d.severity == "error" ? errors : warnings)++;
    out << config.manifest_path << ":" << d.line << ": " << d.severity << ": ";
    if (!d.field.empty()) out << d.field << ": ";
    out << d.message << "\n";
  }
  out << (errors ? "invalid" : "ok") << " (" << errors << " error(s), "
      << warnings << " warning(s))\n";
  return errors ? kExitConfig : kExitOk;
}

int cmd_gen_fixtures(const RunConfiguration& config, std::ostream& out) {
  FixtureParams params;
  params.classes = config.fixture_classes;
  params.clips_per_class = config.fixture_clips_per_class;
  params.frames = config.fixture_frames;
  params.seed = config.seed;
  const std::vector<FixtureClip> set = make_fixture_set(params);
  fs::create_directories(config.out_dir);

  std::vector<ManifestEntry> entries;
  for (const FixtureClip& fx : set) {
    const std::string stem = fx.clip.clip_id;
    save_clip(config.out_dir + "/" + stem + ".avc", fx.clip);
    save_landmarks(config.out_dir + "/" + stem + ".landmarks.txt", fx.landmarks);
    ManifestEntry e;
    e.clip_id = stem;
    e.video_path = stem + ".avc";
    // Landmark files stay on disk as sidecars but are not referenced:
    // fixtures evaluate through the heuristic crop so mouth openness stays
    // visible (the landmark box normalizes it away); LMD then uses the
    // moment fitter on both sides.
    // Fixtures are their own ground truth, so GT-requiring metrics work on
    // the manifest as generated.
    e.gt_video_path = e.video_path;
    e.class_id = fx.class_id;
    entries.push_back(std::move(e));
  }
  save_manifest(config.out_dir + "/manifest.jsonl", entries);
  out << "wrote " << set.size() << " fixture clip(s) and manifest.jsonl under "
      << config.out_dir << "\n";
  return kExitOk;
}

int run_cli(const RunConfiguration& config, std::ostream& out,
            std::ostream& err) {
  try {
    if (config.command == "evaluate") return cmd_evaluate(config, out);
    if (config.command == "probe") return cmd_probe(config, out);
    if (config.command == "ablate") return cmd_ablate(config, out);
    if (config.command == "train-toy") return cmd_train_toy(config, out);
    if (config.command == "validate-manifest")
      return cmd_validate_manifest(config, out);
    if (config.command == "gen-fixtures") return cmd_gen_fixtures(config, out);
    throw SpecInvalid("unknown command: " + config.command);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }
}

}  // namespace avsync
