#include "hydro/cli.hpp"

#include "hydro/checkpoint.hpp"
#include "hydro/config.hpp"
#include "hydro/cvharness.hpp"
#include "hydro/error.hpp"
#include "hydro/explain.hpp"
#include "hydro/imageio.hpp"
#include "hydro/ingest.hpp"
#include "hydro/phantom.hpp"
#include "hydro/rng.hpp"
#include "hydro/stats.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <ctime>
#include <iostream>
#include <thread>

namespace hydro::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_json(const fs::path& path, const json& j) { io::write_text(path, j.dump(2) + "\n"); }

std::string file_hash(const fs::path& path) {
  const auto bytes = io::read_bytes(path);
  return hex64(fnv1a64(bytes));
}

struct Metadata {
  std::string command;
  std::string started_at = utc_now();
  json extra = json::object();

  void write(const fs::path& dir) const {
    json j = extra;
    j["command"] = command;
    j["started_at"] = started_at;
    j["finished_at"] = utc_now();
    if (const char* s = std::getenv("HYDRO_SEED")) j["hydro_seed_env"] = s;
    write_json(dir / "run_metadata.json", j);
  }
};

// ---------------------------------------------------------------- phantom

struct PhantomArgs {
  int n_normal = 100;
  int n_path = 100;
  std::uint64_t seed = 7;
  std::string out;
  int image_side = 256;
  double noise = 0.05;
  bool jpeg = false;
};

int cmd_phantom(const PhantomArgs& a, bool seed_given) {
  Metadata meta{"phantom"};
  std::uint64_t seed = a.seed;
  if (!seed_given)
    if (auto env = seed_from_env()) seed = *env;
  phantom::DatasetOptions opt;
  opt.image_side = a.image_side;
  opt.noise_sigma = a.noise;
  opt.jpeg_export = a.jpeg;
  const auto manifest = phantom::generate_dataset(a.n_normal, a.n_path, seed, a.out, opt);
  const fs::path manifest_path = fs::path(a.out) / "manifest.jsonl";
  meta.extra = {{"seed", seed},
                {"n_normal", a.n_normal},
                {"n_path", a.n_path},
                {"image_side", a.image_side},
                {"noise_sigma", a.noise},
                {"records", manifest.records.size()},
                {"manifest_hash", file_hash(manifest_path)}};
  meta.write(a.out);
  std::cout << manifest_path.string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- ingest

struct IngestArgs {
  std::string root;
  std::string labeling = "by_subdirectory";
  std::string out;
  std::string series;
  std::optional<std::size_t> index;
  std::string tag;
  bool strict = false;
};

int cmd_ingest(const IngestArgs& a) {
  if (!a.series.empty()) {
    if (a.out.empty()) throw ConfigError("--out is required");
    ingest::SliceSelector sel;
    if (a.index) sel = *a.index;
    else if (!a.tag.empty()) sel = a.tag;
    else throw ConfigError("--series needs --index or --tag");
    io::write_png(a.out, ingest::extract_slice(a.series, sel));
    std::cout << a.out << "\n";
    return kExitOk;
  }
  if (a.root.empty() || a.out.empty()) throw ConfigError("ingest needs --root and --out (or --series)");
  ingest::Labeling labeling;
  if (a.labeling == "by_subdirectory") labeling = ingest::Labeling::by_subdirectory;
  else if (a.labeling == "by_sidecar_file") labeling = ingest::Labeling::by_sidecar_file;
  else throw ConfigError("--labeling must be by_subdirectory or by_sidecar_file");
  const auto manifest = ingest::build_manifest(a.root, labeling);
  ingest::write_manifest(manifest, a.out);
  const auto report = ingest::validate_manifest(ingest::read_manifest(a.out));
  for (const auto& f : report.findings)
    std::cerr << "warning: " << ingest::to_string(f.kind) << " " << f.image_id << " " << f.detail << "\n";
  std::cout << a.out << " (" << manifest.records.size() << " records)\n";
  return a.strict && !report.empty() ? kExitFailure : kExitOk;
}

// ---------------------------------------------------------------- cv

struct CvArgs {
  std::string config;
  std::string manifest;
  std::string out;
  std::optional<int> j, k, workers, epochs, stop_after;
  std::optional<std::uint64_t> seed;
  std::optional<long> n_resamples;
  std::optional<double> threshold;
  bool resume = false;
};

json plan_to_json(const cv::FoldPlan& plan) {
  json reps = json::array();
  for (const auto& rep : plan.assignments) {
    json folds = json::array();
    for (const auto& a : rep) folds.push_back({{"train", a.train}, {"val", a.val}, {"test", a.test}});
    reps.push_back(folds);
  }
  return {{"j", plan.j},
          {"k", plan.k},
          {"seed", plan.seed},
          {"group_by_patient", plan.group_by_patient},
          {"val_fraction", plan.val_fraction},
          {"assignments", reps}};
}

json val_calibration(const std::vector<cv::FoldResult>& results, const StatsParams& sp) {
  std::vector<Label> labels;
  std::vector<double> probs;
  for (const auto& r : results) {
    labels.insert(labels.end(), r.val_labels.begin(), r.val_labels.end());
    for (const auto& p : r.val_probs) probs.push_back(p[1]);
  }
  try {
    return stats::to_json(stats::calibrate_threshold(labels, probs, sp.objective, sp.constraint));
  } catch (const ValidationError& e) {
    return {{"error", e.what()}};
  }
}

int cmd_cv(const CvArgs& a) {
  Metadata meta{"cv"};
  PipelineConfig cfg = load_config(a.config);
  if (auto env = seed_from_env()) cfg.set_seed(*env);
  if (!a.manifest.empty()) cfg.manifest = a.manifest;
  if (!a.out.empty()) cfg.output_dir = a.out;
  if (a.j) cfg.cv.j = *a.j;
  if (a.k) cfg.cv.k = *a.k;
  if (a.workers) cfg.cv.workers = *a.workers;
  if (a.epochs) cfg.train.epochs_max = *a.epochs;
  if (a.seed) cfg.set_seed(*a.seed);
  if (a.n_resamples) cfg.stats.n_resamples = *a.n_resamples;
  if (a.threshold) cfg.stats.threshold = *a.threshold;
  cfg.validate();
  if (cfg.manifest.empty()) throw ConfigError("no manifest given (paths.manifest or --manifest)");
  if (cfg.output_dir.empty()) throw ConfigError("no output directory given (paths.output_dir or --out)");
  if (!fs::exists(cfg.manifest)) throw ConfigError("manifest not found: " + cfg.manifest.string());

  const fs::path run_dir = cfg.output_dir;
  fs::create_directories(run_dir);
  const auto manifest = ingest::read_manifest(cfg.manifest);
  if (auto report = ingest::validate_manifest(manifest); !report.empty()) {
    for (const auto& f : report.findings)
      std::cerr << "manifest: " << ingest::to_string(f.kind) << " " << f.image_id << " " << f.detail << "\n";
    throw IngestError("manifest is not usable for training");
  }

  const auto plan = cv::plan_folds(manifest, cfg.cv.j, cfg.cv.k, cfg.cv.seed, cfg.cv.group_by_patient,
                                   cfg.cv.val_fraction);
  if (auto leaks = cv::verify_no_leakage(plan, manifest); !leaks.empty())
    throw PlanningError("fold plan leaks: " + leaks.findings.front().detail);
  write_json(run_dir / "config.json", to_json(cfg));
  write_json(run_dir / "plan.json", plan_to_json(plan));

  cv::CvOptions opt;
  const int folds = cfg.cv.j * cfg.cv.k;
  const int cores = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  opt.workers = cfg.cv.workers > 0 ? std::min(cfg.cv.workers, folds) : std::min(cores, folds);
  opt.results_path = run_dir / "results.jsonl";
  opt.resume = a.resume;
  opt.checkpoint_dir = run_dir / "checkpoints";
  opt.max_new_folds = a.stop_after;
  opt.on_result = [&](const cv::FoldResult& r) {
    std::cerr << "fold (" << r.rep << ", " << r.fold << ") epochs=" << r.epochs_run
              << " best_val_loss=" << r.best_val_loss << "\n";
  };
  const auto results = cv::run_cv(manifest, plan, cfg.head, cfg.train, cfg.augment, opt, cfg.normalization);

  meta.extra = {{"config", to_json(cfg)},
                {"seeds", {{"cv", cfg.cv.seed}, {"train", cfg.train.seed}, {"stats", cfg.stats.seed}}},
                {"workers", opt.workers},
                {"folds_completed", results.size()},
                {"manifest", fs::absolute(cfg.manifest).string()}};
  if (static_cast<int>(results.size()) < folds) {
    meta.write(run_dir);
    std::cerr << "run incomplete: " << results.size() << "/" << folds << " folds; rerun with --resume\n";
    return kExitFailure;
  }

  const auto summary =
      stats::aggregate_cv(results, cfg.stats.threshold, cfg.stats.n_resamples, cfg.stats.seed, cfg.stats.mode);
  json report = stats::to_json(summary);
  report["threshold_calibration"] = val_calibration(results, cfg.stats);
  write_json(run_dir / "report.json", report);
  const std::string text = stats::format_report(summary);
  io::write_text(run_dir / "summary.txt", text);
  meta.extra["results_hash"] = file_hash(run_dir / "results.jsonl");
  meta.write(run_dir);
  std::cout << text;
  return kExitOk;
}

// ---------------------------------------------------------------- report / calibrate

struct ReportArgs {
  std::string results;
  std::string out;
  double threshold = 0.5;
  long n_resamples = stats::kDefaultResamples;
  std::uint64_t seed = 0;
  std::string mode = "fold_metrics";
};

int cmd_report(const ReportArgs& a, bool seed_given) {
  std::uint64_t seed = a.seed;
  if (!seed_given)
    if (auto env = seed_from_env()) seed = *env;
  stats::BootstrapMode mode;
  if (a.mode == "fold_metrics") mode = stats::BootstrapMode::fold_metrics;
  else if (a.mode == "pooled") mode = stats::BootstrapMode::pooled;
  else throw ConfigError("--mode must be fold_metrics or pooled");
  const auto results = cv::read_results(a.results);
  const auto summary = stats::aggregate_cv(results, a.threshold, a.n_resamples, seed, mode);
  if (!a.out.empty()) write_json(a.out, stats::to_json(summary));
  std::cout << stats::format_report(summary);
  return kExitOk;
}

struct CalibrateArgs {
  std::string results;
  std::string objective = "max_youden";
  double constraint = 0.0;
  std::string source = "val";
  std::string out;
};

int cmd_calibrate(const CalibrateArgs& a) {
  const auto objective = stats::parse_objective(a.objective);
  if (a.source != "val" && a.source != "test") throw ConfigError("--source must be val or test");
  const auto results = cv::read_results(a.results);
  std::vector<Label> labels;
  std::vector<double> probs;
  for (const auto& r : results) {
    const auto& l = a.source == "val" ? r.val_labels : r.test_labels;
    const auto& p = a.source == "val" ? r.val_probs : r.test_probs;
    labels.insert(labels.end(), l.begin(), l.end());
    for (const auto& pr : p) probs.push_back(pr[1]);
  }
  const auto report = stats::calibrate_threshold(labels, probs, objective, a.constraint);
  json j = stats::to_json(report);
  j["source"] = a.source;
  const std::string text = j.dump(2) + "\n";
  if (!a.out.empty()) io::write_text(a.out, text);
  else std::cout << text;
  if (!report.chosen_threshold)
    std::cerr << "infeasible: no threshold satisfies " << a.objective << " " << a.constraint << "\n";
  else
    std::cerr << "chosen threshold " << *report.chosen_threshold << " sensitivity " << report.chosen->sensitivity
              << " specificity " << report.chosen->specificity << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- explain

struct ExplainArgs {
  std::string checkpoint;
  std::string image;
  std::string mask;
  std::string manifest;
  std::vector<std::string> filters;
  std::string results;
  std::optional<int> rep, fold;
  std::optional<int> limit;
  std::string out;
  std::optional<double> alpha;
  std::string layer;
  std::string target = "hydrocephalus";
};

struct ExplainItem {
  std::string id;
  Gray8 image;
  std::optional<Mask> mask;
  std::optional<Label> label;
};

bool matches(const ingest::ImageRecord& r, const std::vector<std::string>& filters) {
  for (const auto& f : filters) {
    const auto eq = f.find('=');
    if (eq == std::string::npos) throw ConfigError("--filter expects key=value, got '" + f + "'");
    const auto key = f.substr(0, eq), value = f.substr(eq + 1);
    if (key == "label") {
      if (to_string(r.label) != value) return false;
    } else if (key == "patient") {
      if (r.patient_id != value) return false;
    } else if (key == "id") {
      if (r.image_id != value) return false;
    } else if (key == "slice_tag") {
      if (r.slice_tag != value) return false;
    } else {
      throw ConfigError("unknown filter key '" + key + "'");
    }
  }
  return true;
}

std::optional<Mask> load_mask_if_present(const fs::path& p) {
  if (p.empty() || !fs::exists(p)) return std::nullopt;
  return io::read_mask(p);
}

int cmd_explain(const ExplainArgs& a) {
  Metadata meta{"explain"};
  if (a.out.empty()) throw ConfigError("--out is required");
  if (a.image.empty() == a.manifest.empty()) throw ConfigError("give exactly one of --image or --manifest");
  const auto tm = model::load_checkpoint(a.checkpoint);
  const auto& clf = tm.classifier;
  if (clf.backbone->final_conv_layer().empty())
    throw CapabilityError("backbone '" + clf.backbone_id + "' has no convolutional map");
  const double alpha = a.alpha.value_or(0.5);
  const bool predicted_target = a.target == "predicted";
  if (!predicted_target) (void)parse_label(a.target);

  std::vector<ExplainItem> items;
  if (!a.image.empty()) {
    ExplainItem it;
    it.id = fs::path(a.image).stem().string();
    it.image = io::read_gray(a.image);
    fs::path mask = a.mask;
    if (mask.empty()) {
      // Phantom layout: <root>/images/<label>/<id>.png next to <root>/masks/.
      const fs::path root = fs::absolute(a.image).parent_path().parent_path().parent_path();
      mask = root / "masks" / (it.id + "_ventricle.png");
    }
    it.mask = load_mask_if_present(mask);
    items.push_back(std::move(it));
  } else {
    const auto manifest = ingest::read_manifest(a.manifest);
    std::optional<std::set<std::string>> allowed;
    if (!a.results.empty()) {
      if (!a.rep || !a.fold) throw ConfigError("--results needs --rep and --fold");
      for (const auto& r : cv::read_results(a.results))
        if (r.rep == *a.rep && r.fold == *a.fold) allowed.emplace(r.test_ids.begin(), r.test_ids.end());
      if (!allowed) throw ConfigError("no fold (" + std::to_string(*a.rep) + ", " + std::to_string(*a.fold) + ") in results");
    }
    for (const auto& r : manifest.records) {
      if (!matches(r, a.filters)) continue;
      if (allowed && !allowed->count(r.image_id)) continue;
      if (a.limit && static_cast<int>(items.size()) >= *a.limit) break;
      ExplainItem it;
      it.id = r.image_id;
      it.image = ingest::load_image(manifest, r);
      it.mask = load_mask_if_present(phantom::ventricle_mask_path(manifest, r));
      it.label = r.label;
      items.push_back(std::move(it));
    }
  }

  fs::create_directories(a.out);
  json scores = json::array();
  if (items.empty()) std::cerr << "warning: no images matched; nothing to explain\n";
  for (const auto& it : items) {
    const auto probs = model::predict_proba(clf, model::prepare_input(clf, it.image));
    const Label target = predicted_target ? (probs[1] >= 0.5 ? Label::hydrocephalus : Label::normal)
                                          : parse_label(a.target);
    const auto heat = explain::gradcam(clf, it.image, target, a.layer);
    const Gray8 base = to_gray8(preprocess::center_crop_resize<double>(it.image, clf.input_side));
    io::write_png(fs::path(a.out) / ("overlay_" + it.id + ".png"), explain::overlay(base, heat, alpha));
    io::write_png(fs::path(a.out) / ("activation_" + it.id + ".png"),
                  to_gray8(explain::mean_activation_image(clf, it.image) * 255.0));
    explain::write_heatmap_grid(fs::path(a.out) / ("heatmap_" + it.id + ".grid"), heat);
    json entry{{"image_id", it.id},
               {"target_class", std::string(to_string(target))},
               {"p_path", probs[1]},
               {"degenerate", heat.degenerate}};
    if (it.label) entry["label"] = std::string(to_string(*it.label));
    if (it.mask) {
      const Mask m = resize_bilinear<double>(it.mask->cast<double>(), clf.input_side, clf.input_side) >= 0.5;
      entry["localization_score"] = explain::localization_score(heat, m);
    } else {
      entry["localization_score"] = nullptr;
    }
    scores.push_back(entry);
  }
  write_json(fs::path(a.out) / "scores.json", scores);
  meta.extra = {{"checkpoint", fs::absolute(a.checkpoint).string()}, {"images", items.size()}, {"alpha", alpha}};
  meta.write(a.out);
  std::cout << items.size() << " image(s) explained into " << a.out << "\n";
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Hydrocephalus MRI classification pipeline"};
  app.require_subcommand(1);

  PhantomArgs pa;
  auto* phantom = app.add_subcommand("phantom", "generate a synthetic phantom dataset");
  phantom->add_option("--n-normal", pa.n_normal, "normal images")->required()->check(CLI::PositiveNumber);
  phantom->add_option("--n-path", pa.n_path, "hydrocephalus images")->required()->check(CLI::PositiveNumber);
  auto* phantom_seed = phantom->add_option("--seed", pa.seed, "base seed");
  phantom->add_option("--out", pa.out, "output directory")->required();
  phantom->add_option("--image-side", pa.image_side, "image side in pixels")->check(CLI::Range(32, 4096));
  phantom->add_option("--noise", pa.noise, "texture noise sigma")->check(CLI::Range(0.0, 0.5));
  phantom->add_flag("--jpeg", pa.jpeg, "also export JPEG copies");

  IngestArgs ia;
  auto* ingest_cmd = app.add_subcommand("ingest", "build a manifest or extract a DICOM slice");
  ingest_cmd->add_option("--root", ia.root, "dataset root");
  ingest_cmd->add_option("--labeling", ia.labeling, "by_subdirectory or by_sidecar_file");
  ingest_cmd->add_option("--out", ia.out, "manifest (or PNG with --series)");
  ingest_cmd->add_option("--series", ia.series, "series directory for slice extraction");
  ingest_cmd->add_option("--index", ia.index, "frame index in instance order");
  ingest_cmd->add_option("--tag", ia.tag, "frame ImageComments tag");
  ingest_cmd->add_flag("--strict", ia.strict, "fail when validation reports findings");

  CvArgs ca;
  auto* cv_cmd = app.add_subcommand("cv", "run J x K cross-validation");
  cv_cmd->add_option("--config", ca.config, "pipeline config (JSON)")->required();
  cv_cmd->add_option("--manifest", ca.manifest, "override paths.manifest");
  cv_cmd->add_option("--out", ca.out, "override paths.output_dir");
  cv_cmd->add_option("--j", ca.j, "repetitions");
  cv_cmd->add_option("--k", ca.k, "folds");
  cv_cmd->add_option("--seed", ca.seed, "seed for planning, training and bootstrap");
  cv_cmd->add_option("--workers", ca.workers, "parallel fold workers");
  cv_cmd->add_option("--epochs", ca.epochs, "override train.epochs_max");
  cv_cmd->add_option("--n-resamples", ca.n_resamples, "bootstrap resamples");
  cv_cmd->add_option("--threshold", ca.threshold, "decision threshold on p_path");
  cv_cmd->add_option("--stop-after", ca.stop_after, "train at most this many new folds, leaving the run resumable");
  cv_cmd->add_flag("--resume", ca.resume, "skip folds already in results.jsonl");

  CalibrateArgs cal;
  auto* cal_cmd = app.add_subcommand("calibrate", "choose a decision threshold");
  cal_cmd->add_option("--results", cal.results, "fold results JSONL")->required();
  cal_cmd->add_option("--objective", cal.objective, "max_youden, min_sensitivity_at, min_specificity_at");
  cal_cmd->add_option("--constraint", cal.constraint, "minimum rate for constrained objectives")->check(CLI::Range(0.0, 1.0));
  cal_cmd->add_option("--source", cal.source, "val (default) or test predictions");
  cal_cmd->add_option("--out", cal.out, "write the ThresholdReport JSON here");

  ExplainArgs ea;
  auto* ex_cmd = app.add_subcommand("explain", "Grad-CAM overlays and localization scores");
  ex_cmd->add_option("--checkpoint", ea.checkpoint, "trained model checkpoint")->required();
  ex_cmd->add_option("--image", ea.image, "single image");
  ex_cmd->add_option("--mask", ea.mask, "ventricle mask for --image");
  ex_cmd->add_option("--manifest", ea.manifest, "manifest to draw images from");
  ex_cmd->add_option("--filter", ea.filters, "key=value over label, patient, id, slice_tag");
  ex_cmd->add_option("--results", ea.results, "restrict to the test set of --rep/--fold in these results");
  ex_cmd->add_option("--rep", ea.rep, "repetition index");
  ex_cmd->add_option("--fold", ea.fold, "fold index");
  ex_cmd->add_option("--limit", ea.limit, "maximum images");
  ex_cmd->add_option("--out", ea.out, "output directory")->required();
  ex_cmd->add_option("--alpha", ea.alpha, "overlay opacity")->check(CLI::Range(0.0, 1.0));
  ex_cmd->add_option("--layer", ea.layer, "convolutional layer name");
  ex_cmd->add_option("--target", ea.target, "hydrocephalus, normal or predicted");

  ReportArgs ra;
  auto* rep_cmd = app.add_subcommand("report", "bootstrap summary of fold results");
  rep_cmd->add_option("--results", ra.results, "fold results JSONL")->required();
  rep_cmd->add_option("--out", ra.out, "write report JSON here");
  rep_cmd->add_option("--threshold", ra.threshold, "decision threshold on p_path")->check(CLI::Range(0.0, 1.0));
  rep_cmd->add_option("--n-resamples", ra.n_resamples, "bootstrap resamples")->check(CLI::PositiveNumber);
  auto* report_seed = rep_cmd->add_option("--seed", ra.seed, "bootstrap seed");
  rep_cmd->add_option("--mode", ra.mode, "fold_metrics or pooled");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (phantom->parsed()) return cmd_phantom(pa, phantom_seed->count() > 0);
    if (ingest_cmd->parsed()) return cmd_ingest(ia);
    if (cv_cmd->parsed()) return cmd_cv(ca);
    if (cal_cmd->parsed()) return cmd_calibrate(cal);
    if (ex_cmd->parsed()) return cmd_explain(ea);
    if (rep_cmd->parsed()) return cmd_report(ra, report_seed->count() > 0);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args);
}

}  // namespace hydro::cli
