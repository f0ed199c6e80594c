// One line per acceptance criterion. Usage: hydro_acceptance [--work DIR] [criterion numbers...]

#include "hydro/checkpoint.hpp"
#include "hydro/config.hpp"
#include "hydro/cvharness.hpp"
#include "hydro/explain.hpp"
#include "hydro/imageio.hpp"
#include "hydro/ingest.hpp"
#include "hydro/phantom.hpp"
#include "hydro/preprocess.hpp"
#include "hydro/rng.hpp"
#include "hydro/stats.hpp"
#include "oracles.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

using namespace hydro;
namespace fs = std::filesystem;

namespace {

// tolerances and budgets
constexpr double kMinAccuracy = 0.95;
constexpr double kMinSensitivity = 0.93;
constexpr double kMinSpecificity = 0.93;
constexpr double kLeakBudgetSeconds = 10.0;
constexpr double kGradCamTol = 1e-6;
constexpr double kMinLocalization = 0.5;
constexpr double kMinLocalizedFraction = 0.8;
constexpr double kRoundTripTol = 1e-6;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os.precision(prec);
  os << std::fixed << v;
  return os.str();
}

std::string sci(double v) {
  std::ostringstream os;
  os.precision(2);
  os << std::scientific << v;
  return os.str();
}

struct CvRun {
  PipelineConfig cfg;
  ingest::DatasetManifest manifest;
  std::vector<cv::FoldResult> results;
  fs::path dir;
  double seconds = 0;
};

CvRun run_phantom_cv(const fs::path& work, const std::string& tag) {
  CvRun run;
  run.dir = work / tag;
  fs::remove_all(run.dir);
  const fs::path data = work / "phantoms";
  if (!fs::exists(data / "manifest.jsonl")) phantom::generate_dataset(100, 100, 7, data);
  run.manifest = ingest::read_manifest(data / "manifest.jsonl");
  run.cfg = load_config(fs::path(HYDRO_SOURCE_DIR) / "configs" / "default.json");
  const auto& c = run.cfg;
  const auto plan = cv::plan_folds(run.manifest, c.cv.j, c.cv.k, c.cv.seed, c.cv.group_by_patient, c.cv.val_fraction);
  cv::CvOptions opt;
  opt.workers = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  opt.results_path = run.dir / "results.jsonl";
  opt.checkpoint_dir = run.dir / "checkpoints";
  const auto t0 = std::chrono::steady_clock::now();
  run.results = cv::run_cv(run.manifest, plan, c.head, c.train, c.augment, opt, c.normalization);
  run.seconds = seconds_since(t0);
  return run;
}

Outcome criterion1(const CvRun& run) {
  const auto& s = run.cfg.stats;
  const auto summary = stats::aggregate_cv(run.results, s.threshold, s.n_resamples, s.seed, s.mode);
  const bool pass = run.results.size() == 25 && summary.accuracy.median >= kMinAccuracy &&
                    summary.sensitivity.median >= kMinSensitivity && summary.specificity.median >= kMinSpecificity;
  return {pass, "accuracy " + stats::format_summary(summary.accuracy) + ", sensitivity " +
                    stats::format_summary(summary.sensitivity) + ", specificity " +
                    stats::format_summary(summary.specificity) + ", " + std::to_string(run.results.size()) +
                    " folds in " + fmt(run.seconds, 1) + " s"};
}

// Plan invariants rechecked here without the library checker.
std::string independent_leak_check(const cv::FoldPlan& plan, const ingest::DatasetManifest& m) {
  std::map<std::string, std::string> patient;
  for (const auto& r : m.records) patient[r.image_id] = r.patient_id;
  for (int rep = 0; rep < plan.j; ++rep) {
    std::map<std::string, int> tested;
    for (int f = 0; f < plan.k; ++f) {
      const auto& a = plan.at(rep, f);
      std::map<std::string, int> role;
      std::map<std::string, std::set<int>> patient_roles;
      int n = 0;
      for (const auto* part : {&a.train, &a.val, &a.test}) {
        for (const auto& id : *part) {
          if (!patient.count(id)) return "unknown id " + id;
          if (role.count(id)) return "id in two roles " + id;
          role[id] = n;
          patient_roles[patient[id]].insert(n);
        }
        ++n;
      }
      if (role.size() != m.records.size()) return "fold does not cover the manifest";
      if (plan.group_by_patient)
        for (const auto& [p, roles] : patient_roles)
          if (roles.size() > 1) return "patient " + p + " split across roles";
      for (const auto& id : a.test) ++tested[id];
    }
    if (tested.size() != m.records.size()) return "repetition does not test every record";
    for (const auto& [id, c] : tested)
      if (c != 1) return "record tested twice " + id;
  }
  return {};
}

Outcome criterion2() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(20240901);
  auto pick = [&](int lo, int hi) { return lo + static_cast<int>(rng() % static_cast<std::uint64_t>(hi - lo + 1)); };
  int clean = 0, three_slice = 0;
  std::string failure;
  for (int t = 0; t < 50 && failure.empty(); ++t) {
    const int k = pick(2, 5), j = pick(1, 5);
    const int spp = t % 2 == 0 ? 3 : pick(1, 2);
    const bool grouped = spp == 3 || pick(0, 1) == 1;
    three_slice += spp == 3;
    std::vector<ingest::ImageRecord> recs;
    int id = 0;
    for (Label label : {Label::normal, Label::hydrocephalus}) {
      const int n = spp * pick(k + 1, k + 15);
      for (int i = 0; i < n; ++i, ++id) {
        ingest::ImageRecord r;
        r.image_id = "r" + std::to_string(id);
        r.patient_id = "pt" + std::to_string(id / spp) + (label == Label::normal ? "n" : "h");
        r.path = r.image_id + ".png";
        r.label = label;
        recs.push_back(r);
      }
    }
    const auto m = ingest::make_manifest(std::move(recs));
    const auto plan = cv::plan_folds(m, j, k, rng(), grouped, 0.2);
    const auto report = cv::verify_no_leakage(plan, m);
    if (!report.empty()) failure = "trial " + std::to_string(t) + ": " + report.findings.front().detail;
    else if (auto e = independent_leak_check(plan, m); !e.empty()) failure = "trial " + std::to_string(t) + ": " + e;
    else ++clean;
  }
  const double secs = seconds_since(t0);
  const bool pass = failure.empty() && clean == 50 && secs <= kLeakBudgetSeconds;
  return {pass, std::to_string(clean) + "/50 plans clean (" + std::to_string(three_slice) + " with 3-slice patients) in " +
                    fmt(secs, 2) + " s" + (failure.empty() ? "" : "; " + failure)};
}

Outcome criterion3(const CvRun& run) {
  int same = 0;
  std::set<std::string> checksums;
  for (const auto& r : run.results) {
    same += !r.backbone_checksum_before.empty() && r.backbone_checksum_before == r.backbone_checksum_after;
    checksums.insert(r.backbone_checksum_before);
  }
  const bool pass = same == 25 && run.results.size() == 25 && checksums.size() == 1;
  return {pass, std::to_string(same) + "/" + std::to_string(run.results.size()) + " folds unchanged, checksum " +
                    *checksums.begin()};
}

Outcome criterion4() {
  long total_checked = 0, exactly_ten = 0, mismatches = 0;
  for (long tp = 0; tp <= 10; ++tp)
    for (long fp = 0; tp + fp <= 10; ++fp)
      for (long tn = 0; tp + fp + tn <= 10; ++tn)
        for (long fn = 0; tp + fp + tn + fn <= 10; ++fn) {
          const long n = tp + fp + tn + fn;
          if (n == 0) continue;
          ++total_checked;
          exactly_ten += n == 10;
          stats::ConfusionMatrix cm{tp, fp, tn, fn};
          const auto got = stats::metrics(cm);
          const double acc = static_cast<double>(tp + tn) / static_cast<double>(n);
          bool ok = got.accuracy == acc;
          if (tp + fn == 0) ok = ok && !got.sensitivity;
          else ok = ok && got.sensitivity && *got.sensitivity == static_cast<double>(tp) / static_cast<double>(tp + fn);
          if (tn + fp == 0) ok = ok && !got.specificity;
          else ok = ok && got.specificity && *got.specificity == static_cast<double>(tn) / static_cast<double>(tn + fp);
          mismatches += !ok;
        }
  const bool pass = mismatches == 0 && total_checked == 1000 && exactly_ten == 286;
  return {pass, std::to_string(total_checked) + " matrices with 1 <= total <= 10 (" + std::to_string(exactly_ten) +
                    " with total 10), " + std::to_string(mismatches) + " mismatches"};
}

Outcome criterion5() {
  std::mt19937_64 rng(5150);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int exact = 0;
  for (int t = 0; t < 20; ++t) {
    std::vector<double> v(25);
    for (auto& x : v) x = u(rng);
    const std::uint64_t seed = oracle::metric_seed(rng(), static_cast<std::uint64_t>(t % 3));
    const auto got = stats::bootstrap_summary(v, 1000, seed);
    const auto want = oracle::brute_bootstrap(v, 1000, seed);
    exact += got.median == want.median && got.p2_5 == want.lo && got.p97_5 == want.hi;
  }
  bool seeds_ok = true;
  for (int k = 0; k < 3; ++k) seeds_ok = seeds_ok && stats::metric_seed(99, k) == oracle::metric_seed(99, k);
  const std::vector<double> constant(25, 0.8);
  const auto c = stats::bootstrap_summary(constant, 1000, 3);
  const bool zero_width = c.p2_5 == c.p97_5 && c.median == c.p2_5;
  return {exact == 20 && seeds_ok && zero_width,
          std::to_string(exact) + "/20 vectors exact, metric seeds " + (seeds_ok ? "match" : "differ") +
              ", constant vector interval width " + sci(c.p97_5 - c.p2_5)};
}

Outcome criterion6() {
  std::mt19937_64 rng(6060);
  int monotone = 0, youden = 0;
  for (int t = 0; t < 100; ++t) {
    const int n = 4 + static_cast<int>(rng() % 60);
    std::vector<Label> labels(n);
    std::vector<int> positive(n);
    std::vector<double> p(n);
    const bool coarse = t % 3 == 0;
    for (int i = 0; i < n; ++i) {
      positive[i] = i == 0 ? 1 : i == 1 ? 0 : static_cast<int>(rng() % 2);
      labels[i] = positive[i] ? Label::hydrocephalus : Label::normal;
      const double x = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
      p[i] = coarse ? std::round(x * 8.0) / 8.0 : x;
    }
    const auto r = stats::calibrate_threshold(labels, p, stats::Objective::max_youden);
    bool ok = !r.sweep.empty();
    for (std::size_t i = 1; i < r.sweep.size(); ++i)
      ok = ok && r.sweep[i].threshold > r.sweep[i - 1].threshold && r.sweep[i].sensitivity <= r.sweep[i - 1].sensitivity &&
           r.sweep[i].specificity >= r.sweep[i - 1].specificity;
    monotone += ok;
    youden += r.chosen_threshold && *r.chosen_threshold == oracle::brute_youden(positive, p);
  }
  return {monotone == 100 && youden == 100,
          std::to_string(monotone) + "/100 sweeps monotone, " + std::to_string(youden) + "/100 Youden thresholds match"};
}

class SingleChannelMap final : public nn::Backbone {
 public:
  std::string id() const override { return "single_channel"; }
  int feature_dim() const override { return 1; }
  std::string final_conv_layer() const override { return "map"; }
  nn::BackboneOutput forward(const nn::FeatureMap& in) const override {
    nn::FeatureMap m;
    m.height = in.height;
    m.width = in.width;
    m.data = in.data.topRows(1).cwiseMax(0.0f);
    nn::BackboneOutput out;
    out.pooled = nn::global_average_pool(m);
    out.conv_map = std::move(m);
    return out;
  }
  std::uint64_t checksum() const override { return 0; }
};

Gray8 phantom_gray(int side, std::uint64_t seed) {
  const auto s = phantom::generate_phantom(phantom::sample_spec(Label::hydrocephalus, side, seed), seed);
  return to_gray8(s.image * 255.0);
}

Outcome criterion7a() {
  model::Classifier c;
  c.backbone = std::make_shared<SingleChannelMap>();
  c.backbone_id = "single_channel";
  model::HeadConfig hc;
  hc.hidden_sizes = {};
  c.head = model::Head(1, hc, 1);
  c.head.layers()[0].weight << -1.5f, 1.5f;
  c.head.layers()[0].bias.setZero();
  c.normalization.mean = Eigen::VectorXd::Constant(3, 0.25);
  c.normalization.std = Eigen::VectorXd::Ones(3);
  c.input_side = 48;
  c.backbone_frozen = true;
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Gray8 img = phantom_gray(48, seed);
    const auto h = explain::gradcam(c, img, Label::hydrocephalus);
    // map = max(0, x/255 - 0.25) with positive weight; normalized by its own range
    const ImageD a = (img.cast<double>() / 255.0 - 0.25).max(0.0);
    const ImageD want = (a - a.minCoeff()) / (a.maxCoeff() - a.minCoeff());
    worst = std::max(worst, (h.grid - want).abs().maxCoeff());
  }
  return {worst <= kGradCamTol, "closed-form max error " + sci(worst)};
}

Outcome criterion7b() {
  const auto base = model::build_classifier("tiny_cnn", {}, 17, 64);
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const Gray8 img = phantom_gray(64, seed + 40);
    const auto ref = explain::gradcam(base, img, Label::hydrocephalus);
    for (float s : {0.5f, 2.0f, 10.0f}) {
      auto scaled = base;
      scaled.head.layers().back().weight *= s;
      scaled.head.layers().back().bias *= s;
      worst = std::max(worst, (explain::gradcam(scaled, img, Label::hydrocephalus).grid - ref.grid).abs().maxCoeff());
    }
  }
  return {worst <= kGradCamTol, "scale {0.5, 2, 10} max deviation " + sci(worst)};
}

Outcome criterion7c(const CvRun& run, const fs::path& work) {
  const auto best = std::min_element(run.results.begin(), run.results.end(), [](const auto& a, const auto& b) {
    return a.best_val_loss < b.best_val_loss;
  });
  const auto trained = model::load_checkpoint(cv::checkpoint_path(run.dir / "checkpoints", best->rep, best->fold));
  const fs::path held = work / "heldout";
  fs::remove_all(held);
  const auto m = phantom::generate_dataset(1, 20, 1007, held);
  std::set<std::string> cohort;
  for (const auto& r : run.manifest.records) cohort.insert(r.image_id + "|" + slurp(run.manifest.resolve(r)));
  int n = 0, hits = 0, overlap = 0;
  double min_score = 1.0;
  for (const auto& r : m.records) {
    if (r.label != Label::hydrocephalus) continue;
    ++n;
    const Gray8 img = ingest::load_image(m, r);
    const auto h = explain::gradcam(trained.classifier, img, Label::hydrocephalus);
    const Mask full = io::read_mask(phantom::ventricle_mask_path(m, r));
    const Mask mask = resize_bilinear<double>(full.cast<double>(), h.rows(), h.cols()) >= 0.5;
    const double s = explain::localization_score(h, mask);
    min_score = std::min(min_score, s);
    hits += s >= kMinLocalization;
    overlap += cohort.count(r.image_id + "|" + slurp(m.resolve(r))) > 0;
  }
  const double frac = n ? static_cast<double>(hits) / n : 0.0;
  return {n == 20 && overlap == 0 && frac >= kMinLocalizedFraction,
          std::to_string(hits) + "/" + std::to_string(n) + " held-out pathology phantoms at >= 0.5 (min " + fmt(min_score, 3) +
              "), model rep " + std::to_string(best->rep) + " fold " + std::to_string(best->fold)};
}

Outcome criterion8(const CvRun& first, const CvRun& second) {
  const std::string a = slurp(first.dir / "results.jsonl");
  const std::string b = slurp(second.dir / "results.jsonl");
  const bool pass = !a.empty() && a == b;
  return {pass, "results.jsonl " + std::to_string(a.size()) + " vs " + std::to_string(b.size()) + " bytes, " +
                    (a == b ? "identical" : "different") + " (rerun " + fmt(second.seconds, 1) + " s)"};
}

Outcome criterion9() {
  const preprocess::AugmentPolicy p;
  int inside = 0;
  for (std::uint64_t i = 0; i < 10000; ++i) {
    const auto d = preprocess::draw_augment(p, derive_seed(9, {i}));
    inside += d.rotation_deg >= -10.0 && d.rotation_deg <= 10.0 && d.zoom >= 1.0 && d.zoom <= 1.05 &&
              d.brightness >= 0.9 && d.brightness <= 1.1 && d.contrast >= 0.9 && d.contrast <= 1.1 && d.crop_x >= 0 &&
              d.crop_x <= 1 && d.crop_y >= 0 && d.crop_y <= 1;
  }
  const auto stats = preprocess::NormalizationStats::imagenet();
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const Gray8 g = phantom_gray(64, seed);
    const auto back = preprocess::denormalize<double>(preprocess::normalize<double>(g, stats), stats);
    for (const auto& plane : back) worst = std::max(worst, (plane - g.cast<double>()).abs().maxCoeff());
  }
  return {inside == 10000 && worst < kRoundTripTol,
          std::to_string(inside) + "/10000 draws in bounds, round-trip max error " + std::to_string(worst)};
}

}  // namespace

int main(int argc, char** argv) {
  fs::path work = fs::current_path() / "acceptance_work";
  std::set<std::string> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--work" && i + 1 < argc) work = argv[++i];
    else only.insert(a);
  }
  auto wanted = [&](const std::string& id) { return only.empty() || only.count(id) || only.count(id.substr(0, 1)); };
  fs::create_directories(work);

  int failures = 0;
  auto report = [&](const std::string& id, const std::function<Outcome()>& fn) {
    if (!wanted(id)) return;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << "criterion " << id << ": " << (o.pass ? "PASS" : "FAIL") << "  " << o.detail << std::endl;
  };

  std::optional<CvRun> first, second;
  const bool need_cv = wanted("1") || wanted("3") || wanted("7c") || wanted("8");
  if (need_cv) {
    try {
      first = run_phantom_cv(work, "run1");
    } catch (const std::exception& e) {
      std::cout << "cross-validation failed: " << e.what() << std::endl;
    }
  }
  auto with_run = [&](const std::function<Outcome(const CvRun&)>& fn) {
    return [&, fn] { return first ? fn(*first) : Outcome{false, "no cross-validation run"}; };
  };

  report("1", with_run(criterion1));
  report("2", criterion2);
  report("3", with_run(criterion3));
  report("4", criterion4);
  report("5", criterion5);
  report("6", criterion6);
  report("7a", criterion7a);
  report("7b", criterion7b);
  report("7c", with_run([&](const CvRun& r) { return criterion7c(r, work); }));
  report("8", with_run([&](const CvRun& r) {
    second = run_phantom_cv(work, "run2");
    return criterion8(r, *second);
  }));
  report("9", criterion9);
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criterion line(s) failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
