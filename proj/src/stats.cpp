#include "hydro/stats.hpp"

#include "hydro/error.hpp"
#include "hydro/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

namespace hydro::stats {

using nlohmann::json;

ConfusionMatrix confusion(std::span<const Label> labels, std::span<const double> p_path, double threshold) {
  if (labels.size() != p_path.size())
    throw ValidationError("confusion: " + std::to_string(labels.size()) + " labels vs " +
                          std::to_string(p_path.size()) + " probabilities");
  if (labels.empty()) throw ValidationError("confusion: no predictions");
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool predicted = p_path[i] >= threshold;
    if (labels[i] == Label::hydrocephalus)
      predicted ? ++cm.tp : ++cm.fn;
    else
      predicted ? ++cm.fp : ++cm.tn;
  }
  return cm;
}

Metrics metrics(const ConfusionMatrix& cm) {
  if (cm.tp < 0 || cm.fp < 0 || cm.tn < 0 || cm.fn < 0) throw ValidationError("metrics: negative count");
  if (cm.total() == 0) throw ValidationError("metrics: empty confusion matrix");
  Metrics m;
  m.accuracy = static_cast<double>(cm.tp + cm.tn) / static_cast<double>(cm.total());
  if (cm.tp + cm.fn > 0) m.sensitivity = static_cast<double>(cm.tp) / static_cast<double>(cm.tp + cm.fn);
  if (cm.tn + cm.fp > 0) m.specificity = static_cast<double>(cm.tn) / static_cast<double>(cm.tn + cm.fp);
  return m;
}

double percentile_linear(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw ValidationError("percentile of an empty sample");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  if (frac == 0.0) return sorted[lo];
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

std::vector<double> bootstrap_means(std::span<const double> values, long n_resamples, std::uint64_t seed) {
  if (values.empty()) throw ValidationError("bootstrap_summary: empty values");
  if (n_resamples < 1) throw ValidationError("bootstrap_summary: n_resamples must be >= 1");
  Rng rng(seed);
  const auto n = static_cast<std::uint64_t>(values.size());
  std::vector<double> means(static_cast<std::size_t>(n_resamples));
  for (auto& m : means) {
    double sum = 0;
    for (std::uint64_t i = 0; i < n; ++i) sum += values[bounded_index(rng, n)];
    m = sum / static_cast<double>(n);
  }
  return means;
}

namespace {

BootstrapSummary summarize(std::vector<double> stats, long n_resamples, std::uint64_t seed, std::string name) {
  std::sort(stats.begin(), stats.end());
  BootstrapSummary s;
  s.metric_name = std::move(name);
  s.median = percentile_linear(stats, 0.5);
  s.p2_5 = percentile_linear(stats, 0.025);
  s.p97_5 = percentile_linear(stats, 0.975);
  s.n_resamples = n_resamples;
  s.seed = seed;
  return s;
}

}  // namespace

BootstrapSummary bootstrap_summary(std::span<const double> values, long n_resamples, std::uint64_t seed,
                                   std::string metric_name) {
  return summarize(bootstrap_means(values, n_resamples, seed), n_resamples, seed, std::move(metric_name));
}

std::string format_summary(const BootstrapSummary& s) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%.1f%% (%.1f - %.1f)", 100.0 * s.median, 100.0 * s.p2_5, 100.0 * s.p97_5);
  return buf;
}

std::uint64_t metric_seed(std::uint64_t seed, int metric_index) {
  return derive_seed(seed, {static_cast<std::uint64_t>(metric_index)});
}

namespace {

constexpr const char* kMetricNames[3] = {"accuracy", "sensitivity", "specificity"};

std::optional<double> metric_value(const Metrics& m, int index) {
  switch (index) {
    case 0: return m.accuracy;
    case 1: return m.sensitivity;
    default: return m.specificity;
  }
}

BootstrapSummary pooled_bootstrap(std::span<const Label> labels, std::span<const double> probs, double threshold,
                                  int metric, long n_resamples, std::uint64_t seed) {
  Rng rng(seed);
  const auto n = static_cast<std::uint64_t>(labels.size());
  std::vector<double> stats;
  stats.reserve(static_cast<std::size_t>(n_resamples));
  std::vector<Label> l(n);
  std::vector<double> p(n);
  for (long b = 0; b < n_resamples; ++b) {
    for (std::uint64_t i = 0; i < n; ++i) {
      const auto k = bounded_index(rng, n);
      l[i] = labels[k];
      p[i] = probs[k];
    }
    if (auto v = metric_value(metrics(confusion(l, p, threshold)), metric)) stats.push_back(*v);
  }
  if (stats.empty()) throw ValidationError(std::string("aggregate_cv: ") + kMetricNames[metric] + " undefined in every resample");
  return summarize(std::move(stats), n_resamples, seed, kMetricNames[metric]);
}

}  // namespace

CvSummary aggregate_cv(std::span<const cv::FoldResult> folds, double threshold, long n_resamples, std::uint64_t seed,
                       BootstrapMode mode) {
  if (folds.empty()) throw ValidationError("aggregate_cv: no fold results");
  CvSummary out;
  out.threshold = threshold;
  out.mode = mode;
  std::vector<Label> all_labels;
  std::vector<double> all_probs;
  for (const auto& f : folds) {
    if (f.test_ids.empty()) throw ValidationError("aggregate_cv: fold (" + std::to_string(f.rep) + ", " +
                                                  std::to_string(f.fold) + ") has an empty test set");
    std::vector<double> p;
    for (const auto& pr : f.test_probs) p.push_back(pr[1]);
    FoldMetrics fm;
    fm.rep = f.rep;
    fm.fold = f.fold;
    fm.cm = confusion(f.test_labels, p, threshold);
    fm.metrics = metrics(fm.cm);
    out.pooled.tp += fm.cm.tp;
    out.pooled.fp += fm.cm.fp;
    out.pooled.tn += fm.cm.tn;
    out.pooled.fn += fm.cm.fn;
    out.folds.push_back(fm);
    all_labels.insert(all_labels.end(), f.test_labels.begin(), f.test_labels.end());
    all_probs.insert(all_probs.end(), p.begin(), p.end());
  }

  BootstrapSummary* targets[3] = {&out.accuracy, &out.sensitivity, &out.specificity};
  for (int k = 0; k < 3; ++k) {
    const std::uint64_t s = metric_seed(seed, k);
    if (mode == BootstrapMode::pooled) {
      *targets[k] = pooled_bootstrap(all_labels, all_probs, threshold, k, n_resamples, s);
      continue;
    }
    std::vector<double> values;
    for (const auto& fm : out.folds)
      if (auto v = metric_value(fm.metrics, k)) values.push_back(*v);
    if (values.empty()) throw ValidationError(std::string("aggregate_cv: ") + kMetricNames[k] + " undefined in every fold");
    *targets[k] = bootstrap_summary(values, n_resamples, s, kMetricNames[k]);
  }
  return out;
}

std::string format_report(const CvSummary& s) {
  std::string out;
  for (const auto* b : {&s.accuracy, &s.sensitivity, &s.specificity}) out += b->metric_name + ": " + format_summary(*b) + "\n";
  return out;
}

std::string_view to_string(Objective o) noexcept {
  switch (o) {
    case Objective::max_youden: return "max_youden";
    case Objective::min_sensitivity_at: return "min_sensitivity_at";
    case Objective::min_specificity_at: return "min_specificity_at";
  }
  return "max_youden";
}

Objective parse_objective(std::string_view text) {
  if (text == "max_youden") return Objective::max_youden;
  if (text == "min_sensitivity_at") return Objective::min_sensitivity_at;
  if (text == "min_specificity_at") return Objective::min_specificity_at;
  throw ConfigError("unknown objective '" + std::string(text) + "'");
}

ThresholdReport calibrate_threshold(std::span<const Label> labels, std::span<const double> p_path, Objective objective,
                                    double constraint) {
  if (labels.size() != p_path.size()) throw ValidationError("calibrate_threshold: length mismatch");
  const bool has_pos = std::find(labels.begin(), labels.end(), Label::hydrocephalus) != labels.end();
  const bool has_neg = std::find(labels.begin(), labels.end(), Label::normal) != labels.end();
  if (!has_pos || !has_neg) throw ValidationError("calibrate_threshold: both classes must be present");

  std::vector<double> candidates(p_path.begin(), p_path.end());
  candidates.push_back(0.0);
  candidates.push_back(1.0);
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

  ThresholdReport report;
  report.objective = objective;
  report.constraint = constraint;
  for (double t : candidates) {
    const Metrics m = metrics(confusion(labels, p_path, t));
    report.sweep.push_back({t, *m.sensitivity, *m.specificity, m.accuracy});
  }

  std::optional<std::size_t> best;
  double best_score = 0;
  for (std::size_t i = 0; i < report.sweep.size(); ++i) {
    const auto& row = report.sweep[i];
    double score;
    if (objective == Objective::max_youden) {
      score = row.sensitivity + row.specificity - 1.0;
    } else if (objective == Objective::min_sensitivity_at) {
      if (row.sensitivity < constraint || row.specificity <= 0.0) continue;
      score = row.specificity;
    } else {
      if (row.specificity < constraint || row.sensitivity <= 0.0) continue;
      score = row.sensitivity;
    }
    if (!best || score >= best_score) {
      best = i;
      best_score = score;
    }
  }
  if (best) {
    report.chosen = report.sweep[*best];
    report.chosen_threshold = report.sweep[*best].threshold;
  }
  return report;
}

json to_json(const BootstrapSummary& s) {
  return json{{"metric", s.metric_name}, {"median", s.median},           {"p2_5", s.p2_5},
              {"p97_5", s.p97_5},        {"n_resamples", s.n_resamples}, {"seed", s.seed},
              {"text", format_summary(s)}};
}

json to_json(const ConfusionMatrix& cm) { return json{{"tp", cm.tp}, {"fp", cm.fp}, {"tn", cm.tn}, {"fn", cm.fn}}; }

namespace {
json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }
}  // namespace

json to_json(const CvSummary& s) {
  json folds = json::array();
  for (const auto& f : s.folds)
    folds.push_back({{"rep", f.rep},
                     {"fold", f.fold},
                     {"counts", to_json(f.cm)},
                     {"accuracy", f.metrics.accuracy},
                     {"sensitivity", optional_json(f.metrics.sensitivity)},
                     {"specificity", optional_json(f.metrics.specificity)}});
  return json{{"threshold", s.threshold},
              {"bootstrap_mode", s.mode == BootstrapMode::pooled ? "pooled" : "fold_metrics"},
              {"fold_count", s.folds.size()},
              {"pooled_counts", to_json(s.pooled)},
              {"folds", folds},
              {"summaries",
               {{"accuracy", to_json(s.accuracy)},
                {"sensitivity", to_json(s.sensitivity)},
                {"specificity", to_json(s.specificity)}}}};
}

json to_json(const ThresholdReport& r) {
  json sweep = json::array();
  for (const auto& row : r.sweep)
    sweep.push_back({{"threshold", row.threshold},
                     {"sensitivity", row.sensitivity},
                     {"specificity", row.specificity},
                     {"accuracy", row.accuracy}});
  json out{{"objective", std::string(to_string(r.objective))},
           {"constraint", r.constraint},
           {"feasible", r.chosen_threshold.has_value()},
           {"chosen_threshold", optional_json(r.chosen_threshold)},
           {"sweep", sweep}};
  if (r.chosen)
    out["chosen"] = {{"threshold", r.chosen->threshold},
                     {"sensitivity", r.chosen->sensitivity},
                     {"specificity", r.chosen->specificity},
                     {"accuracy", r.chosen->accuracy}};
  return out;
}

}  // namespace hydro::stats
