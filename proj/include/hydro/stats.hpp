#pragma once

#include "hydro/fold_result.hpp"
#include "hydro/types.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace hydro::stats {

/// Counts with hydrocephalus as the positive class.
struct ConfusionMatrix {
  long tp = 0, fp = 0, tn = 0, fn = 0;

  long total() const { return tp + fp + tn + fn; }
  bool operator==(const ConfusionMatrix&) const = default;
};

/// Predicts hydrocephalus iff p_path >= threshold.
ConfusionMatrix confusion(std::span<const Label> labels, std::span<const double> p_path, double threshold);

/// Sensitivity/specificity are empty when their denominator is zero.
struct Metrics {
  double accuracy = 0;
  std::optional<double> sensitivity;
  std::optional<double> specificity;
};

Metrics metrics(const ConfusionMatrix& cm);

/// Linear interpolation between order statistics: position q*(n-1) in the sorted sample.
double percentile_linear(std::span<const double> sorted, double q);

struct BootstrapSummary {
  std::string metric_name;
  double median = 0;
  double p2_5 = 0;
  double p97_5 = 0;
  long n_resamples = 0;
  std::uint64_t seed = 0;
};

inline constexpr long kDefaultResamples = 10000;

/// Resamples `values` with replacement n_resamples times from Rng(seed), each index drawn with
/// bounded_index, and summarizes the resample means.
BootstrapSummary bootstrap_summary(std::span<const double> values, long n_resamples, std::uint64_t seed,
                                   std::string metric_name = {});

/// The resample means bootstrap_summary sorts and summarizes, in draw order.
std::vector<double> bootstrap_means(std::span<const double> values, long n_resamples, std::uint64_t seed);

/// "97.5% (96.4 - 98.2)"
std::string format_summary(const BootstrapSummary& s);

enum class BootstrapMode { fold_metrics, pooled };

struct FoldMetrics {
  int rep = 0, fold = 0;
  ConfusionMatrix cm;
  Metrics metrics;
};

struct CvSummary {
  BootstrapSummary accuracy, sensitivity, specificity;
  std::vector<FoldMetrics> folds;
  ConfusionMatrix pooled;
  double threshold = 0.5;
  BootstrapMode mode = BootstrapMode::fold_metrics;
};

/// Seed of the k-th metric summary (0 accuracy, 1 sensitivity, 2 specificity).
std::uint64_t metric_seed(std::uint64_t seed, int metric_index);

CvSummary aggregate_cv(std::span<const cv::FoldResult> folds, double threshold, long n_resamples, std::uint64_t seed,
                       BootstrapMode mode = BootstrapMode::fold_metrics);

/// The three report lines: "accuracy: 97.5% (96.4 - 98.2)" and so on.
std::string format_report(const CvSummary& summary);

enum class Objective { max_youden, min_sensitivity_at, min_specificity_at };

std::string_view to_string(Objective o) noexcept;
Objective parse_objective(std::string_view text);

struct ThresholdRow {
  double threshold = 0;
  double sensitivity = 0;
  double specificity = 0;
  double accuracy = 0;
};

struct ThresholdReport {
  std::vector<ThresholdRow> sweep;  ///< strictly increasing thresholds
  Objective objective = Objective::max_youden;
  double constraint = 0;
  /// Empty when no threshold satisfies a constrained objective.
  std::optional<double> chosen_threshold;
  std::optional<ThresholdRow> chosen;
};

/// Sweeps every distinct probability plus {0, 1}. Constrained objectives maximise the other rate
/// subject to the constraint and only admit thresholds where that other rate is positive, so the
/// trivial all-one-class classifier never satisfies them. Ties go to the larger threshold.
ThresholdReport calibrate_threshold(std::span<const Label> labels, std::span<const double> p_path, Objective objective,
                                    double constraint = 0.0);

nlohmann::json to_json(const BootstrapSummary& s);
nlohmann::json to_json(const ConfusionMatrix& cm);
nlohmann::json to_json(const CvSummary& s);
nlohmann::json to_json(const ThresholdReport& r);

}  // namespace hydro::stats
