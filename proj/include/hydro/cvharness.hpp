#pragma once

#include "hydro/fold_result.hpp"
#include "hydro/ingest.hpp"
#include "hydro/model.hpp"
#include "hydro/preprocess.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace hydro::cv {

/// Disjoint record-id sets of one (repetition, fold); each list follows manifest order.
struct FoldAssignment {
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;
};

struct FoldPlan {
  int j = 0;
  int k = 0;
  std::uint64_t seed = 0;
  bool group_by_patient = true;
  double val_fraction = 0.2;
  /// assignments[rep][fold]
  std::vector<std::vector<FoldAssignment>> assignments;

  const FoldAssignment& at(int rep, int fold) const { return assignments.at(rep).at(fold); }
};

/// Seed of repetition `rep`'s shuffle, and of a (rep, fold) run.
std::uint64_t rep_seed(std::uint64_t seed, int rep);
std::uint64_t fold_seed(std::uint64_t seed, int rep, int fold);

/// Stratified J x K planning over groups (patients when group_by_patient, else single records).
/// Each class's groups are shuffled per repetition and dealt round-robin into k folds; the
/// non-test groups of each fold are split into train/val per class by val_fraction.
FoldPlan plan_folds(const ingest::DatasetManifest& manifest, int j, int k, std::uint64_t seed, bool group_by_patient,
                    double val_fraction);

enum class LeakKind { overlap, test_overlap, coverage, unknown_id, patient_overlap, shape };

std::string_view to_string(LeakKind kind) noexcept;

struct LeakFinding {
  LeakKind kind;
  int rep = -1;
  int fold = -1;
  std::string id;
  std::string detail;
};

struct LeakageReport {
  std::vector<LeakFinding> findings;
  bool empty() const noexcept { return findings.empty(); }
};

/// Brute-force check of every plan invariant.
LeakageReport verify_no_leakage(const FoldPlan& plan, const ingest::DatasetManifest& manifest);

struct CvOptions {
  int workers = 1;
  /// Completed folds are appended here as they finish and the file is rewritten sorted at the end.
  std::optional<std::filesystem::path> results_path;
  /// Skip (rep, fold) pairs already present in results_path.
  bool resume = false;
  std::optional<std::filesystem::path> checkpoint_dir;
  /// Stop after this many newly trained folds; the run is left resumable.
  std::optional<int> max_new_folds;
  std::function<void(const FoldResult&)> on_result;
};

/// Trains and evaluates one fresh classifier per (rep, fold). Results are sorted by (rep, fold).
std::vector<FoldResult> run_cv(const ingest::DatasetManifest& manifest, const FoldPlan& plan,
                               const model::HeadConfig& head_cfg, const model::TrainConfig& train_cfg,
                               const preprocess::AugmentPolicy& policy, const CvOptions& options = {},
                               const preprocess::NormalizationStats& stats = preprocess::NormalizationStats::imagenet());

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, int rep, int fold);

}  // namespace hydro::cv
