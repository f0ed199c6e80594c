#pragma once

#include "hydro/model.hpp"
#include "hydro/preprocess.hpp"
#include "hydro/stats.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

namespace hydro {

struct CvParams {
  int j = 5;
  int k = 5;
  std::uint64_t seed = 0;
  bool group_by_patient = true;
  double val_fraction = 0.2;
  /// 0 = available cores, capped at j*k.
  int workers = 0;
};

struct StatsParams {
  long n_resamples = stats::kDefaultResamples;
  std::uint64_t seed = 0;
  double threshold = 0.5;
  stats::Objective objective = stats::Objective::max_youden;
  double constraint = 0.0;
  stats::BootstrapMode mode = stats::BootstrapMode::fold_metrics;
};

struct ExplainParams {
  std::string layer = "conv3";
  double alpha = 0.5;
};

/// Everything one pipeline run needs. Serialized as a nested JSON document whose sections
/// mirror the members; absent keys keep their defaults, unknown keys are rejected.
struct PipelineConfig {
  std::filesystem::path manifest;
  std::filesystem::path output_dir;
  preprocess::AugmentPolicy augment;
  preprocess::NormalizationStats normalization = preprocess::NormalizationStats::imagenet();
  model::HeadConfig head;
  model::TrainConfig train;
  CvParams cv;
  StatsParams stats;
  ExplainParams explain;

  void validate() const;
  /// Sets cv, train and stats seeds together.
  void set_seed(std::uint64_t seed);
};

/// Throws ConfigError on malformed documents, unknown keys or violated bounds.
PipelineConfig parse_config(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});
PipelineConfig load_config(const std::filesystem::path& path);
nlohmann::json to_json(const PipelineConfig& config);

/// HYDRO_SEED, when set to an unsigned integer, replaces every seed in the config.
std::optional<std::uint64_t> seed_from_env();

}  // namespace hydro
