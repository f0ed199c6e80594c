#pragma once

#include "hydro/model.hpp"
#include "hydro/types.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace hydro::cv {

/// Test-set outcome of one (repetition, fold) training run.
struct FoldResult {
  int rep = 0;
  int fold = 0;
  std::vector<std::string> test_ids;
  std::vector<model::ClassProbs> test_probs;
  std::vector<Label> test_labels;
  /// Validation-set predictions of the selected model, used for threshold calibration.
  std::vector<std::string> val_ids;
  std::vector<model::ClassProbs> val_probs;
  std::vector<Label> val_labels;
  double best_val_loss = 0;
  int epochs_run = 0;
  int best_epoch = 0;
  std::string head_checksum;
  std::string backbone_checksum_before;
  std::string backbone_checksum_after;

  bool operator==(const FoldResult&) const = default;
};

/// One JSON object per line, keys in fixed order, probabilities printed round-trip exact.
std::string to_jsonl_line(const FoldResult& result);
FoldResult parse_jsonl_line(const std::string& line);

std::vector<FoldResult> read_results(const std::filesystem::path& path);
/// Rewrites the file with results sorted by (rep, fold).
void write_results(const std::filesystem::path& path, std::vector<FoldResult> results);
void append_result(const std::filesystem::path& path, const FoldResult& result);

}  // namespace hydro::cv
