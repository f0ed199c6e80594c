#include "hydro/fold_result.hpp"

#include "hydro/error.hpp"
#include "hydro/imageio.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>

namespace hydro::cv {

using nlohmann::ordered_json;

std::string to_jsonl_line(const FoldResult& r) {
  ordered_json probs = ordered_json::array();
  for (const auto& p : r.test_probs) probs.push_back({p[0], p[1]});
  ordered_json labels = ordered_json::array();
  for (auto l : r.test_labels) labels.push_back(std::string(to_string(l)));
  ordered_json vprobs = ordered_json::array();
  for (const auto& p : r.val_probs) vprobs.push_back({p[0], p[1]});
  ordered_json vlabels = ordered_json::array();
  for (auto l : r.val_labels) vlabels.push_back(std::string(to_string(l)));
  ordered_json j;
  j["rep"] = r.rep;
  j["fold"] = r.fold;
  j["test_ids"] = r.test_ids;
  j["test_probs"] = probs;
  j["test_labels"] = labels;
  j["val_ids"] = r.val_ids;
  j["val_probs"] = vprobs;
  j["val_labels"] = vlabels;
  j["best_val_loss"] = r.best_val_loss;
  j["epochs_run"] = r.epochs_run;
  j["best_epoch"] = r.best_epoch;
  j["head_checksum"] = r.head_checksum;
  j["backbone_checksum_before"] = r.backbone_checksum_before;
  j["backbone_checksum_after"] = r.backbone_checksum_after;
  return j.dump();
}

FoldResult parse_jsonl_line(const std::string& line) {
  const auto j = ordered_json::parse(line);
  FoldResult r;
  r.rep = j.at("rep").get<int>();
  r.fold = j.at("fold").get<int>();
  r.test_ids = j.at("test_ids").get<std::vector<std::string>>();
  for (const auto& p : j.at("test_probs")) r.test_probs.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
  for (const auto& l : j.at("test_labels")) r.test_labels.push_back(parse_label(l.get<std::string>()));
  if (j.contains("val_ids")) {
    r.val_ids = j.at("val_ids").get<std::vector<std::string>>();
    for (const auto& p : j.at("val_probs")) r.val_probs.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    for (const auto& l : j.at("val_labels")) r.val_labels.push_back(parse_label(l.get<std::string>()));
    if (r.val_ids.size() != r.val_probs.size() || r.val_ids.size() != r.val_labels.size())
      throw ValidationError("fold result: val_ids, val_probs and val_labels differ in length");
  }
  r.best_val_loss = j.at("best_val_loss").get<double>();
  r.epochs_run = j.at("epochs_run").get<int>();
  r.best_epoch = j.value("best_epoch", 0);
  r.head_checksum = j.value("head_checksum", std::string{});
  r.backbone_checksum_before = j.value("backbone_checksum_before", std::string{});
  r.backbone_checksum_after = j.value("backbone_checksum_after", std::string{});
  if (r.test_ids.size() != r.test_probs.size() || r.test_ids.size() != r.test_labels.size())
    throw ValidationError("fold result: test_ids, test_probs and test_labels differ in length");
  return r;
}

std::vector<FoldResult> read_results(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read results " + path.string());
  std::vector<FoldResult> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(parse_jsonl_line(line));
    } catch (const nlohmann::json::exception& e) {
      // A line cut short by an interrupted run is dropped; that fold reruns on resume.
      if (in.peek() == EOF) break;
      throw IoError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void write_results(const std::filesystem::path& path, std::vector<FoldResult> results) {
  std::sort(results.begin(), results.end(),
            [](const auto& a, const auto& b) { return std::tie(a.rep, a.fold) < std::tie(b.rep, b.fold); });
  std::string text;
  for (const auto& r : results) text += to_jsonl_line(r) + "\n";
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  io::write_text(tmp, text);
  std::filesystem::rename(tmp, path);
}

void append_result(const std::filesystem::path& path, const FoldResult& result) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw IoError("cannot append to " + path.string());
  out << to_jsonl_line(result) << '\n';
  out.flush();
}

}  // namespace hydro::cv
