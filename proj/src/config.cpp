#include "hydro/config.hpp"

#include "hydro/error.hpp"
#include "hydro/imageio.hpp"

#include <cstdlib>
#include <set>

namespace hydro {

using nlohmann::json;
namespace fs = std::filesystem;

void PipelineConfig::validate() const {
  try {
    augment.validate();
    normalization.validate();
    head.validate();
    train.validate();
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  if (cv.j < 1) throw ConfigError("cv.j must be >= 1");
  if (cv.k < 2) throw ConfigError("cv.k must be >= 2");
  if (!(cv.val_fraction > 0 && cv.val_fraction < 1)) throw ConfigError("cv.val_fraction must lie in (0,1)");
  if (cv.workers < 0) throw ConfigError("cv.workers must be >= 0");
  if (stats.n_resamples < 1) throw ConfigError("stats.n_resamples must be >= 1");
  if (!(stats.threshold >= 0 && stats.threshold <= 1)) throw ConfigError("stats.threshold must lie in [0,1]");
  if (!(explain.alpha >= 0 && explain.alpha <= 1)) throw ConfigError("explain.alpha must lie in [0,1]");
}

void PipelineConfig::set_seed(std::uint64_t seed) {
  cv.seed = seed;
  train.seed = seed;
  stats.seed = seed;
}

namespace {

void check_keys(const json& obj, const std::string& section, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ConfigError("config section '" + section + "' must be an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, _] : obj.items())
    if (!ok.count(key)) throw ConfigError("unknown config key '" + (section.empty() ? key : section + "." + key) + "'");
}

template <class T>
void get(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_relative() && !base.empty() ? base / path : path;
}

}  // namespace

PipelineConfig parse_config(const json& doc, const fs::path& base_dir) {
  PipelineConfig c;
  try {
    check_keys(doc, "", {"paths", "augment", "normalization", "head", "train", "cv", "stats", "explain", "seed"});
    if (doc.contains("seed")) c.set_seed(doc.at("seed").get<std::uint64_t>());
    if (doc.contains("paths")) {
      const auto& p = doc.at("paths");
      check_keys(p, "paths", {"manifest", "output_dir"});
      if (p.contains("manifest")) c.manifest = resolve(base_dir, p.at("manifest").get<std::string>());
      if (p.contains("output_dir")) c.output_dir = resolve(base_dir, p.at("output_dir").get<std::string>());
    }
    if (doc.contains("augment")) {
      const auto& a = doc.at("augment");
      check_keys(a, "augment",
                 {"p_apply", "max_rotation_deg", "max_zoom", "lighting_range", "contrast_range", "output_side"});
      get(a, "p_apply", c.augment.p_apply);
      get(a, "max_rotation_deg", c.augment.max_rotation_deg);
      get(a, "max_zoom", c.augment.max_zoom);
      get(a, "lighting_range", c.augment.lighting_range);
      get(a, "contrast_range", c.augment.contrast_range);
      get(a, "output_side", c.augment.output_side);
    }
    if (doc.contains("normalization")) {
      const auto& n = doc.at("normalization");
      check_keys(n, "normalization", {"mean", "std"});
      if (n.contains("mean")) {
        const auto v = n.at("mean").get<std::vector<double>>();
        c.normalization.mean = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
      }
      if (n.contains("std")) {
        const auto v = n.at("std").get<std::vector<double>>();
        c.normalization.std = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
      }
    }
    if (doc.contains("head")) {
      const auto& h = doc.at("head");
      check_keys(h, "head", {"hidden_sizes", "dropout_last", "dropout_hidden", "n_classes"});
      get(h, "hidden_sizes", c.head.hidden_sizes);
      get(h, "dropout_last", c.head.dropout_last);
      get(h, "dropout_hidden", c.head.dropout_hidden);
      get(h, "n_classes", c.head.n_classes);
    }
    if (doc.contains("train")) {
      const auto& t = doc.at("train");
      check_keys(t, "train",
                 {"learning_rate", "epochs_max", "batch_size", "patience", "seed", "backbone_id", "one_cycle"});
      get(t, "learning_rate", c.train.learning_rate);
      get(t, "epochs_max", c.train.epochs_max);
      get(t, "batch_size", c.train.batch_size);
      get(t, "patience", c.train.patience);
      get(t, "seed", c.train.seed);
      get(t, "backbone_id", c.train.backbone_id);
      if (t.contains("one_cycle")) {
        const auto& o = t.at("one_cycle");
        check_keys(o, "train.one_cycle", {"pct_start", "div_start", "div_final"});
        get(o, "pct_start", c.train.one_cycle.pct_start);
        get(o, "div_start", c.train.one_cycle.div_start);
        get(o, "div_final", c.train.one_cycle.div_final);
      }
    }
    c.train.one_cycle.lr_max = c.train.learning_rate;
    if (doc.contains("cv")) {
      const auto& v = doc.at("cv");
      check_keys(v, "cv", {"j", "k", "seed", "group_by_patient", "val_fraction", "workers"});
      get(v, "j", c.cv.j);
      get(v, "k", c.cv.k);
      get(v, "seed", c.cv.seed);
      get(v, "group_by_patient", c.cv.group_by_patient);
      get(v, "val_fraction", c.cv.val_fraction);
      get(v, "workers", c.cv.workers);
    }
    if (doc.contains("stats")) {
      const auto& s = doc.at("stats");
      check_keys(s, "stats", {"n_resamples", "seed", "threshold", "objective", "constraint", "mode"});
      get(s, "n_resamples", c.stats.n_resamples);
      get(s, "seed", c.stats.seed);
      get(s, "threshold", c.stats.threshold);
      get(s, "constraint", c.stats.constraint);
      if (s.contains("objective")) c.stats.objective = stats::parse_objective(s.at("objective").get<std::string>());
      if (s.contains("mode")) {
        const auto m = s.at("mode").get<std::string>();
        if (m == "fold_metrics") c.stats.mode = stats::BootstrapMode::fold_metrics;
        else if (m == "pooled") c.stats.mode = stats::BootstrapMode::pooled;
        else throw ConfigError("stats.mode must be fold_metrics or pooled");
      }
    }
    if (doc.contains("explain")) {
      const auto& e = doc.at("explain");
      check_keys(e, "explain", {"layer", "alpha"});
      get(e, "layer", c.explain.layer);
      get(e, "alpha", c.explain.alpha);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

PipelineConfig load_config(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
  const auto bytes = io::read_bytes(path);
  json doc;
  try {
    doc = json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_config(doc, fs::absolute(path).parent_path());
}

json to_json(const PipelineConfig& c) {
  auto vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  return json{
      {"paths", {{"manifest", c.manifest.string()}, {"output_dir", c.output_dir.string()}}},
      {"augment",
       {{"p_apply", c.augment.p_apply},
        {"max_rotation_deg", c.augment.max_rotation_deg},
        {"max_zoom", c.augment.max_zoom},
        {"lighting_range", c.augment.lighting_range},
        {"contrast_range", c.augment.contrast_range},
        {"output_side", c.augment.output_side}}},
      {"normalization", {{"mean", vec(c.normalization.mean)}, {"std", vec(c.normalization.std)}}},
      {"head",
       {{"hidden_sizes", c.head.hidden_sizes},
        {"dropout_last", c.head.dropout_last},
        {"dropout_hidden", c.head.dropout_hidden},
        {"n_classes", c.head.n_classes}}},
      {"train",
       {{"learning_rate", c.train.learning_rate},
        {"epochs_max", c.train.epochs_max},
        {"batch_size", c.train.batch_size},
        {"patience", c.train.patience},
        {"seed", c.train.seed},
        {"backbone_id", c.train.backbone_id},
        {"one_cycle",
         {{"pct_start", c.train.one_cycle.pct_start},
          {"div_start", c.train.one_cycle.div_start},
          {"div_final", c.train.one_cycle.div_final}}}}},
      {"cv",
       {{"j", c.cv.j},
        {"k", c.cv.k},
        {"seed", c.cv.seed},
        {"group_by_patient", c.cv.group_by_patient},
        {"val_fraction", c.cv.val_fraction},
        {"workers", c.cv.workers}}},
      {"stats",
       {{"n_resamples", c.stats.n_resamples},
        {"seed", c.stats.seed},
        {"threshold", c.stats.threshold},
        {"objective", std::string(stats::to_string(c.stats.objective))},
        {"constraint", c.stats.constraint},
        {"mode", c.stats.mode == stats::BootstrapMode::pooled ? "pooled" : "fold_metrics"}}},
      {"explain", {{"layer", c.explain.layer}, {"alpha", c.explain.alpha}}}};
}

std::optional<std::uint64_t> seed_from_env() {
  const char* v = std::getenv("HYDRO_SEED");
  if (!v || !*v) return std::nullopt;
  char* end = nullptr;
  const unsigned long long s = std::strtoull(v, &end, 10);
  if (*end != '\0') throw ConfigError(std::string("HYDRO_SEED is not an unsigned integer: ") + v);
  return static_cast<std::uint64_t>(s);
}

}  // namespace hydro
