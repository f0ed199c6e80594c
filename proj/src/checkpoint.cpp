#include "hydro/checkpoint.hpp"

#include "hydro/error.hpp"
#include "hydro/imageio.hpp"
#include "hydro/rng.hpp"

#include <json.hpp>

namespace hydro::model {

using nlohmann::ordered_json;

namespace {

ordered_json floats(const float* p, Eigen::Index n) {
  ordered_json a = ordered_json::array();
  for (Eigen::Index i = 0; i < n; ++i) a.push_back(static_cast<double>(p[i]));
  return a;
}

void read_floats(const ordered_json& a, float* p, Eigen::Index n) {
  if (static_cast<Eigen::Index>(a.size()) != n) throw ValidationError("checkpoint: parameter count mismatch");
  for (Eigen::Index i = 0; i < n; ++i) p[i] = static_cast<float>(a[static_cast<std::size_t>(i)].get<double>());
}

}  // namespace

std::string serialize_checkpoint(const TrainedModel& m) {
  const auto& c = m.classifier;
  const auto& hc = c.head.config();
  ordered_json j;
  j["format"] = "hydro-checkpoint";
  j["version"] = kCheckpointVersion;
  j["backbone_id"] = c.backbone_id;
  j["backbone_checksum"] = hex64(c.backbone->checksum());
  j["input_side"] = c.input_side;
  j["normalization"] = {{"mean", std::vector<double>(c.normalization.mean.data(), c.normalization.mean.data() + c.normalization.mean.size())},
                        {"std", std::vector<double>(c.normalization.std.data(), c.normalization.std.data() + c.normalization.std.size())}};
  j["head_config"] = {{"hidden_sizes", hc.hidden_sizes},
                      {"dropout_last", hc.dropout_last},
                      {"dropout_hidden", hc.dropout_hidden},
                      {"n_classes", hc.n_classes}};
  ordered_json layers = ordered_json::array();
  for (const auto& d : c.head.layers())
    layers.push_back({{"rows", d.weight.rows()},
                      {"cols", d.weight.cols()},
                      {"weight", floats(d.weight.data(), d.weight.size())},
                      {"bias", floats(d.bias.data(), d.bias.size())}});
  j["head"] = layers;
  j["head_input"] = {{"shift", floats(c.head.input_shift().data(), c.head.input_shift().size())},
                     {"scale", floats(c.head.input_scale().data(), c.head.input_scale().size())}};
  j["head_checksum"] = hex64(c.head.checksum());
  ordered_json epochs = ordered_json::array();
  for (const auto& e : m.history.epochs)
    epochs.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}, {"lr", e.lr}});
  j["history"] = {{"epochs", epochs},
                  {"best_epoch", m.history.best_epoch},
                  {"best_val_loss", m.history.best_val_loss},
                  {"monitored_train_loss", m.history.monitored_train_loss}};
  return j.dump();
}

TrainedModel parse_checkpoint(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const ordered_json::exception& e) {
    throw IoError(std::string("checkpoint: ") + e.what());
  }
  if (j.value("format", std::string{}) != "hydro-checkpoint") throw IoError("checkpoint: not a hydro checkpoint");
  if (j.value("version", 0) != kCheckpointVersion)
    throw IoError("checkpoint: unsupported version " + std::to_string(j.value("version", 0)));
  try {
    HeadConfig hc;
    const auto& jh = j.at("head_config");
    hc.hidden_sizes = jh.at("hidden_sizes").get<std::vector<int>>();
    hc.dropout_last = jh.at("dropout_last").get<double>();
    hc.dropout_hidden = jh.at("dropout_hidden").get<double>();
    hc.n_classes = jh.at("n_classes").get<int>();

    preprocess::NormalizationStats ns;
    const auto mean = j.at("normalization").at("mean").get<std::vector<double>>();
    const auto sd = j.at("normalization").at("std").get<std::vector<double>>();
    ns.mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size()));
    ns.std = Eigen::Map<const Eigen::VectorXd>(sd.data(), static_cast<Eigen::Index>(sd.size()));

    TrainedModel m;
    m.classifier = build_classifier(j.at("backbone_id").get<std::string>(), hc, 0, j.at("input_side").get<int>(), ns);
    if (hex64(m.classifier.backbone->checksum()) != j.at("backbone_checksum").get<std::string>())
      throw IoError("checkpoint: backbone checksum mismatch");
    auto& layers = m.classifier.head.layers();
    const auto& jl = j.at("head");
    if (jl.size() != layers.size()) throw IoError("checkpoint: head depth mismatch");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      if (jl[l].at("rows").get<Eigen::Index>() != layers[l].weight.rows() ||
          jl[l].at("cols").get<Eigen::Index>() != layers[l].weight.cols())
        throw IoError("checkpoint: head layer shape mismatch");
      read_floats(jl[l].at("weight"), layers[l].weight.data(), layers[l].weight.size());
      read_floats(jl[l].at("bias"), layers[l].bias.data(), layers[l].bias.size());
    }
    const int dim = m.classifier.head.in_dim();
    VectorF shift(dim), scale(dim);
    read_floats(j.at("head_input").at("shift"), shift.data(), dim);
    read_floats(j.at("head_input").at("scale"), scale.data(), dim);
    m.classifier.head.set_input_standardization(std::move(shift), std::move(scale));
    if (j.contains("head_checksum") && j.at("head_checksum").get<std::string>() != hex64(m.classifier.head.checksum()))
      throw IoError("checkpoint: head checksum mismatch");
    freeze_backbone(m.classifier);
    const auto& jhist = j.at("history");
    for (const auto& e : jhist.at("epochs"))
      m.history.epochs.push_back({e.at("epoch").get<int>(), e.at("train_loss").get<double>(),
                                  e.at("val_loss").get<double>(), e.at("lr").get<double>()});
    m.history.best_epoch = jhist.at("best_epoch").get<int>();
    m.history.best_val_loss = jhist.at("best_val_loss").get<double>();
    m.history.monitored_train_loss = jhist.value("monitored_train_loss", false);
    m.backbone_checksum = m.classifier.backbone->checksum();
    return m;
  } catch (const ordered_json::exception& e) {
    throw IoError(std::string("checkpoint: ") + e.what());
  }
}

void save_checkpoint(const TrainedModel& model, const std::filesystem::path& path) {
  io::write_text(path, serialize_checkpoint(model));
}

TrainedModel load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = io::read_bytes(path);
  return parse_checkpoint(std::string(bytes.begin(), bytes.end()));
}

}  // namespace hydro::model
