#include "hydro/model.hpp"

#include "hydro/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace hydro::model {

void HeadConfig::validate() const {
  if (!(dropout_last >= 0 && dropout_last < 1)) throw ValidationError("HeadConfig: dropout_last must lie in [0,1)");
  if (!(dropout_hidden >= 0 && dropout_hidden < 1)) throw ValidationError("HeadConfig: dropout_hidden must lie in [0,1)");
  if (n_classes != kNumClasses) throw ValidationError("HeadConfig: n_classes must be 2");
  for (int w : hidden_sizes)
    if (w < 1) throw ValidationError("HeadConfig: hidden widths must be >= 1");
}

void OneCycleConfig::validate() const {
  if (!(lr_max > 0)) throw ValidationError("OneCycleConfig: lr_max must be > 0");
  if (!(pct_start > 0 && pct_start < 1)) throw ValidationError("OneCycleConfig: pct_start must lie in (0,1)");
  if (!(div_start > 1)) throw ValidationError("OneCycleConfig: div_start must be > 1");
  if (!(div_final > 1)) throw ValidationError("OneCycleConfig: div_final must be > 1");
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0)) throw ValidationError("TrainConfig: learning_rate must be > 0");
  if (epochs_max < 1) throw ValidationError("TrainConfig: epochs_max must be >= 1");
  if (patience < 1) throw ValidationError("TrainConfig: patience must be >= 1");
  if (batch_size < 1) throw ValidationError("TrainConfig: batch_size must be >= 1");
  one_cycle.validate();
}

double one_cycle_lr(long step, long total_steps, const OneCycleConfig& cfg) {
  if (total_steps < 2) throw RangeError("one_cycle_lr: total_steps must be >= 2");
  if (step < 0 || step >= total_steps)
    throw RangeError("one_cycle_lr: step " + std::to_string(step) + " outside [0, " + std::to_string(total_steps) + ")");
  const double lr_start = cfg.lr_max / cfg.div_start, lr_end = cfg.lr_max / cfg.div_final;
  const long peak = std::lround(cfg.pct_start * static_cast<double>(total_steps));
  if (step <= peak) {
    if (peak == 0) return cfg.lr_max;
    const double t = static_cast<double>(step) / static_cast<double>(peak);
    return lr_start + (cfg.lr_max - lr_start) * (1.0 - std::cos(std::numbers::pi * t)) / 2.0;
  }
  const long span = total_steps - 1 - peak;
  const double t = static_cast<double>(step - peak) / static_cast<double>(span);
  return lr_end + (cfg.lr_max - lr_end) * (1.0 + std::cos(std::numbers::pi * t)) / 2.0;
}

Head::Head(int in_dim, const HeadConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg.validate();
  Rng rng(seed);
  std::vector<int> widths{in_dim};
  widths.insert(widths.end(), cfg.hidden_sizes.begin(), cfg.hidden_sizes.end());
  widths.push_back(cfg.n_classes);
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    nn::Dense d;
    const double bound = 1.0 / std::sqrt(static_cast<double>(widths[i]));
    d.weight.resize(widths[i + 1], widths[i]);
    for (Eigen::Index k = 0; k < d.weight.size(); ++k) d.weight.data()[k] = static_cast<float>(uniform(rng, -bound, bound));
    d.bias = VectorF::Zero(widths[i + 1]);
    layers_.push_back(std::move(d));
  }
  shift_ = VectorF::Zero(in_dim);
  scale_ = VectorF::Ones(in_dim);
}

void Head::set_input_standardization(VectorF shift, VectorF scale) {
  if (shift.size() != in_dim() || scale.size() != in_dim())
    throw ShapeError("head: standardization size differs from input dim");
  if (!shift.allFinite() || !scale.allFinite()) throw NumericError("head: non-finite standardization", -1);
  shift_ = std::move(shift);
  scale_ = std::move(scale);
}

void Head::fit_input_standardization(const MatrixF& x) {
  if (x.rows() != in_dim() || x.cols() < 1) throw ShapeError("head: bad standardization sample");
  const Eigen::MatrixXd xd = x.cast<double>();
  const Eigen::VectorXd mean = xd.rowwise().mean();
  const Eigen::VectorXd sd = (xd.colwise() - mean).array().square().rowwise().mean().sqrt();
  set_input_standardization(mean.cast<float>(), (1.0 / sd.array().max(1e-8)).cast<float>().matrix());
}

MatrixF Head::standardize(const MatrixF& x) const {
  return ((x.colwise() - shift_).array().colwise() * scale_.array()).matrix();
}

MatrixF Head::logits(const MatrixF& x) const {
  if (x.rows() != in_dim()) throw ShapeError("head: expected " + std::to_string(in_dim()) + " features");
  MatrixF a = standardize(x);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    MatrixF z = layers_[l].weight * a;
    z.colwise() += layers_[l].bias;
    a = l + 1 < layers_.size() ? MatrixF(z.cwiseMax(0.0f)) : std::move(z);
  }
  return a;
}

VectorF Head::logits(const VectorF& x) const { return logits(MatrixF(x)).col(0); }

VectorF Head::input_gradient(const VectorF& x, int target) const {
  if (x.size() != in_dim()) throw ShapeError("head: expected " + std::to_string(in_dim()) + " features");
  std::vector<VectorF> pre;
  VectorF a = (x - shift_).cwiseProduct(scale_);
  for (std::size_t l = 0; l + 1 < layers_.size(); ++l) {
    VectorF z = layers_[l].weight * a + layers_[l].bias;
    pre.push_back(z);
    a = z.cwiseMax(0.0f);
  }
  VectorF g = layers_.back().weight.row(target).transpose();
  for (std::size_t l = layers_.size() - 1; l-- > 0;) {
    g = (pre[l].array() > 0.0f).select(g, 0.0f);
    g = layers_[l].weight.transpose() * g;
  }
  return g.cwiseProduct(scale_);
}

Eigen::MatrixXd softmax(const MatrixF& logits) {
  Eigen::MatrixXd z = logits.cast<double>();
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    auto col = z.col(j);
    col.array() -= col.maxCoeff();
    col = col.array().exp().matrix();
    col /= col.sum();
  }
  return z;
}

double cross_entropy(const MatrixF& logits, std::span<const int> labels) {
  double total = 0;
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    const auto col = logits.col(j).cast<double>();
    const double m = col.maxCoeff();
    const double lse = m + std::log((col.array() - m).exp().sum());
    total += lse - col(labels[static_cast<std::size_t>(j)]);
  }
  return total / static_cast<double>(logits.cols());
}

double Head::loss_and_gradients(const MatrixF& x, std::span<const int> labels, Rng& dropout_rng,
                                Gradients& grads) const {
  const std::size_t n_layers = layers_.size();
  const Eigen::Index batch = x.cols();
  std::vector<MatrixF> inputs(n_layers), masks(n_layers), pre(n_layers);
  if (x.rows() != in_dim()) throw ShapeError("head: expected " + std::to_string(in_dim()) + " features");
  MatrixF a = standardize(x);
  for (std::size_t l = 0; l < n_layers; ++l) {
    const double p = l + 1 < n_layers ? cfg_.dropout_hidden : cfg_.dropout_last;
    if (p > 0) {
      masks[l].resize(a.rows(), a.cols());
      const float keep_scale = static_cast<float>(1.0 / (1.0 - p));
      for (Eigen::Index k = 0; k < masks[l].size(); ++k)
        masks[l].data()[k] = uniform01(dropout_rng) < p ? 0.0f : keep_scale;
      a = a.cwiseProduct(masks[l]);
    }
    inputs[l] = a;
    MatrixF z = layers_[l].weight * a;
    z.colwise() += layers_[l].bias;
    pre[l] = z;
    a = l + 1 < n_layers ? MatrixF(z.cwiseMax(0.0f)) : std::move(z);
  }

  const Eigen::MatrixXd probs = softmax(a);
  double loss = cross_entropy(a, labels);
  MatrixF delta = probs.cast<float>();
  for (Eigen::Index j = 0; j < batch; ++j) delta(labels[static_cast<std::size_t>(j)], j) -= 1.0f;
  delta /= static_cast<float>(batch);

  grads.weight.resize(n_layers);
  grads.bias.resize(n_layers);
  for (std::size_t l = n_layers; l-- > 0;) {
    grads.weight[l].noalias() = delta * inputs[l].transpose();
    grads.bias[l] = delta.rowwise().sum();
    if (l == 0) break;
    MatrixF back = layers_[l].weight.transpose() * delta;
    if (masks[l].size() > 0) back = back.cwiseProduct(masks[l]);
    delta = (pre[l - 1].array() > 0.0f).select(back, 0.0f);
  }
  return loss;
}

std::uint64_t Head::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& d : layers_) {
    h = nn::checksum(d.weight, h);
    h = nn::checksum(d.bias, h);
  }
  h = nn::checksum(shift_, h);
  return nn::checksum(scale_, h);
}

void Adam::step(Head& head, const Head::Gradients& grads, double lr) {
  auto& layers = head.layers();
  if (m.weight.empty()) {
    for (const auto& d : layers) {
      m.weight.push_back(MatrixF::Zero(d.weight.rows(), d.weight.cols()));
      m.bias.push_back(VectorF::Zero(d.bias.size()));
    }
    v = m;
  }
  ++t;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  const float b1 = static_cast<float>(beta1), b2 = static_cast<float>(beta2);
  const float step = static_cast<float>(lr / c1);
  const float inv_c2 = static_cast<float>(1.0 / c2);
  const float e = static_cast<float>(eps);
  auto update = [&](auto& param, auto& mo, auto& ve, const auto& g) {
    mo = b1 * mo + (1.0f - b1) * g;
    ve = b2 * ve + (1.0f - b2) * g.cwiseProduct(g);
    param.array() -= step * mo.array() / ((ve.array() * inv_c2).sqrt() + e);
  };
  for (std::size_t l = 0; l < layers.size(); ++l) {
    update(layers[l].weight, m.weight[l], v.weight[l], grads.weight[l]);
    update(layers[l].bias, m.bias[l], v.bias[l], grads.bias[l]);
  }
}

Classifier build_classifier(const std::string& backbone_id, const HeadConfig& head, std::uint64_t seed, int input_side,
                            preprocess::NormalizationStats stats) {
  stats.validate();
  if (input_side < preprocess::kMinSide) throw ConfigError("input_side must be >= 32");
  Classifier c;
  c.backbone = nn::make_backbone(backbone_id);
  c.backbone_id = backbone_id;
  if (stats.channels() != c.backbone->input_channels())
    throw ConfigError("normalization channels do not match backbone input channels");
  c.head = Head(c.backbone->feature_dim(), head, seed);
  c.normalization = std::move(stats);
  c.input_side = input_side;
  return c;
}

void freeze_backbone(Classifier& model) { model.backbone_frozen = true; }

bool EarlyStopping::update(double loss) {
  ++epoch_;
  if (best_epoch_ < 0 || loss < best_) {
    best_ = loss;
    best_epoch_ = epoch_;
    wait_ = 0;
    return true;
  }
  ++wait_;
  return false;
}

nn::FeatureMap prepare_input(const Classifier& model, const Gray8& image) {
  const ImageF cropped = preprocess::center_crop_resize<float>(image, model.input_side);
  return nn::to_feature_map(preprocess::normalize<float>(cropped, model.normalization));
}

nn::FeatureMap prepare_augmented(const Classifier& model, const Gray8& image, const preprocess::AugmentPolicy& policy,
                                 std::uint64_t seed) {
  const ImageF aug = preprocess::augment<float>(image, policy, seed);
  return nn::to_feature_map(preprocess::normalize<float>(aug, model.normalization));
}

VectorF eval_features(const Classifier& model, const Gray8& image) {
  return model.backbone->forward(prepare_input(model, image)).pooled;
}

namespace {

struct FeatureSet {
  MatrixF x;  // features x samples
  std::vector<int> y;
};

FeatureSet eval_feature_set(const Classifier& model, std::span<const LabeledImage> records) {
  FeatureSet fs;
  fs.x.resize(model.backbone->feature_dim(), static_cast<Eigen::Index>(records.size()));
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    fs.x.col(static_cast<Eigen::Index>(i)) = r.eval_features ? *r.eval_features : eval_features(model, *r.image);
    fs.y.push_back(static_cast<int>(r.label));
  }
  return fs;
}

}  // namespace

TrainedModel train_head(Classifier model, std::span<const LabeledImage> train, std::span<const LabeledImage> val,
                        const TrainConfig& cfg, const preprocess::AugmentPolicy& policy) {
  cfg.validate();
  policy.validate();
  if (!model.backbone_frozen) throw TrainingError("train_head: backbone must be frozen before training");
  if (train.empty()) throw TrainingError("train_head: empty training set");
  if (policy.output_side != model.input_side)
    throw TrainingError("train_head: augmentation output_side differs from the model input side");
  const bool has_normal = std::any_of(train.begin(), train.end(), [](const auto& r) { return r.label == Label::normal; });
  const bool has_path =
      std::any_of(train.begin(), train.end(), [](const auto& r) { return r.label == Label::hydrocephalus; });
  if (!has_normal || !has_path) throw TrainingError("train_head: training set holds a single class");

  const std::uint64_t backbone_before = model.backbone->checksum();
  TrainedModel out;
  out.history.monitored_train_loss = val.empty();
  const FeatureSet train_eval = eval_feature_set(model, train);
  const FeatureSet monitor = val.empty() ? train_eval : eval_feature_set(model, val);
  model.head.fit_input_standardization(train_eval.x);

  const long n = static_cast<long>(train.size());
  const long steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const long total_steps = std::max<long>(2, steps_per_epoch * cfg.epochs_max);
  OneCycleConfig schedule = cfg.one_cycle;
  schedule.lr_max = cfg.learning_rate;

  Adam adam;
  Rng dropout_rng(derive_seed(cfg.seed, {3}));
  EarlyStopping stopper(cfg.patience);
  Head best_head = model.head;
  Head::Gradients grads;
  long step = 0;
  const int dim = model.backbone->feature_dim();

  for (int epoch = 0; epoch < cfg.epochs_max; ++epoch) {
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    Rng order_rng(derive_seed(cfg.seed, {1, static_cast<std::uint64_t>(epoch)}));
    shuffle(order, order_rng);

    MatrixF feats(dim, n);
    for (long i = 0; i < n; ++i) {
      const auto& r = train[order[static_cast<std::size_t>(i)]];
      const std::uint64_t aug_seed = derive_seed(cfg.seed, {2, static_cast<std::uint64_t>(epoch), order[i]});
      feats.col(i) = model.backbone->forward(prepare_augmented(model, *r.image, policy, aug_seed)).pooled;
    }

    double loss_sum = 0;
    double lr = 0;
    for (long start = 0; start < n; start += cfg.batch_size) {
      const long len = std::min<long>(cfg.batch_size, n - start);
      std::vector<int> labels(static_cast<std::size_t>(len));
      for (long j = 0; j < len; ++j) labels[j] = static_cast<int>(train[order[start + j]].label);
      lr = one_cycle_lr(std::min(step, total_steps - 1), total_steps, schedule);
      const double loss = model.head.loss_and_gradients(feats.middleCols(start, len), labels, dropout_rng, grads);
      adam.step(model.head, grads, lr);
      loss_sum += loss * static_cast<double>(len);
      ++step;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(n);
    rec.val_loss = cross_entropy(model.head.logits(monitor.x), monitor.y);
    rec.lr = lr;
    if (!std::isfinite(rec.train_loss) || !std::isfinite(rec.val_loss))
      throw NumericError("non-finite loss at epoch " + std::to_string(epoch), epoch);
    out.history.epochs.push_back(rec);
    if (stopper.update(rec.val_loss)) best_head = model.head;
    if (stopper.should_stop()) break;
  }

  out.history.best_epoch = stopper.best_epoch();
  out.history.best_val_loss = stopper.best_loss();
  model.head = std::move(best_head);
  out.backbone_checksum = model.backbone->checksum();
  if (out.backbone_checksum != backbone_before) throw TrainingError("backbone parameters changed during training");
  out.classifier = std::move(model);
  return out;
}

ClassProbs predict_from_features(const Classifier& model, const VectorF& features) {
  const Eigen::MatrixXd p = softmax(MatrixF(model.head.logits(features)));
  return {p(0, 0), p(1, 0)};
}

ClassProbs predict_proba(const Classifier& model, const nn::FeatureMap& input) {
  if (input.channels() != model.backbone->input_channels() || input.height != model.input_side ||
      input.width != model.input_side)
    throw ShapeError("predict_proba: expected " + std::to_string(model.backbone->input_channels()) + "x" +
                     std::to_string(model.input_side) + "x" + std::to_string(model.input_side) + " input");
  return predict_from_features(model, model.backbone->forward(input).pooled);
}

std::vector<ClassProbs> predict_proba(const Classifier& model, std::span<const Gray8> images) {
  std::vector<ClassProbs> out;
  out.reserve(images.size());
  for (const auto& img : images) out.push_back(predict_proba(model, prepare_input(model, img)));
  return out;
}

}  // namespace hydro::model
