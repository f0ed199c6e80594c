#pragma once

#include "hydro/network.hpp"
#include "hydro/preprocess.hpp"
#include "hydro/rng.hpp"
#include "hydro/types.hpp"

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace hydro::model {

using nn::MatrixF;
using nn::VectorF;

/// pooled features -> standardize -> [dropout_hidden -> Linear(width) -> ReLU]* -> dropout_last -> Linear(n_classes)
struct HeadConfig {
  std::vector<int> hidden_sizes{512};
  double dropout_last = 0.5;
  double dropout_hidden = 0.25;
  int n_classes = kNumClasses;

  void validate() const;
};

/// Cosine warm-up from lr_max/div_start to lr_max over pct_start of the steps, then cosine
/// annealing to lr_max/div_final.
struct OneCycleConfig {
  double lr_max = 0.001;
  double pct_start = 0.3;
  double div_start = 25.0;
  double div_final = 1e4;

  void validate() const;
};

double one_cycle_lr(long step, long total_steps, const OneCycleConfig& cfg);

struct TrainConfig {
  /// Peak of the one-cycle schedule; overrides one_cycle.lr_max during training.
  double learning_rate = 0.001;
  int epochs_max = 20;
  int batch_size = 16;
  OneCycleConfig one_cycle;
  int patience = 3;
  std::uint64_t seed = 0;
  std::string backbone_id = "tiny_cnn";

  void validate() const;
};

class Head {
 public:
  Head() = default;
  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.
  Head(int in_dim, const HeadConfig& cfg, std::uint64_t seed);

  int in_dim() const { return layers_.empty() ? 0 : static_cast<int>(layers_.front().weight.cols()); }
  int n_classes() const { return static_cast<int>(layers_.back().weight.rows()); }

  /// Evaluation mode (no dropout). Columns of x are samples.
  MatrixF logits(const MatrixF& x) const;
  VectorF logits(const VectorF& x) const;

  /// d logit[target] / d x in evaluation mode.
  VectorF input_gradient(const VectorF& x, int target) const;

  struct Gradients {
    std::vector<MatrixF> weight;
    std::vector<VectorF> bias;
  };
  /// Training-mode forward/backward on a batch; returns mean cross-entropy.
  double loss_and_gradients(const MatrixF& x, std::span<const int> labels, Rng& dropout_rng, Gradients& grads) const;

  /// Per-feature affine x -> (x - shift) * scale applied before the first layer; identity by default.
  void fit_input_standardization(const MatrixF& x);
  void set_input_standardization(VectorF shift, VectorF scale);
  const VectorF& input_shift() const { return shift_; }
  const VectorF& input_scale() const { return scale_; }

  std::vector<nn::Dense>& layers() { return layers_; }
  const std::vector<nn::Dense>& layers() const { return layers_; }
  const HeadConfig& config() const { return cfg_; }
  std::uint64_t checksum() const;

 private:
  HeadConfig cfg_;
  std::vector<nn::Dense> layers_;
  VectorF shift_, scale_;

  MatrixF standardize(const MatrixF& x) const;
};

/// Row-wise softmax of logits (classes x samples) as doubles.
Eigen::MatrixXd softmax(const MatrixF& logits);

/// Mean categorical cross-entropy of eval-mode logits.
double cross_entropy(const MatrixF& logits, std::span<const int> labels);

struct Adam {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  long t = 0;
  Head::Gradients m, v;

  void step(Head& head, const Head::Gradients& grads, double lr);
};

struct Classifier {
  std::shared_ptr<const nn::Backbone> backbone;
  Head head;
  std::string backbone_id;
  preprocess::NormalizationStats normalization = preprocess::NormalizationStats::imagenet();
  int input_side = 256;
  bool backbone_frozen = false;
};

Classifier build_classifier(const std::string& backbone_id, const HeadConfig& head, std::uint64_t seed,
                            int input_side = 256,
                            preprocess::NormalizationStats stats = preprocess::NormalizationStats::imagenet());

/// Marks the backbone as excluded from optimization. Idempotent.
void freeze_backbone(Classifier& model);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0;
  double val_loss = 0;
  double lr = 0;  ///< learning rate at the epoch's last step
};

struct TrainingHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;
  double best_val_loss = 0;
  /// True when no validation records were available and the clean training loss was monitored.
  bool monitored_train_loss = false;
};

struct TrainedModel {
  Classifier classifier;
  TrainingHistory history;
  std::uint64_t backbone_checksum = 0;
};

/// The early-stopping rule on a stream of monitored losses. An epoch improves when its loss is
/// strictly below the best so far; training stops once more than `patience` consecutive epochs
/// have failed to improve.
class EarlyStopping {
 public:
  explicit EarlyStopping(int patience) : patience_(patience) {}
  /// Returns true when this epoch is the new best.
  bool update(double loss);
  bool should_stop() const { return wait_ > patience_; }
  int best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_; }

 private:
  int patience_;
  int epoch_ = -1;
  int wait_ = 0;
  int best_epoch_ = -1;
  double best_ = 0;
};

/// One training/evaluation record. eval_features may hold a precomputed evaluation-path
/// feature vector for this backbone; it is computed on demand otherwise.
struct LabeledImage {
  std::string id;
  Label label = Label::normal;
  std::shared_ptr<const Gray8> image;
  std::shared_ptr<const VectorF> eval_features;
};

/// Evaluation-path network input: center crop, resize, normalize.
nn::FeatureMap prepare_input(const Classifier& model, const Gray8& image);
/// Training-path input for one augmentation seed.
nn::FeatureMap prepare_augmented(const Classifier& model, const Gray8& image, const preprocess::AugmentPolicy& policy,
                                 std::uint64_t seed);

VectorF eval_features(const Classifier& model, const Gray8& image);

/// Head-only training with early stopping on validation cross-entropy; the returned model carries
/// the head of the best epoch. Requires a frozen backbone.
TrainedModel train_head(Classifier model, std::span<const LabeledImage> train, std::span<const LabeledImage> val,
                        const TrainConfig& cfg, const preprocess::AugmentPolicy& policy);

/// (p_normal, p_path)
using ClassProbs = std::array<double, 2>;

ClassProbs predict_from_features(const Classifier& model, const VectorF& features);
/// Input already in evaluation-path form; a channel or size mismatch throws ShapeError.
ClassProbs predict_proba(const Classifier& model, const nn::FeatureMap& input);
std::vector<ClassProbs> predict_proba(const Classifier& model, std::span<const Gray8> images);

}  // namespace hydro::model
