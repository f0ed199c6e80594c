#include "hydro/checkpoint.hpp"
#include "hydro/error.hpp"
#include "hydro/model.hpp"
#include "hydro/phantom.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace hydro;
using namespace hydro::model;
using hydro::testing::TempDir;

namespace {

constexpr int kSide = 64;

std::vector<LabeledImage> phantom_set(int n_per_class, std::uint64_t seed) {
  std::vector<LabeledImage> out;
  for (int i = 0; i < 2 * n_per_class; ++i) {
    const Label label = i % 2 ? Label::hydrocephalus : Label::normal;
    const auto spec = phantom::sample_spec(label, kSide, derive_seed(seed, {static_cast<std::uint64_t>(i)}));
    const auto s = phantom::generate_phantom(spec, seed + i);
    LabeledImage li;
    li.id = "x" + std::to_string(i);
    li.label = label;
    li.image = std::make_shared<Gray8>(to_gray8(s.image * 255.0));
    out.push_back(li);
  }
  return out;
}

preprocess::AugmentPolicy small_policy() {
  preprocess::AugmentPolicy p;
  p.output_side = kSide;
  return p;
}

Classifier frozen(std::uint64_t seed, HeadConfig hc = {}) {
  Classifier c = build_classifier("tiny_cnn", hc, seed, kSide);
  freeze_backbone(c);
  return c;
}

double accuracy(const Classifier& c, const std::vector<LabeledImage>& set) {
  int ok = 0;
  for (const auto& r : set) {
    const auto p = predict_from_features(c, eval_features(c, *r.image));
    ok += (p[1] >= 0.5) == (r.label == Label::hydrocephalus);
  }
  return static_cast<double>(ok) / static_cast<double>(set.size());
}

}  // namespace

TEST(OneCycle, BoundaryAndPeak) {
  OneCycleConfig c;
  c.lr_max = 0.001;
  c.pct_start = 0.3;
  c.div_start = 25;
  c.div_final = 1e4;
  EXPECT_DOUBLE_EQ(one_cycle_lr(0, 1000, c), 0.001 / 25);
  EXPECT_DOUBLE_EQ(one_cycle_lr(300, 1000, c), 0.001);
  EXPECT_NEAR(one_cycle_lr(999, 1000, c), 1e-7, 1e-9);
  EXPECT_THROW(one_cycle_lr(1000, 1000, c), RangeError);
  EXPECT_THROW(one_cycle_lr(-1, 1000, c), RangeError);
  EXPECT_THROW(one_cycle_lr(0, 1, c), RangeError);
}

TEST(OneCycle, MonotoneAndContinuous) {
  OneCycleConfig c;
  double prev = 0;
  for (long s = 0; s <= 300; ++s) {
    const double lr = one_cycle_lr(s, 1000, c);
    EXPECT_GE(lr, prev);
    prev = lr;
  }
  for (long s = 301; s < 1000; ++s) {
    const double lr = one_cycle_lr(s, 1000, c);
    EXPECT_LE(lr, prev);
    prev = lr;
  }
  EXPECT_NEAR(one_cycle_lr(301, 1000, c), c.lr_max, 1e-7);
}

TEST(EarlyStop, WorkedTrace) {
  EarlyStopping es(2);
  const std::vector<double> losses{1.0, 0.9, 0.95, 0.96, 0.97, 0.5};
  int stopped_after = -1;
  for (std::size_t e = 0; e < losses.size(); ++e) {
    es.update(losses[e]);
    if (es.should_stop()) {
      stopped_after = static_cast<int>(e);
      break;
    }
  }
  EXPECT_EQ(stopped_after, 4);
  EXPECT_EQ(es.best_epoch(), 1);
  EXPECT_DOUBLE_EQ(es.best_loss(), 0.9);
}

TEST(EarlyStop, MonotoneDecreaseRunsAll) {
  EarlyStopping es(5);
  for (int e = 0; e < 4; ++e) {
    EXPECT_TRUE(es.update(1.0 - 0.1 * e));
    EXPECT_FALSE(es.should_stop());
  }
  EXPECT_EQ(es.best_epoch(), 3);
}

TEST(Classifier, BuildDeterministicAndShaped) {
  const auto a = build_classifier("tiny_cnn", {}, 5, kSide);
  const auto b = build_classifier("tiny_cnn", {}, 5, kSide);
  EXPECT_EQ(a.head.checksum(), b.head.checksum());
  EXPECT_NE(a.head.checksum(), build_classifier("tiny_cnn", {}, 6, kSide).head.checksum());
  EXPECT_EQ(a.head.n_classes(), 2);
  EXPECT_EQ(a.head.logits(VectorF(VectorF::Zero(a.head.in_dim()))).size(), 2);
  EXPECT_EQ(a.backbone->checksum(), b.backbone->checksum());
  EXPECT_THROW(build_classifier("nonexistent", {}, 1), ConfigError);
}

TEST(Classifier, HeadConfigValidation) {
  HeadConfig hc;
  hc.dropout_last = 1.0;
  EXPECT_THROW(build_classifier("tiny_cnn", hc, 1), ValidationError);
  hc = {};
  hc.n_classes = 3;
  EXPECT_THROW(build_classifier("tiny_cnn", hc, 1), ValidationError);
}

TEST(Classifier, ZeroedFinalLayerGivesHalf) {
  auto c = build_classifier("tiny_cnn", {}, 1, kSide);
  c.head.layers().back().weight.setZero();
  c.head.layers().back().bias.setZero();
  const auto set = phantom_set(2, 3);
  for (const auto& r : set) {
    const auto p = predict_proba(c, prepare_input(c, *r.image));
    EXPECT_DOUBLE_EQ(p[0], 0.5);
    EXPECT_DOUBLE_EQ(p[1], 0.5);
  }
}

TEST(Classifier, ProbabilitiesNormalizedAndRepeatable) {
  const auto c = build_classifier("tiny_cnn", {}, 2, kSide);
  const auto set = phantom_set(3, 4);
  std::vector<Gray8> imgs;
  for (const auto& r : set) imgs.push_back(*r.image);
  const auto p1 = predict_proba(c, imgs), p2 = predict_proba(c, imgs);
  ASSERT_EQ(p1.size(), imgs.size());
  for (std::size_t i = 0; i < p1.size(); ++i) {
    EXPECT_NEAR(p1[i][0] + p1[i][1], 1.0, 1e-6);
    EXPECT_EQ(p1[i], p2[i]);
  }
}

TEST(Classifier, InputShapeMismatch) {
  const auto c = build_classifier("tiny_cnn", {}, 2, kSide);
  nn::FeatureMap wrong;
  wrong.height = wrong.width = kSide;
  wrong.data = MatrixF::Zero(1, kSide * kSide);
  EXPECT_THROW(predict_proba(c, wrong), ShapeError);
  nn::FeatureMap small;
  small.height = small.width = 32;
  small.data = MatrixF::Zero(3, 32 * 32);
  EXPECT_THROW(predict_proba(c, small), ShapeError);
}

TEST(Head, GradientsMatchFiniteDifferences) {
  HeadConfig hc;
  hc.hidden_sizes = {6};
  hc.dropout_last = hc.dropout_hidden = 0;
  Head h(4, hc, 3);
  Rng rng(1);
  MatrixF x(4, 5);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = static_cast<float>(uniform(rng, -1, 1));
  h.fit_input_standardization(x);
  const std::vector<int> y{0, 1, 1, 0, 1};
  Head::Gradients g;
  Rng drop(0);
  h.loss_and_gradients(x, y, drop, g);
  const float eps = 1e-2f;
  for (std::size_t l = 0; l < h.layers().size(); ++l) {
    for (Eigen::Index i = 0; i < h.layers()[l].weight.size(); ++i) {
      float& w = h.layers()[l].weight.data()[i];
      const float w0 = w;
      w = w0 + eps;
      const double up = cross_entropy(h.logits(x), y);
      w = w0 - eps;
      const double dn = cross_entropy(h.logits(x), y);
      w = w0;
      EXPECT_NEAR(g.weight[l].data()[i], (up - dn) / (2 * eps), 2e-3);
    }
  }
}

TEST(Head, InputGradientMatchesFiniteDifferences) {
  HeadConfig hc;
  hc.hidden_sizes = {8};
  Head h(5, hc, 4);
  VectorF x(5);
  x << 0.3f, -0.2f, 0.9f, 0.1f, -0.7f;
  const VectorF g = h.input_gradient(x, 1);
  const float eps = 1e-3f;
  for (int i = 0; i < 5; ++i) {
    VectorF a = x, b = x;
    a[i] += eps;
    b[i] -= eps;
    EXPECT_NEAR(g[i], (h.logits(a)[1] - h.logits(b)[1]) / (2 * eps), 1e-3);
  }
}

TEST(Training, RequiresFrozenBackbone) {
  const auto set = phantom_set(3, 1);
  TrainConfig cfg;
  cfg.epochs_max = 1;
  auto c = build_classifier("tiny_cnn", {}, 1, kSide);
  EXPECT_THROW(train_head(c, set, set, cfg, small_policy()), TrainingError);
  freeze_backbone(c);
  freeze_backbone(c);
  EXPECT_TRUE(c.backbone_frozen);
  EXPECT_NO_THROW(train_head(c, set, set, cfg, small_policy()));
}

TEST(Training, SingleClassRejected) {
  auto set = phantom_set(3, 1);
  for (auto& r : set) r.label = Label::normal;
  EXPECT_THROW(train_head(frozen(1), set, set, {}, small_policy()), TrainingError);
  EXPECT_THROW(train_head(frozen(1), {}, set, {}, small_policy()), TrainingError);
}

TEST(Training, NonFiniteLossReportsEpoch) {
  const auto set = phantom_set(3, 1);
  TrainConfig cfg;
  cfg.learning_rate = 1e35;
  cfg.epochs_max = 5;
  try {
    train_head(frozen(1), set, set, cfg, small_policy());
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_GE(e.epoch(), 0);
    EXPECT_LT(e.epoch(), 5);
  }
}

TEST(Training, BackboneFrozenHeadChanges) {
  const auto set = phantom_set(4, 2);
  auto c = frozen(3);
  const auto before = c.backbone->checksum();
  const auto head_before = c.head.checksum();
  TrainConfig cfg;
  cfg.epochs_max = 3;
  const auto tm = train_head(c, set, set, cfg, small_policy());
  EXPECT_EQ(tm.classifier.backbone->checksum(), before);
  EXPECT_EQ(tm.backbone_checksum, before);
  EXPECT_NE(tm.classifier.head.checksum(), head_before);
  EXPECT_LE(tm.history.epochs.size(), 3u);
}

TEST(Training, SingleStepChangesHead) {
  const auto set = phantom_set(4, 5);
  auto c = frozen(3);
  TrainConfig cfg;
  cfg.epochs_max = 1;
  cfg.batch_size = static_cast<int>(set.size());
  const auto tm = train_head(c, set, set, cfg, small_policy());
  std::uint64_t moved = 0;
  for (std::size_t l = 0; l < c.head.layers().size(); ++l)
    moved += (tm.classifier.head.layers()[l].weight.array() != c.head.layers()[l].weight.array()).count();
  EXPECT_GT(moved, 0u);
}

TEST(Training, SeededReproducibility) {
  const auto set = phantom_set(4, 6);
  TrainConfig cfg;
  cfg.epochs_max = 3;
  cfg.seed = 17;
  const auto a = train_head(frozen(3), set, set, cfg, small_policy());
  const auto b = train_head(frozen(3), set, set, cfg, small_policy());
  EXPECT_EQ(a.classifier.head.checksum(), b.classifier.head.checksum());
  ASSERT_EQ(a.history.epochs.size(), b.history.epochs.size());
  for (std::size_t i = 0; i < a.history.epochs.size(); ++i)
    EXPECT_EQ(a.history.epochs[i].val_loss, b.history.epochs[i].val_loss);
}

TEST(Training, BestEpochSelected) {
  const auto set = phantom_set(4, 7);
  TrainConfig cfg;
  cfg.epochs_max = 6;
  const auto tm = train_head(frozen(8), set, set, cfg, small_policy());
  double best = 1e300;
  int best_epoch = -1;
  for (const auto& e : tm.history.epochs)
    if (e.val_loss < best) best = e.val_loss, best_epoch = e.epoch;
  EXPECT_EQ(tm.history.best_epoch, best_epoch);
  EXPECT_DOUBLE_EQ(tm.history.best_val_loss, best);
  // the returned head is the best one: re-evaluating it reproduces the best loss
  std::vector<int> y;
  MatrixF x(tm.classifier.backbone->feature_dim(), static_cast<Eigen::Index>(set.size()));
  for (std::size_t i = 0; i < set.size(); ++i) {
    x.col(static_cast<Eigen::Index>(i)) = eval_features(tm.classifier, *set[i].image);
    y.push_back(static_cast<int>(set[i].label));
  }
  EXPECT_NEAR(cross_entropy(tm.classifier.head.logits(x), y), best, 1e-9);
}

TEST(Training, EmptyValidationMonitorsTrainLoss) {
  const auto set = phantom_set(2, 9);
  TrainConfig cfg;
  cfg.epochs_max = 2;
  const auto tm = train_head(frozen(1), set, {}, cfg, small_policy());
  EXPECT_TRUE(tm.history.monitored_train_loss);
  EXPECT_GE(tm.history.best_epoch, 0);
}

TEST(Training, PhantomSplitLearns) {
  const auto train = phantom_set(30, 100);
  const auto val = phantom_set(10, 200);
  const auto test = phantom_set(10, 300);
  TrainConfig cfg;
  cfg.epochs_max = 10;
  cfg.patience = 10;
  cfg.seed = 1;
  const auto tm = train_head(frozen(4), train, val, cfg, small_policy());
  EXPECT_GT(accuracy(tm.classifier, val), 0.9);
  // a held-out pathology image is called pathological
  int path_ok = 0, n_path = 0;
  for (const auto& r : test) {
    if (r.label != Label::hydrocephalus) continue;
    ++n_path;
    path_ok += predict_from_features(tm.classifier, eval_features(tm.classifier, *r.image))[1] > 0.5;
  }
  EXPECT_GE(path_ok, n_path - 1);
}

TEST(Backbone, PerturbedParameterChangesPrediction) {
  const auto c = build_classifier("tiny_cnn", {}, 1, kSide);
  const auto* stack = dynamic_cast<const nn::ConvStack*>(c.backbone.get());
  ASSERT_NE(stack, nullptr);
  auto layers = stack->layers();
  layers[0].weight(0, 4) += 0.5f;
  auto c2 = c;
  c2.backbone = std::make_shared<nn::ConvStack>("tiny_cnn", layers);
  EXPECT_NE(c2.backbone->checksum(), c.backbone->checksum());
  const auto img = *phantom_set(1, 1)[1].image;
  EXPECT_NE(eval_features(c, img), eval_features(c2, img));
}

TEST(Backbone, ShapesAndLayerName) {
  const auto b = nn::make_backbone("tiny_cnn");
  EXPECT_EQ(b->feature_dim(), 32);
  EXPECT_EQ(b->final_conv_layer(), "conv3");
  nn::FeatureMap in;
  in.height = in.width = 64;
  in.data = MatrixF::Zero(3, 64 * 64);
  const auto out = b->forward(in);
  ASSERT_TRUE(out.conv_map.has_value());
  EXPECT_EQ(out.conv_map->height, 16);
  EXPECT_EQ(out.conv_map->channels(), 32);
  EXPECT_TRUE(out.pooled.isApprox(nn::global_average_pool(*out.conv_map)));
}

TEST(Conv, MatchesDirectConvolution) {
  nn::Conv2d conv;
  conv.in_channels = 2;
  conv.out_channels = 3;
  Rng rng(4);
  conv.weight.resize(3, 18);
  for (Eigen::Index i = 0; i < conv.weight.size(); ++i) conv.weight.data()[i] = static_cast<float>(uniform(rng, -1, 1));
  conv.bias = VectorF::Constant(3, 0.25f);
  nn::FeatureMap in;
  in.height = 5;
  in.width = 6;
  in.data.resize(2, 30);
  for (Eigen::Index i = 0; i < in.data.size(); ++i) in.data.data()[i] = static_cast<float>(uniform(rng, -1, 1));
  const auto out = conv.forward(in);
  for (int o = 0; o < 3; ++o)
    for (int y = 0; y < 5; ++y)
      for (int x = 0; x < 6; ++x) {
        double acc = 0.25;
        for (int c = 0; c < 2; ++c)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int yy = std::clamp(y + ky - 1, 0, 4), xx = std::clamp(x + kx - 1, 0, 5);
              acc += conv.weight(o, c * 9 + ky * 3 + kx) * in.data(c, yy * 6 + xx);
            }
        EXPECT_NEAR(out.data(o, y * 6 + x), acc, 1e-5);
      }
}

TEST(Checkpoint, RoundTrip) {
  TempDir d;
  const auto set = phantom_set(3, 11);
  TrainConfig cfg;
  cfg.epochs_max = 2;
  const auto tm = train_head(frozen(2), set, set, cfg, small_policy());
  save_checkpoint(tm, d / "m.json");
  const auto back = load_checkpoint(d / "m.json");
  EXPECT_EQ(back.classifier.head.checksum(), tm.classifier.head.checksum());
  EXPECT_EQ(back.classifier.input_side, kSide);
  EXPECT_TRUE(back.classifier.backbone_frozen);
  EXPECT_EQ(back.history.epochs.size(), tm.history.epochs.size());
  for (const auto& r : set)
    EXPECT_EQ(predict_from_features(back.classifier, eval_features(back.classifier, *r.image)),
              predict_from_features(tm.classifier, eval_features(tm.classifier, *r.image)));
}

TEST(Checkpoint, RejectsTamperedOrForeign) {
  const auto set = phantom_set(2, 12);
  TrainConfig cfg;
  cfg.epochs_max = 1;
  const auto tm = train_head(frozen(2), set, set, cfg, small_policy());
  std::string text = serialize_checkpoint(tm);
  const auto pos = text.find("\"backbone_checksum\":\"") + 21;
  text[pos] = text[pos] == '0' ? '1' : '0';
  EXPECT_THROW(parse_checkpoint(text), IoError);
  EXPECT_THROW(parse_checkpoint("{\"format\":\"other\"}"), IoError);
  EXPECT_THROW(parse_checkpoint("nope"), IoError);
  EXPECT_THROW(load_checkpoint("/nonexistent/ckpt.json"), IoError);
}
