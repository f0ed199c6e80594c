#include "hydro/cvharness.hpp"

#include "hydro/checkpoint.hpp"
#include "hydro/error.hpp"
#include "hydro/rng.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <map>
#include <mutex>
#include <set>
#include <thread>
#include <unordered_map>

namespace hydro::cv {

namespace fs = std::filesystem;

std::uint64_t rep_seed(std::uint64_t seed, int rep) { return derive_seed(seed, {static_cast<std::uint64_t>(rep)}); }

std::uint64_t fold_seed(std::uint64_t seed, int rep, int fold) {
  return derive_seed(seed, {static_cast<std::uint64_t>(rep), static_cast<std::uint64_t>(fold)});
}

std::string_view to_string(LeakKind kind) noexcept {
  switch (kind) {
    case LeakKind::overlap: return "overlap";
    case LeakKind::test_overlap: return "test_overlap";
    case LeakKind::coverage: return "coverage";
    case LeakKind::unknown_id: return "unknown_id";
    case LeakKind::patient_overlap: return "patient_overlap";
    case LeakKind::shape: return "shape";
  }
  return "unknown";
}

namespace {

constexpr std::uint64_t kTrainSalt = 0x747261696eULL;

struct Group {
  std::vector<std::size_t> members;  // manifest indices
  Label label = Label::normal;
};

std::vector<Group> make_groups(const ingest::DatasetManifest& m, bool by_patient) {
  std::vector<Group> groups;
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    const auto& key = by_patient ? m.records[i].patient_id : m.records[i].image_id;
    auto [it, inserted] = index.emplace(key, groups.size());
    if (inserted) groups.emplace_back();
    groups[it->second].members.push_back(i);
  }
  for (auto& g : groups) {
    long votes = 0;
    for (auto i : g.members) votes += m.records[i].label == Label::hydrocephalus ? 1 : -1;
    g.label = votes > 0 ? Label::hydrocephalus : votes < 0 ? Label::normal : m.records[g.members.front()].label;
  }
  return groups;
}

std::vector<std::string> ids_of(const ingest::DatasetManifest& m, std::vector<std::size_t> idx) {
  std::sort(idx.begin(), idx.end());
  std::vector<std::string> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(m.records[i].image_id);
  return out;
}

}  // namespace

FoldPlan plan_folds(const ingest::DatasetManifest& manifest, int j, int k, std::uint64_t seed, bool group_by_patient,
                    double val_fraction) {
  if (j < 1) throw PlanningError("plan_folds: j must be >= 1");
  if (k < 2) throw PlanningError("plan_folds: k must be >= 2");
  if (!(val_fraction > 0 && val_fraction < 1)) throw PlanningError("plan_folds: val_fraction must lie in (0,1)");

  const auto groups = make_groups(manifest, group_by_patient);
  std::map<Label, std::vector<std::size_t>> by_class;
  for (Label l : {Label::normal, Label::hydrocephalus}) by_class[l];
  for (std::size_t g = 0; g < groups.size(); ++g) by_class[groups[g].label].push_back(g);
  for (const auto& [label, gs] : by_class)
    if (static_cast<int>(gs.size()) < k)
      throw PlanningError("plan_folds: class '" + std::string(to_string(label)) + "' has " + std::to_string(gs.size()) +
                          " groups, fewer than k=" + std::to_string(k));

  FoldPlan plan;
  plan.j = j;
  plan.k = k;
  plan.seed = seed;
  plan.group_by_patient = group_by_patient;
  plan.val_fraction = val_fraction;

  for (int rep = 0; rep < j; ++rep) {
    Rng rng(rep_seed(seed, rep));
    // fold_of[class][fold] -> shuffled group list
    std::map<Label, std::vector<std::vector<std::size_t>>> dealt;
    std::size_t offset = 0;
    for (auto& [label, gs] : by_class) {
      auto shuffled = gs;
      shuffle(shuffled, rng);
      auto& folds = dealt[label];
      folds.assign(static_cast<std::size_t>(k), {});
      for (std::size_t i = 0; i < shuffled.size(); ++i) folds[(offset + i) % k].push_back(shuffled[i]);
      offset = (offset + shuffled.size()) % k;
    }

    std::vector<FoldAssignment> rep_assign;
    for (int f = 0; f < k; ++f) {
      Rng split_rng(derive_seed(fold_seed(seed, rep, f), {1}));
      std::vector<std::size_t> test, val, train;
      std::map<Label, std::vector<std::size_t>> remaining;
      for (auto& [label, folds] : dealt) {
        for (int g = 0; g < k; ++g) {
          auto& dst = g == f ? test : remaining[label];
          for (auto grp : folds[g]) {
            if (g == f)
              dst.insert(dst.end(), groups[grp].members.begin(), groups[grp].members.end());
            else
              dst.push_back(grp);
          }
        }
      }
      std::map<Label, long> n_val;
      long total_val = 0;
      for (auto& [label, rem] : remaining) {
        shuffle(rem, split_rng);
        const long n = static_cast<long>(rem.size());
        n_val[label] = std::clamp<long>(std::lround(val_fraction * static_cast<double>(n)), 0, std::max<long>(0, n - 1));
        total_val += n_val[label];
      }
      if (total_val == 0) {
        // Tiny pools: move one group from the largest class that can spare it.
        Label pick = Label::normal;
        long best = 1;
        for (auto& [label, rem] : remaining)
          if (static_cast<long>(rem.size()) > best) {
            best = static_cast<long>(rem.size());
            pick = label;
          }
        if (best > 1) n_val[pick] = 1;
      }
      for (auto& [label, rem] : remaining)
        for (std::size_t i = 0; i < rem.size(); ++i) {
          auto& dst = static_cast<long>(i) < n_val[label] ? val : train;
          dst.insert(dst.end(), groups[rem[i]].members.begin(), groups[rem[i]].members.end());
        }
      rep_assign.push_back({ids_of(manifest, train), ids_of(manifest, val), ids_of(manifest, test)});
    }
    plan.assignments.push_back(std::move(rep_assign));
  }
  return plan;
}

LeakageReport verify_no_leakage(const FoldPlan& plan, const ingest::DatasetManifest& manifest) {
  LeakageReport report;
  auto add = [&](LeakKind kind, int rep, int fold, std::string id, std::string detail) {
    report.findings.push_back({kind, rep, fold, std::move(id), std::move(detail)});
  };
  std::unordered_map<std::string, std::string> patient_of;
  std::set<std::string> all_ids;
  for (const auto& r : manifest.records) {
    patient_of[r.image_id] = r.patient_id;
    all_ids.insert(r.image_id);
  }
  if (static_cast<int>(plan.assignments.size()) != plan.j)
    add(LeakKind::shape, -1, -1, "", "plan holds " + std::to_string(plan.assignments.size()) + " repetitions, j=" +
                                         std::to_string(plan.j));

  for (int rep = 0; rep < static_cast<int>(plan.assignments.size()); ++rep) {
    const auto& folds = plan.assignments[rep];
    if (static_cast<int>(folds.size()) != plan.k)
      add(LeakKind::shape, rep, -1, "", "repetition holds " + std::to_string(folds.size()) + " folds, k=" +
                                            std::to_string(plan.k));
    std::map<std::string, int> test_owner;
    for (int f = 0; f < static_cast<int>(folds.size()); ++f) {
      const auto& a = folds[f];
      std::map<std::string, int> where;  // id -> bitmask of sets
      const std::vector<std::string>* sets[3] = {&a.train, &a.val, &a.test};
      static constexpr const char* names[3] = {"train", "val", "test"};
      for (int s = 0; s < 3; ++s)
        for (const auto& id : *sets[s]) {
          if (!all_ids.count(id)) add(LeakKind::unknown_id, rep, f, id, std::string("id in ") + names[s] + " is not in the manifest");
          int& bits = where[id];
          if (bits & (1 << s)) add(LeakKind::overlap, rep, f, id, std::string("listed twice in ") + names[s]);
          else if (bits) add(LeakKind::overlap, rep, f, id, std::string("also in ") + names[s]);
          bits |= 1 << s;
        }
      for (const auto& id : all_ids)
        if (!where.count(id)) add(LeakKind::coverage, rep, f, id, "record missing from train/val/test");
      for (const auto& id : a.test) {
        auto [it, inserted] = test_owner.emplace(id, f);
        if (!inserted) add(LeakKind::test_overlap, rep, f, id, "also tested in fold " + std::to_string(it->second));
      }
      if (plan.group_by_patient) {
        std::map<std::string, int> patient_sets;
        for (int s = 0; s < 3; ++s)
          for (const auto& id : *sets[s]) {
            auto p = patient_of.find(id);
            if (p != patient_of.end()) patient_sets[p->second] |= 1 << s;
          }
        for (const auto& [pid, bits] : patient_sets)
          if (bits & (bits - 1)) add(LeakKind::patient_overlap, rep, f, pid, "patient spans several partitions");
      }
    }
    for (const auto& id : all_ids)
      if (!test_owner.count(id)) add(LeakKind::coverage, rep, -1, id, "record never tested in this repetition");
  }
  return report;
}

fs::path checkpoint_path(const fs::path& dir, int rep, int fold) {
  return dir / ("rep" + std::to_string(rep) + "_fold" + std::to_string(fold) + ".json");
}

std::vector<FoldResult> run_cv(const ingest::DatasetManifest& manifest, const FoldPlan& plan,
                               const model::HeadConfig& head_cfg, const model::TrainConfig& train_cfg,
                               const preprocess::AugmentPolicy& policy, const CvOptions& options,
                               const preprocess::NormalizationStats& stats) {
  train_cfg.validate();
  policy.validate();
  head_cfg.validate();
  if (auto leaks = verify_no_leakage(plan, manifest); !leaks.empty())
    throw PlanningError("run_cv: plan fails leakage checks (" + std::string(to_string(leaks.findings[0].kind)) + " " +
                        leaks.findings[0].id + ")");

  std::vector<FoldResult> done;
  if (options.resume && options.results_path && fs::exists(*options.results_path))
    done = read_results(*options.results_path);
  std::set<std::pair<int, int>> completed;
  for (const auto& r : done) completed.insert({r.rep, r.fold});

  std::vector<std::pair<int, int>> tasks;
  for (int rep = 0; rep < plan.j; ++rep)
    for (int f = 0; f < plan.k; ++f)
      if (!completed.count({rep, f})) tasks.push_back({rep, f});
  if (options.max_new_folds && static_cast<int>(tasks.size()) > *options.max_new_folds)
    tasks.resize(static_cast<std::size_t>(std::max(0, *options.max_new_folds)));

  // Start from the completed folds only; this also drops a torn trailing line.
  if (options.results_path) {
    if (options.results_path->has_parent_path()) fs::create_directories(options.results_path->parent_path());
    write_results(*options.results_path, done);
  }
  if (options.checkpoint_dir) fs::create_directories(*options.checkpoint_dir);

  // Images once; evaluation-path features once: the backbone is frozen and shared by every fold.
  const model::Classifier probe = model::build_classifier(train_cfg.backbone_id, head_cfg, 0, policy.output_side, stats);
  std::unordered_map<std::string, model::LabeledImage> records;
  if (!tasks.empty())
    for (const auto& r : manifest.records) {
      model::LabeledImage li;
      li.id = r.image_id;
      li.label = r.label;
      li.image = std::make_shared<const Gray8>(ingest::load_image(manifest, r));
      li.eval_features = std::make_shared<const model::VectorF>(model::eval_features(probe, *li.image));
      records.emplace(r.image_id, std::move(li));
    }
  auto gather = [&](const std::vector<std::string>& ids) {
    std::vector<model::LabeledImage> out;
    out.reserve(ids.size());
    for (const auto& id : ids) out.push_back(records.at(id));
    return out;
  };

  std::mutex mu;
  std::vector<FoldResult> fresh;
  std::exception_ptr failure;
  std::atomic<std::size_t> next{0};

  auto worker = [&] {
    for (;;) {
      const std::size_t t = next.fetch_add(1);
      if (t >= tasks.size()) return;
      {
        std::lock_guard lock(mu);
        if (failure) return;
      }
      const auto [rep, f] = tasks[t];
      try {
        const auto& a = plan.at(rep, f);
        const std::uint64_t s = derive_seed(train_cfg.seed, {kTrainSalt, static_cast<std::uint64_t>(rep),
                                                             static_cast<std::uint64_t>(f)});
        model::Classifier clf = model::build_classifier(train_cfg.backbone_id, head_cfg, derive_seed(s, {0}),
                                                        policy.output_side, stats);
        model::freeze_backbone(clf);
        const std::uint64_t before = clf.backbone->checksum();
        model::TrainConfig cfg = train_cfg;
        cfg.seed = derive_seed(s, {1});
        const auto train = gather(a.train), val = gather(a.val), test = gather(a.test);
        model::TrainedModel tm = model::train_head(std::move(clf), train, val, cfg, policy);

        FoldResult res;
        res.rep = rep;
        res.fold = f;
        for (const auto& r : test) {
          res.test_ids.push_back(r.id);
          res.test_labels.push_back(r.label);
          res.test_probs.push_back(model::predict_from_features(tm.classifier, *r.eval_features));
        }
        for (const auto& r : val) {
          res.val_ids.push_back(r.id);
          res.val_labels.push_back(r.label);
          res.val_probs.push_back(model::predict_from_features(tm.classifier, *r.eval_features));
        }
        res.best_val_loss = tm.history.best_val_loss;
        res.epochs_run = static_cast<int>(tm.history.epochs.size());
        res.best_epoch = tm.history.best_epoch;
        res.head_checksum = hex64(tm.classifier.head.checksum());
        res.backbone_checksum_before = hex64(before);
        res.backbone_checksum_after = hex64(tm.classifier.backbone->checksum());
        if (options.checkpoint_dir) model::save_checkpoint(tm, checkpoint_path(*options.checkpoint_dir, rep, f));

        std::lock_guard lock(mu);
        if (options.results_path) append_result(*options.results_path, res);
        if (options.on_result) options.on_result(res);
        fresh.push_back(std::move(res));
      } catch (const std::exception& e) {
        std::lock_guard lock(mu);
        if (!failure)
          failure = std::make_exception_ptr(TrainingError("fold (" + std::to_string(rep) + ", " + std::to_string(f) +
                                                          "): " + e.what()));
        return;
      }
    }
  };

  const int n_workers = std::clamp(options.workers, 1, std::max(1, static_cast<int>(tasks.size())));
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int i = 0; i < n_workers; ++i) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);

  done.insert(done.end(), std::make_move_iterator(fresh.begin()), std::make_move_iterator(fresh.end()));
  std::sort(done.begin(), done.end(),
            [](const auto& a, const auto& b) { return std::tie(a.rep, a.fold) < std::tie(b.rep, b.fold); });
  if (options.results_path) write_results(*options.results_path, done);
  return done;
}

}  // namespace hydro::cv
