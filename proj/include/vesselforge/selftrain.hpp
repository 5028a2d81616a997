#pragma once

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "vesselforge/augment.hpp"
#include "vesselforge/common.hpp"
#include "vesselforge/features.hpp"
#include "vesselforge/metrics.hpp"
#include "vesselforge/model.hpp"
#include "vesselforge/volume.hpp"

namespace vesselforge {

// ----------------------------------------------------------------- scoring

// Sum of IoU agreements between each earlier mask and the last mask; K-1 when
// every checkpoint agrees, 0 when all earlier masks are disjoint from the last.
inline double stability_score(const std::vector<BinaryMask>& masks) {
  if (masks.size() < 2) throw std::invalid_argument("stability_score: need at least 2 checkpoint masks");
  const BinaryMask& reference = masks.back();
  double s = 0.0;
  for (size_t j = 0; j + 1 < masks.size(); ++j) s += iou(masks[j], reference);
  return s;
}

enum class AgreementMetric { Precision, Dice };

inline double mean_agreement(const std::vector<BinaryMask>& masks, const BinaryMask& reference,
                             AgreementMetric metric) {
  if (masks.empty()) throw std::invalid_argument("mean_agreement: no masks");
  double acc = 0.0;
  for (const auto& m : masks) {
    const ConfusionCounts c = confusion(m, reference);
    acc += metric == AgreementMetric::Precision ? precision(c) : dsc(c);
  }
  return acc / static_cast<double>(masks.size());
}

// ------------------------------------------------------------ candidate pool

struct PseudoLabelCandidate {
  std::string scan_id;
  std::vector<BinaryMask> checkpoint_masks;  // one per checkpoint, last = stability reference
  BinaryMask pseudo_label;                   // best-checkpoint prediction
  double stability = 0.0;
  double mean_precision = 0.0;
  double mean_dice = 0.0;
};

namespace detail {

// Agreement with explicit degenerate conventions so early useless checkpoints
// (all-empty predictions) score 0 instead of erroring: empty vs empty counts
// as full agreement, one-sided empty as none.
inline double guarded_agreement(const ConfusionCounts& c, AgreementMetric metric) {
  if (metric == AgreementMetric::Precision) {
    if (c.tp + c.fp == 0) return (c.fn == 0) ? 1.0 : 0.0;
    return precision(c);
  }
  return dsc(c);  // dsc already defines empty/empty = 1, one-sided empty = 0
}

}  // namespace detail

struct UnlabeledScan {
  std::string id;
  const FeatureVolume* features = nullptr;
};

// Predicts every unlabeled scan with every checkpoint, scores checkpoint
// agreement, and nominates the best-checkpoint mask as the pseudo label.
inline std::vector<PseudoLabelCandidate> generate_candidates(const std::vector<Checkpoint>& checkpoints,
                                                             const Checkpoint& best,
                                                             const std::vector<UnlabeledScan>& unlabeled,
                                                             double binarize_threshold = 0.5) {
  if (checkpoints.size() < 2) throw std::invalid_argument("generate_candidates: need at least 2 checkpoints");
  std::vector<PseudoLabelCandidate> out;
  out.reserve(unlabeled.size());
  for (const auto& scan : unlabeled) {
    PseudoLabelCandidate cand;
    cand.scan_id = scan.id;
    cand.checkpoint_masks.reserve(checkpoints.size());
    for (const auto& ck : checkpoints) {
      cand.checkpoint_masks.push_back(binarize(predict_probs(ck.params, *scan.features), binarize_threshold));
    }
    cand.pseudo_label = binarize(predict_probs(best.params, *scan.features), binarize_threshold);
    cand.stability = stability_score(cand.checkpoint_masks);
    double prec = 0.0, dice = 0.0;
    for (const auto& m : cand.checkpoint_masks) {
      const ConfusionCounts c = confusion(m, cand.pseudo_label);
      prec += detail::guarded_agreement(c, AgreementMetric::Precision);
      dice += detail::guarded_agreement(c, AgreementMetric::Dice);
    }
    cand.mean_precision = prec / static_cast<double>(cand.checkpoint_masks.size());
    cand.mean_dice = dice / static_cast<double>(cand.checkpoint_masks.size());
    out.push_back(std::move(cand));
  }
  return out;
}

// ---------------------------------------------------------------- selection

struct SelectionRule {
  double min_mean_precision = 0.9;  // strict >
  double min_mean_dice = 0.0;       // strict >; 0 disables in practice
  size_t cap = 40;

  void validate() const {
    if (!(min_mean_precision >= 0.0 && min_mean_precision <= 1.0) ||
        !(min_mean_dice >= 0.0 && min_mean_dice <= 1.0))
      throw std::invalid_argument("SelectionRule: thresholds must lie in [0,1]");
  }
};

struct SelectionPolicy {
  std::vector<SelectionRule> iterations{{0.9, 0.0, 40}, {0.95, 0.85, 40}};
};

struct Selection {
  std::vector<std::string> selected;   // ranked by stability desc, id asc
  std::vector<std::string> remainder;  // everything else, id order of input
};

inline Selection select_reliable(const std::vector<PseudoLabelCandidate>& candidates, const SelectionPolicy& policy,
                                 size_t iteration) {
  if (iteration >= policy.iterations.size()) throw std::invalid_argument("select_reliable: iteration out of range");
  const SelectionRule& rule = policy.iterations[iteration];
  rule.validate();

  std::vector<const PseudoLabelCandidate*> pass;
  for (const auto& c : candidates) {
    if (c.mean_precision > rule.min_mean_precision && c.mean_dice > rule.min_mean_dice) pass.push_back(&c);
  }
  std::sort(pass.begin(), pass.end(), [](const PseudoLabelCandidate* a, const PseudoLabelCandidate* b) {
    if (a->stability != b->stability) return a->stability > b->stability;
    return a->scan_id < b->scan_id;
  });
  if (pass.size() > rule.cap) pass.resize(rule.cap);

  Selection sel;
  for (const auto* c : pass) sel.selected.push_back(c->scan_id);
  std::vector<std::string> chosen = sel.selected;
  std::sort(chosen.begin(), chosen.end());
  for (const auto& c : candidates) {
    if (!std::binary_search(chosen.begin(), chosen.end(), c.scan_id)) sel.remainder.push_back(c.scan_id);
  }
  return sel;
}

// ------------------------------------------------------------------ pipeline

struct Scan {
  std::string id;
  VolumeGrid grid;
  BinaryMask mask;  // empty (dims 0) for unlabeled scans
};

struct Dataset {
  std::vector<Scan> labeled;
  std::vector<Scan> validation;
  std::vector<Scan> test;
  std::vector<Scan> unlabeled;
};

struct SelfTrainConfig {
  TrainConfig train;
  FeatureConfig features;
  AugmentationSpec augment;
  SelectionPolicy policy;
  size_t stability_k = 5;  // checkpoints entering the stability score (last K)
  double binarize_threshold = 0.5;
  uint64_t seed = 0;

  void validate() const {
    train.validate();
    augment.validate();
    for (const auto& r : policy.iterations) r.validate();
    if (stability_k < 2) throw std::invalid_argument("SelfTrainConfig: stability_k must be >= 2");
    if (!(binarize_threshold > 0.0 && binarize_threshold < 1.0))
      throw std::invalid_argument("SelfTrainConfig: binarize_threshold must be in (0,1)");
  }
};

struct StageMetrics {
  double dsc = 0.0, iou = 0.0, sensitivity = 0.0, precision = 0.0;
};

struct ScanMetrics {
  std::string scan_id;
  double dsc = 0.0, iou = 0.0, sensitivity = 0.0, precision = 0.0;
};

struct StageReport {
  std::string stage;
  std::vector<std::string> selected_ids;
  std::vector<std::string> remainder_ids;
  // score distribution over this stage's candidate pool (empty when no selection ran)
  std::vector<double> stability_scores;
  std::vector<double> mean_precisions;
  std::vector<double> mean_dices;
  StageMetrics test_metrics;                // pooled confusion over the test set
  std::vector<ScanMetrics> per_scan_metrics;
};

struct PipelineReport {
  std::vector<StageReport> stages;
};

struct PipelineResult {
  VoxelClassifier final_model;
  FeaturePipeline features;
  PipelineReport report;
};

namespace detail {

struct MaterializedScan {
  std::string id;
  FeatureVolume features;
  BinaryMask labels;
};

// Pooled (micro-averaged) metrics over the test split; degenerate denominators
// surface as 0 rather than errors so empty-prediction stages stay reportable.
inline void evaluate_stage(const VoxelClassifier& model, const FeaturePipeline& features,
                           const std::vector<Scan>& test, double threshold, StageReport& report) {
  ConfusionCounts pooled;
  for (const auto& scan : test) {
    const BinaryMask pred = binarize(predict_probs(model, features.transform(scan.grid)), threshold);
    const ConfusionCounts c = confusion(pred, scan.mask);
    pooled += c;
    ScanMetrics m;
    m.scan_id = scan.id;
    m.dsc = dsc(c);
    m.iou = iou(c);
    m.sensitivity = (c.tp + c.fn) ? sensitivity(c) : 0.0;
    m.precision = (c.tp + c.fp) ? precision(c) : 0.0;
    report.per_scan_metrics.push_back(m);
  }
  report.test_metrics.dsc = dsc(pooled);
  report.test_metrics.iou = iou(pooled);
  report.test_metrics.sensitivity = (pooled.tp + pooled.fn) ? sensitivity(pooled) : 0.0;
  report.test_metrics.precision = (pooled.tp + pooled.fp) ? precision(pooled) : 0.0;
}

}  // namespace detail

// Orchestrates the full self-training loop:
//   baseline teacher on labeled data -> per-iteration candidate scoring and
//   reliable-subset selection -> student retrained from scratch on labeled +
//   selected pseudo-labeled scans -> final model retrained on everything,
//   with the last student labeling whatever was never selected.
// Labeled scans train under weak augmentation; pseudo-labeled scans under
// strong-after-weak. All randomness derives from config.seed, so stage
// results match running the stages individually with the same seeds.
inline PipelineResult run_pipeline(const Dataset& data, const SelfTrainConfig& cfg) {
  cfg.validate();
  if (data.labeled.empty()) throw std::invalid_argument("run_pipeline: empty labeled set");
  if (data.validation.empty()) throw std::invalid_argument("run_pipeline: empty validation set");
  if (data.test.empty()) throw std::invalid_argument("run_pipeline: empty test set");

  PipelineResult result;

  std::vector<const VolumeGrid*> grids;
  for (const auto& s : data.labeled) grids.push_back(&s.grid);
  result.features = FeaturePipeline::fit(grids, cfg.features, derive_seed(cfg.seed, "features"));
  const FeaturePipeline& features = result.features;

  std::vector<detail::MaterializedScan> val_scans;
  for (const auto& s : data.validation) val_scans.push_back({s.id, features.transform(s.grid), s.mask});
  const auto val_views = [&] {
    std::vector<TrainScan> v;
    for (const auto& s : val_scans) v.push_back({&s.features, &s.labels});
    return v;
  }();

  // Pseudo labels accumulated across iterations, keyed by scan id.
  struct PseudoScan {
    const Scan* scan = nullptr;
    BinaryMask label;
  };
  std::vector<PseudoScan> accepted;  // D_u1 so far, in selection order
  std::vector<size_t> remainder;     // indices into data.unlabeled
  for (size_t i = 0; i < data.unlabeled.size(); ++i) remainder.push_back(i);

  const auto find_unlabeled = [&](const std::string& id) -> const Scan* {
    for (const auto& s : data.unlabeled)
      if (s.id == id) return &s;
    throw std::logic_error("run_pipeline: unknown scan id " + id);
  };

  // Trains one stage from scratch on labeled + currently accepted pseudo
  // scans, augmenting each scan once with stage- and scan-derived seeds.
  const auto train_stage = [&](size_t stage_index, const std::vector<PseudoScan>& pseudo) {
    std::vector<detail::MaterializedScan> scans;
    scans.reserve(data.labeled.size() + pseudo.size());
    for (size_t i = 0; i < data.labeled.size(); ++i) {
      const Scan& s = data.labeled[i];
      const uint64_t dseed = derive_seed(cfg.seed, "augment-labeled", stage_index, i);
      auto [g, m] = apply_weak(s.grid, s.mask, cfg.augment, dseed);
      scans.push_back({s.id, features.transform(g), std::move(m)});
    }
    for (size_t i = 0; i < pseudo.size(); ++i) {
      const uint64_t dseed = derive_seed(cfg.seed, "augment-pseudo", stage_index, i);
      auto [g1, m1] = apply_weak(pseudo[i].scan->grid, pseudo[i].label, cfg.augment, dseed);
      auto [g2, m2] = apply_strong(g1, m1, cfg.augment, dseed);
      scans.push_back({pseudo[i].scan->id, features.transform(g2), std::move(m2)});
    }
    std::vector<TrainScan> views;
    for (const auto& s : scans) views.push_back({&s.features, &s.labels});
    TrainConfig tc = cfg.train;
    tc.seed = derive_seed(cfg.seed, "train", stage_index);
    return train(views, val_views, tc);
  };

  // Stage 0: fully supervised baseline teacher.
  TrainResult current = train_stage(0, {});
  {
    StageReport rep;
    rep.stage = "baseline";
    detail::evaluate_stage(current.best().params, features, data.test, cfg.binarize_threshold, rep);
    result.report.stages.push_back(std::move(rep));
  }

  const size_t n_iterations = cfg.policy.iterations.size();
  for (size_t it = 0; it < n_iterations; ++it) {
    StageReport rep;
    rep.stage = "iteration-" + std::to_string(it + 1);

    if (!remainder.empty()) {
      // Last K checkpoints feed the stability score; the best checkpoint of
      // the whole run provides the pseudo label.
      const auto& cks = current.checkpoints;
      const size_t k = std::min(cfg.stability_k, cks.size());
      std::vector<Checkpoint> window(cks.end() - static_cast<ptrdiff_t>(k), cks.end());

      std::vector<detail::MaterializedScan> cand_feats;
      cand_feats.reserve(remainder.size());
      std::vector<UnlabeledScan> views;
      for (const size_t idx : remainder) {
        const Scan& s = data.unlabeled[idx];
        cand_feats.push_back({s.id, features.transform(s.grid), BinaryMask{}});
        views.push_back({s.id, &cand_feats.back().features});
      }
      std::vector<PseudoLabelCandidate> candidates =
          window.size() >= 2 ? generate_candidates(window, current.best(), views, cfg.binarize_threshold)
                             : std::vector<PseudoLabelCandidate>{};

      for (const auto& c : candidates) {
        rep.stability_scores.push_back(c.stability);
        rep.mean_precisions.push_back(c.mean_precision);
        rep.mean_dices.push_back(c.mean_dice);
      }
      const Selection sel = select_reliable(candidates, cfg.policy, it);
      rep.selected_ids = sel.selected;
      rep.remainder_ids = sel.remainder;

      std::vector<size_t> new_remainder;
      for (const auto& id : sel.selected) {
        for (auto& c : candidates) {
          if (c.scan_id == id) {
            accepted.push_back({find_unlabeled(id), std::move(c.pseudo_label)});
            break;
          }
        }
      }
      for (const size_t idx : remainder) {
        const std::string& id = data.unlabeled[idx].id;
        if (std::find(sel.selected.begin(), sel.selected.end(), id) == sel.selected.end())
          new_remainder.push_back(idx);
      }
      remainder = std::move(new_remainder);
    }

    current = train_stage(1 + it, accepted);
    detail::evaluate_stage(current.best().params, features, data.test, cfg.binarize_threshold, rep);
    result.report.stages.push_back(std::move(rep));
  }

  // Final model: the last student labels everything never selected, then a
  // fresh model trains on labeled + selected + remainder together.
  {
    StageReport rep;
    rep.stage = "final";
    std::vector<PseudoScan> everything = std::move(accepted);
    for (const size_t idx : remainder) {
      const Scan& s = data.unlabeled[idx];
      const BinaryMask label =
          binarize(predict_probs(current.best().params, features.transform(s.grid)), cfg.binarize_threshold);
      everything.push_back({&s, label});
      rep.remainder_ids.push_back(s.id);
    }
    current = train_stage(1 + n_iterations, everything);
    detail::evaluate_stage(current.best().params, features, data.test, cfg.binarize_threshold, rep);
    result.report.stages.push_back(std::move(rep));
  }

  result.final_model = current.best().params;
  return result;
}

// -------------------------------------------------------- JSON serialization

inline nlohmann::json stage_report_to_json(const StageReport& r) {
  nlohmann::json per_scan = nlohmann::json::array();
  for (const auto& m : r.per_scan_metrics) {
    per_scan.push_back({{"scan_id", m.scan_id},
                        {"dsc", m.dsc},
                        {"iou", m.iou},
                        {"sensitivity", m.sensitivity},
                        {"precision", m.precision}});
  }
  return {{"stage", r.stage},
          {"selected", r.selected_ids},
          {"remainder", r.remainder_ids},
          {"stability_scores", r.stability_scores},
          {"mean_precisions", r.mean_precisions},
          {"mean_dices", r.mean_dices},
          {"test_metrics",
           {{"dsc", r.test_metrics.dsc},
            {"iou", r.test_metrics.iou},
            {"sensitivity", r.test_metrics.sensitivity},
            {"precision", r.test_metrics.precision}}},
          {"per_scan_metrics", per_scan}};
}

inline nlohmann::json pipeline_report_to_json(const PipelineReport& report) {
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& s : report.stages) stages.push_back(stage_report_to_json(s));
  return {{"stages", stages}};
}

}  // namespace vesselforge
