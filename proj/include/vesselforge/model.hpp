#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "vesselforge/common.hpp"
#include "vesselforge/features.hpp"
#include "vesselforge/metrics.hpp"
#include "vesselforge/volume.hpp"

namespace vesselforge {

// -------------------------------------------------------------------- types

struct VoxelClassifier {
  std::vector<double> w;
  double b = 0.0;

  VoxelClassifier() = default;
  explicit VoxelClassifier(size_t F) : w(F, 0.0) {}

  size_t feature_count() const { return w.size(); }
};

struct TrainConfig {
  double learning_rate = 0.01;
  double momentum = 0.99;
  double weight_decay = 3e-5;
  int epochs = 1000;
  size_t batch_size = 256;
  double hra_threshold = 0.1;
  int checkpoint_every = 100;
  uint64_t seed = 0;

  void validate() const {
    if (!(learning_rate > 0.0)) throw std::invalid_argument("TrainConfig: learning_rate must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("TrainConfig: momentum must be in [0,1)");
    if (!(weight_decay >= 0.0)) throw std::invalid_argument("TrainConfig: weight_decay must be >= 0");
    if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (!(hra_threshold >= 0.0 && hra_threshold < 1.0))
      throw std::invalid_argument("TrainConfig: hra_threshold must be in [0,1)");
    if (checkpoint_every < 1) throw std::invalid_argument("TrainConfig: checkpoint_every must be >= 1");
    if (epochs < checkpoint_every)
      throw std::invalid_argument("TrainConfig: epochs < checkpoint_every would save no checkpoints");
  }
};

struct Checkpoint {
  int epoch = 0;
  VoxelClassifier params;
  double val_dice = 0.0;
};

struct ProbabilityVolume {
  Dims dims;
  Spacing spacing;
  std::vector<float> probs;

  ProbabilityVolume() = default;
  ProbabilityVolume(Dims d, Spacing s, float fill = 0.0f) : dims(d), spacing(s), probs(d.total(), fill) {}
};

// ---------------------------------------------------------------- inference

namespace detail {

inline double sigmoid(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

constexpr double kProbClamp = 1e-7;

inline double clamp_prob(double p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }

inline double dot_features(const VoxelClassifier& m, const FeatureVolume& fv, size_t voxel) {
  const float* f = fv.values.data() + voxel * fv.F;
  double t = m.b;
  for (size_t c = 0; c < fv.F; ++c) t += m.w[c] * static_cast<double>(f[c]);
  return t;
}

}  // namespace detail

inline ProbabilityVolume predict_probs(const VoxelClassifier& model, const FeatureVolume& features) {
  if (model.feature_count() != features.F) throw std::invalid_argument("predict_probs: feature count mismatch");
  ProbabilityVolume out(features.dims, features.spacing);
  const size_t n = features.dims.total();
  for (size_t v = 0; v < n; ++v) out.probs[v] = static_cast<float>(detail::sigmoid(detail::dot_features(model, features, v)));
  return out;
}

inline BinaryMask binarize(const ProbabilityVolume& probs, double threshold = 0.5) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw std::invalid_argument("binarize: threshold must be in (0,1)");
  BinaryMask mask(probs.dims, probs.spacing);
  for (size_t i = 0; i < probs.probs.size(); ++i) mask.bits[i] = probs.probs[i] > threshold ? 1 : 0;
  return mask;
}

// ------------------------------------------------------------------- loss
//
// Cross-entropy restricted to "hard" voxels where |y - p| exceeds the gate
// threshold, normalized by the number of gated-in voxels.

struct HraLoss {
  double loss = 0.0;
  BinaryMask selected;
  size_t selected_count = 0;
};

inline HraLoss hra_ce_loss(const ProbabilityVolume& probs, const BinaryMask& labels, double T) {
  detail::require_same_dims(probs.dims, labels.dims, "hra_ce_loss");
  if (!(T >= 0.0 && T < 1.0)) throw std::invalid_argument("hra_ce_loss: T must be in [0,1)");
  HraLoss out;
  out.selected = BinaryMask(labels.dims, labels.spacing);
  double acc = 0.0;
  for (size_t i = 0; i < probs.probs.size(); ++i) {
    const double y = labels.bits[i] ? 1.0 : 0.0;
    const double p = probs.probs[i];
    if (!(std::abs(y - p) > T)) continue;
    out.selected.bits[i] = 1;
    ++out.selected_count;
    const double pc = detail::clamp_prob(p);
    acc -= y * std::log(pc) + (1.0 - y) * std::log(1.0 - pc);
  }
  out.loss = acc / static_cast<double>(std::max<size_t>(out.selected_count, 1));
  return out;
}

// Gradient of the gated mean cross-entropy over the given voxel subset, with
// the gate held fixed at the current prediction.
struct ParamGradient {
  std::vector<double> dw;
  double db = 0.0;
  size_t selected_count = 0;
  double loss = 0.0;  // the gated mean CE over the same subset
};

inline ParamGradient hra_ce_gradient(const VoxelClassifier& model, const FeatureVolume& features,
                                     const BinaryMask& labels, double T, const std::vector<size_t>& voxel_subset) {
  if (model.feature_count() != features.F) throw std::invalid_argument("hra_ce_gradient: feature count mismatch");
  detail::require_same_dims(features.dims, labels.dims, "hra_ce_gradient");
  if (!(T >= 0.0 && T < 1.0)) throw std::invalid_argument("hra_ce_gradient: T must be in [0,1)");
  ParamGradient g;
  g.dw.assign(features.F, 0.0);
  double loss_acc = 0.0;
  for (const size_t v : voxel_subset) {
    const double y = labels.bits[v] ? 1.0 : 0.0;
    const double p = detail::sigmoid(detail::dot_features(model, features, v));
    if (!(std::abs(y - p) > T)) continue;
    ++g.selected_count;
    const double r = p - y;
    const float* f = features.values.data() + v * features.F;
    for (size_t c = 0; c < features.F; ++c) g.dw[c] += r * static_cast<double>(f[c]);
    g.db += r;
    const double pc = detail::clamp_prob(p);
    loss_acc -= y * std::log(pc) + (1.0 - y) * std::log(1.0 - pc);
  }
  const double denom = static_cast<double>(std::max<size_t>(g.selected_count, 1));
  for (auto& d : g.dw) d /= denom;
  g.db /= denom;
  g.loss = loss_acc / denom;
  return g;
}

// ---------------------------------------------------------------- training

struct TrainScan {
  const FeatureVolume* features = nullptr;
  const BinaryMask* labels = nullptr;
};

struct TrainResult {
  std::vector<Checkpoint> checkpoints;
  size_t best_index = 0;

  const Checkpoint& best() const { return checkpoints[best_index]; }
};

inline double mean_validation_dice(const VoxelClassifier& model, const std::vector<TrainScan>& val_scans,
                                   double threshold = 0.5) {
  double acc = 0.0;
  for (const auto& scan : val_scans) {
    acc += dsc(binarize(predict_probs(model, *scan.features), threshold), *scan.labels);
  }
  return acc / static_cast<double>(val_scans.size());
}

namespace detail {

struct ScanSampler {
  std::vector<size_t> fg, bg;

  explicit ScanSampler(const BinaryMask& labels) {
    for (size_t i = 0; i < labels.bits.size(); ++i) (labels.bits[i] ? fg : bg).push_back(i);
  }

  // Balanced draw with replacement; degenerates gracefully when one class is
  // absent from the scan.
  void draw(Rng& rng, size_t batch, std::vector<size_t>& out) const {
    out.clear();
    const size_t half = batch / 2;
    const size_t n_fg = fg.empty() ? 0 : (bg.empty() ? batch : half);
    const size_t n_bg = batch - n_fg;
    for (size_t i = 0; i < n_fg; ++i) out.push_back(fg[rng.uniform_int(fg.size())]);
    for (size_t i = 0; i < n_bg; ++i) out.push_back(bg[rng.uniform_int(bg.size())]);
  }
};

}  // namespace detail

// SGD with classical momentum and L2 decay on the weights (not the bias).
// Each epoch takes one balanced-minibatch step per training scan, in order;
// a checkpoint is recorded every checkpoint_every epochs with its validation
// Dice, and `best` is the highest-Dice checkpoint (earliest on ties).
inline TrainResult train(const std::vector<TrainScan>& train_scans, const std::vector<TrainScan>& val_scans,
                         const TrainConfig& cfg) {
  cfg.validate();
  if (train_scans.empty()) throw std::invalid_argument("train: empty training set");
  if (val_scans.empty()) throw std::invalid_argument("train: empty validation set");
  const size_t F = train_scans[0].features->F;
  for (const auto& s : train_scans)
    if (s.features->F != F) throw std::invalid_argument("train: inconsistent feature counts");
  for (const auto& s : val_scans)
    if (s.features->F != F) throw std::invalid_argument("train: inconsistent feature counts");

  std::vector<detail::ScanSampler> samplers;
  samplers.reserve(train_scans.size());
  for (const auto& s : train_scans) samplers.emplace_back(*s.labels);

  VoxelClassifier model(F);
  std::vector<double> vel_w(F, 0.0);
  double vel_b = 0.0;
  Rng rng(cfg.seed);
  std::vector<size_t> batch;

  TrainResult result;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (size_t si = 0; si < train_scans.size(); ++si) {
      samplers[si].draw(rng, cfg.batch_size, batch);
      const ParamGradient g =
          hra_ce_gradient(model, *train_scans[si].features, *train_scans[si].labels, cfg.hra_threshold, batch);
      if (!std::isfinite(g.loss))
        throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch));
      for (size_t c = 0; c < F; ++c) {
        vel_w[c] = cfg.momentum * vel_w[c] - cfg.learning_rate * (g.dw[c] + cfg.weight_decay * model.w[c]);
        model.w[c] += vel_w[c];
      }
      vel_b = cfg.momentum * vel_b - cfg.learning_rate * g.db;
      model.b += vel_b;
    }
    if (epoch % cfg.checkpoint_every == 0) {
      Checkpoint ck;
      ck.epoch = epoch;
      ck.params = model;
      ck.val_dice = mean_validation_dice(model, val_scans);
      result.checkpoints.push_back(std::move(ck));
    }
  }
  result.best_index = 0;
  for (size_t i = 1; i < result.checkpoints.size(); ++i) {
    if (result.checkpoints[i].val_dice > result.checkpoints[result.best_index].val_dice) result.best_index = i;
  }
  return result;
}

// -------------------------------------------------------- JSON serialization

inline nlohmann::json checkpoint_to_json(const Checkpoint& ck) {
  return {{"epoch", ck.epoch}, {"w", ck.params.w}, {"b", ck.params.b}, {"val_dice", ck.val_dice}};
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  Checkpoint ck;
  ck.epoch = j.at("epoch").get<int>();
  ck.params.w = j.at("w").get<std::vector<double>>();
  ck.params.b = j.at("b").get<double>();
  ck.val_dice = j.at("val_dice").get<double>();
  return ck;
}

}  // namespace vesselforge
