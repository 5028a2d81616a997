#pragma once

#include <cstdint>
#include <stdexcept>

#include "vesselforge/volume.hpp"

namespace vesselforge {

struct ConfusionCounts {
  uint64_t tp = 0, fp = 0, fn = 0, tn = 0;

  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
};

inline ConfusionCounts confusion(const BinaryMask& pred, const BinaryMask& gt) {
  detail::require_same_dims(pred.dims, gt.dims, "confusion");
  ConfusionCounts c;
  for (size_t i = 0; i < pred.bits.size(); ++i) {
    const bool p = pred.bits[i] != 0;
    const bool g = gt.bits[i] != 0;
    if (p && g)
      ++c.tp;
    else if (p && !g)
      ++c.fp;
    else if (!p && g)
      ++c.fn;
    else
      ++c.tn;
  }
  return c;
}

// Standard Dice denominator 2TP+FP+FN (equivalently 2*IoU/(1+IoU)); variants
// that divide by TP+FP+P collapse to precision and are deliberately not used.
// Both-empty comparisons count as perfect agreement for dsc/iou.
inline double dsc(const ConfusionCounts& c) {
  const uint64_t denom = 2 * c.tp + c.fp + c.fn;
  if (denom == 0) return 1.0;
  return static_cast<double>(2 * c.tp) / static_cast<double>(denom);
}

inline double iou(const ConfusionCounts& c) {
  const uint64_t denom = c.tp + c.fp + c.fn;
  if (denom == 0) return 1.0;
  return static_cast<double>(c.tp) / static_cast<double>(denom);
}

inline double sensitivity(const ConfusionCounts& c) {
  const uint64_t denom = c.tp + c.fn;
  if (denom == 0) throw std::domain_error("sensitivity undefined: ground truth has no foreground");
  return static_cast<double>(c.tp) / static_cast<double>(denom);
}

inline double precision(const ConfusionCounts& c) {
  const uint64_t denom = c.tp + c.fp;
  if (denom == 0) throw std::domain_error("precision undefined: prediction has no foreground");
  return static_cast<double>(c.tp) / static_cast<double>(denom);
}

inline double dsc(const BinaryMask& pred, const BinaryMask& gt) { return dsc(confusion(pred, gt)); }
inline double iou(const BinaryMask& pred, const BinaryMask& gt) { return iou(confusion(pred, gt)); }
inline double sensitivity(const BinaryMask& pred, const BinaryMask& gt) { return sensitivity(confusion(pred, gt)); }
inline double precision(const BinaryMask& pred, const BinaryMask& gt) { return precision(confusion(pred, gt)); }

}  // namespace vesselforge
