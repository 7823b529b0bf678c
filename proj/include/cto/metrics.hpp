#pragma once

// Evaluation metrics over hard label masks: Dice, IoU and the average
// (symmetric surface) Hausdorff distance between mask boundaries.

#include <limits>
#include <vector>

#include "cto/mask_ops.hpp"

namespace cto {

// Both-empty masks score 1.0 by convention.
double dice_metric(const LabelMask& pred, const LabelMask& gt);
double iou_metric(const LabelMask& pred, const LabelMask& gt);

// Macro average over classes 0..num_classes-1 of the per-class binary metric.
double dice_metric_multiclass(const LabelMask& pred, const LabelMask& gt, int num_classes);
double iou_metric_multiclass(const LabelMask& pred, const LabelMask& gt, int num_classes);

// Average symmetric surface distance over inner-boundary pixel sets,
// Euclidean pixel units. Returns +infinity (reported as "undefined") when
// either boundary set is empty. Implemented with an exact Euclidean distance
// transform; the quadratic all-pairs scan lives in the tests as its oracle.
double avg_hausdorff(const LabelMask& pred, const LabelMask& gt);

inline bool hausdorff_defined(double v) { return v != std::numeric_limits<double>::infinity(); }

// Exact squared Euclidean distance transform of a feature mask (distance to
// the nearest nonzero pixel), row-major h*w. Exposed for tests.
std::vector<double> squared_edt(const LabelMask& features);

} // namespace cto
