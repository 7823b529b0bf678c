#pragma once

// The training loss family: pixel cross-entropy, soft mIoU and soft Dice,
// combined with deep supervision over the decoder levels plus a weighted
// Dice term on the boundary prediction:
//
//   total = sum_{i=1..L} (CE_i + mIoU_i) + alpha * Dice(boundary)
//
// All losses operate on post-activation probabilities.

#include <string>
#include <vector>

#include "cto/cto_model.hpp"
#include "cto/ops.hpp"

namespace cto {

struct LossConfig {
    double alpha = 3.0;
    int levels = 3;
    bool multiclass = false; // selected by num_classes at the call site
};

// Smoothing constant for the soft overlap losses; keeps empty masks stable.
inline constexpr double kOverlapSmooth = 1e-6;
inline constexpr double kProbEps = 1e-7;

/// Logits -> probabilities: sigmoid for single-channel heads, channel softmax
/// otherwise.
template <typename S>
Tensor<S> seg_probs(Tape<S>* tape, const Tensor<S>& logits) {
    if (logits.shape()[1] == 1) return ops::sigmoid(tape, logits);
    const int N = logits.shape()[0], K = logits.shape()[1], H = logits.shape()[2],
              W = logits.shape()[3];
    auto nhwk = ops::permute(tape, logits, {0, 2, 3, 1});
    auto soft = ops::softmax_lastdim(tape, ops::reshape(tape, nhwk, Shape{N, H, W, K}));
    return ops::permute(tape, soft, {0, 3, 1, 2});
}

/// Mean cross-entropy. Binary inputs are single-channel probabilities with a
/// {0,1} target of the same shape; multiclass inputs are [N,K,H,W]
/// probabilities with a one-hot target. Probabilities are clamped to
/// [eps, 1-eps] first.
template <typename S>
Tensor<S> ce_loss(Tape<S>* tape, const Tensor<S>& y_hat, const Tensor<S>& y, bool multiclass) {
    if (y_hat.shape() != y.shape())
        throw ShapeError("ce_loss: prediction " + y_hat.shape().str() + " vs target " +
                         y.shape().str());
    auto p = ops::clamp(tape, y_hat, static_cast<S>(kProbEps), static_cast<S>(1.0 - kProbEps));
    if (multiclass) {
        // -mean over pixels of sum_k y*log(p); pixels = numel/K
        const double pixels =
            static_cast<double>(y.numel()) / static_cast<double>(y.shape()[1]);
        auto ll = ops::sum_all(tape, ops::mul(tape, y, ops::log(tape, p)));
        return ops::scale_by(tape, ll, static_cast<S>(-1.0 / pixels));
    }
    auto pos = ops::mul(tape, y, ops::log(tape, p));
    auto neg = ops::mul(tape, ops::one_minus(tape, y), ops::log(tape, ops::one_minus(tape, p)));
    return ops::scale_by(tape, ops::mean_all(tape, ops::add(tape, pos, neg)), S(-1));
}

/// Soft mIoU loss: 1 - sum(y*yh) / sum(y + yh - y*yh), smoothed.
template <typename S>
Tensor<S> miou_loss(Tape<S>* tape, const Tensor<S>& y_hat, const Tensor<S>& y) {
    if (y_hat.shape() != y.shape())
        throw ShapeError("miou_loss: prediction " + y_hat.shape().str() + " vs target " +
                         y.shape().str());
    auto inter = ops::sum_all(tape, ops::mul(tape, y, y_hat));
    auto both = ops::sum_all(tape, ops::add(tape, y, y_hat));
    auto uni = ops::sub(tape, both, inter);
    auto ratio = ops::divide(tape, ops::add_scalar(tape, inter, static_cast<S>(kOverlapSmooth)),
                             ops::add_scalar(tape, uni, static_cast<S>(kOverlapSmooth)));
    return ops::one_minus(tape, ratio);
}

/// Soft Dice loss: 1 - 2*sum(y*yh) / sum(y + yh), smoothed.
template <typename S>
Tensor<S> dice_loss(Tape<S>* tape, const Tensor<S>& y_hat, const Tensor<S>& y) {
    if (y_hat.shape() != y.shape())
        throw ShapeError("dice_loss: prediction " + y_hat.shape().str() + " vs target " +
                         y.shape().str());
    auto inter = ops::sum_all(tape, ops::mul(tape, y, y_hat));
    auto both = ops::sum_all(tape, ops::add(tape, y, y_hat));
    auto ratio = ops::divide(
        tape,
        ops::add_scalar(tape, ops::scale_by(tape, inter, S(2)), static_cast<S>(kOverlapSmooth)),
        ops::add_scalar(tape, both, static_cast<S>(kOverlapSmooth)));
    return ops::one_minus(tape, ratio);
}

template <typename S>
struct LossBreakdown {
    Tensor<S> total;
    double total_value = 0;
    std::vector<double> ce_levels;   // one per decoder level
    std::vector<double> miou_levels; // one per decoder level
    double boundary_dice = 0;        // pre-weighting
    bool has_boundary = false;
};

/// Deep-supervised total loss. y_seg matches the head outputs ({0,1} mask for
/// the sigmoid regime, one-hot for softmax); y_bnd is the ground-truth
/// boundary map already downsampled to the boundary head's resolution.
/// Variants without a boundary branch simply omit the boundary term.
template <typename S>
LossBreakdown<S> total_loss(Tape<S>* tape, const ModelOutputs<S>& outputs,
                            const Tensor<S>& y_seg, const Tensor<S>& y_bnd,
                            const LossConfig& cfg) {
    if (static_cast<int>(outputs.seg_logits.size()) != cfg.levels)
        throw ShapeError("total_loss: expected " + std::to_string(cfg.levels) +
                         " supervision levels, got " + std::to_string(outputs.seg_logits.size()));
    LossBreakdown<S> bd;
    Tensor<S> acc;
    for (int i = 0; i < cfg.levels; ++i) {
        auto probs = seg_probs(tape, outputs.seg_logits[static_cast<size_t>(i)]);
        auto ce = ce_loss(tape, probs, y_seg, cfg.multiclass);
        auto mi = miou_loss(tape, probs, y_seg);
        bd.ce_levels.push_back(static_cast<double>(ce.item()));
        bd.miou_levels.push_back(static_cast<double>(mi.item()));
        auto level = ops::add(tape, ce, mi);
        acc = acc.defined() ? ops::add(tape, acc, level) : level;
    }
    if (outputs.boundary_logits.defined()) {
        if (!y_bnd.defined())
            throw ShapeError("total_loss: boundary target missing for a boundary-headed model");
        auto bprob = ops::sigmoid(tape, outputs.boundary_logits);
        auto bdice = dice_loss(tape, bprob, y_bnd);
        bd.boundary_dice = static_cast<double>(bdice.item());
        bd.has_boundary = true;
        acc = ops::add(tape, acc, ops::scale_by(tape, bdice, static_cast<S>(cfg.alpha)));
    }
    bd.total = acc;
    bd.total_value = static_cast<double>(acc.item());
    return bd;
}

} // namespace cto
